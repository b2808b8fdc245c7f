"""Fine-tuning bridge behind the shared file contracts.

Consumes a train CSV (``instruct,output``) and a ``tuning-config.json``,
runs parameter-efficient supervised fine-tuning of a small causal
language model with low-rank adapters, and writes ``training-stats.json``
plus an adapter directory. The tuned model is servable as an HTTP
responder speaking ``POST /answer``.
"""

__version__ = "0.1.0"


class BridgeError(Exception):
    """Raised for config, dataset, or training failures."""
