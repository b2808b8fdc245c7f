"""nefkit: build, validate, scale, and evaluate query-to-API-call corpora for NEF services.

The toolkit covers the full loop: flatten an OpenAPI spec into a
self-contained document, generate seed query/call records with an LLM,
validate them mechanically against the spec, scale each seed into many
request phrasings, split and export Instruct/Output training files, and
evaluate any responder with a dual-metric iterated protocol. A mock NEF
server and a deterministic execution agent close the loop end to end.
"""

__version__ = "0.1.0"

from nefkit.errors import NefkitError

__all__ = ["NefkitError", "__version__"]
