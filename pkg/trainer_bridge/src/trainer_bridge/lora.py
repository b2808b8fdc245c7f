"""Minimal low-rank adapter injection for torch models.

Wraps every ``nn.Linear`` whose qualified name ends with a configured
target module name: the frozen base projection plus a trainable
``B @ A`` bypass scaled by alpha / rank. B starts at zero so training
begins exactly at the base model.
"""

from __future__ import annotations

import math
from typing import Iterable

import torch
from torch import nn

from trainer_bridge import BridgeError


class LoraLinear(nn.Module):
    def __init__(self, base: nn.Linear, rank: int, alpha: int, dropout: float):
        super().__init__()
        self.base = base
        self.rank = rank
        self.scaling = alpha / rank
        self.dropout = nn.Dropout(p=dropout)
        self.lora_a = nn.Linear(base.in_features, rank, bias=False)
        self.lora_b = nn.Linear(rank, base.out_features, bias=False)
        nn.init.kaiming_uniform_(self.lora_a.weight, a=math.sqrt(5))
        nn.init.zeros_(self.lora_b.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.base(x) + self.scaling * self.lora_b(self.lora_a(self.dropout(x)))


def inject_adapters(
    model: nn.Module,
    target_modules: Iterable[str],
    rank: int,
    alpha: int,
    dropout: float,
    bias_mode: str = "none",
) -> list[str]:
    """Freeze the model and wrap the targeted linears; returns wrapped names."""
    targets = tuple(target_modules)
    for param in model.parameters():
        param.requires_grad_(False)

    wrapped: list[str] = []
    for name, module in list(model.named_modules()):
        leaf = name.rsplit(".", 1)[-1]
        if leaf not in targets or not isinstance(module, nn.Linear):
            continue
        parent_name = name.rsplit(".", 1)[0] if "." in name else ""
        parent = model.get_submodule(parent_name) if parent_name else model
        setattr(parent, leaf, LoraLinear(module, rank=rank, alpha=alpha, dropout=dropout))
        wrapped.append(name)
    if not wrapped:
        raise BridgeError(
            f"no modules matched target_modules {list(targets)}; "
            "the base model does not expose those projection names"
        )

    if bias_mode == "all":
        for name, param in model.named_parameters():
            if name.endswith(".bias"):
                param.requires_grad_(True)
    elif bias_mode == "lora-only":
        for name, param in model.named_parameters():
            if ".lora_" in name and name.endswith(".bias"):
                param.requires_grad_(True)
    elif bias_mode != "none":
        raise BridgeError(f"unknown bias mode {bias_mode!r}")
    return wrapped


def adapter_state_dict(model: nn.Module) -> dict[str, torch.Tensor]:
    return {
        name: tensor
        for name, tensor in model.state_dict().items()
        if ".lora_a." in name or ".lora_b." in name
    }


def trainable_parameters(model: nn.Module) -> list[torch.nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]
