"""Adapter fine-tuning driven entirely by the shared config document.

Every adapter and trainer hyperparameter comes from ``tuning-config.json``
(schema_version 1); nothing is hard-coded here. Hardware-coupled
settings that cannot run on a desk CPU (paged 32-bit optimizer, bf16
autocast, tensorboard reporting) are remapped in smoke mode to CPU-safe
equivalents, with both the requested and the effective value recorded in
the emitted stats metadata.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch
from torch import nn

from trainer_bridge import BridgeError, __version__
from trainer_bridge.data import build_tokenizer, encode_corpus, read_pairs
from trainer_bridge.lora import adapter_state_dict, inject_adapters, trainable_parameters

SMOKE_STEP_CAP = 10
SMOKE_SEED = 1234
MAX_SEQUENCE_LENGTH = 256

TINY_BASE_MODEL = "tiny-phi"


@dataclass(frozen=True)
class BridgeRunSpec:
    dataset_path: Path
    config_path: Path
    base_model: str = TINY_BASE_MODEL
    output_dir: Path = Path("bridge-out")
    smoke_mode: bool = True

    def __post_init__(self) -> None:
        if not Path(self.dataset_path).is_file():
            raise BridgeError(f"dataset path does not exist: {self.dataset_path}")
        if not Path(self.config_path).is_file():
            raise BridgeError(f"config path does not exist: {self.config_path}")


def load_config_document(path: Path) -> dict[str, Any]:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise BridgeError(f"{path}: not valid JSON: {exc}") from exc
    version = document.get("schema_version")
    if version != 1:
        raise BridgeError(f"{path}: unsupported schema_version {version!r}, expected 1")
    for section, fields in (
        (
            "qlora",
            ("lora_alpha", "lora_dropout", "lora_rank", "target_modules", "bias_mode", "task_type"),
        ),
        (
            "trainer",
            (
                "epochs",
                "batch_size",
                "gradient_accumulation_steps",
                "optimizer_name",
                "save_steps",
                "logging_steps",
                "learning_rate",
                "weight_decay",
                "warmup_ratio",
                "bf16",
                "max_grad_norm",
                "max_steps",
                "group_by_length",
                "scheduler_type",
                "report_target",
            ),
        ),
    ):
        body = document.get(section)
        if not isinstance(body, dict):
            raise BridgeError(f"{path}: missing config section {section!r}")
        for field in fields:
            if field not in body:
                raise BridgeError(f"{path}: missing config field {section}.{field}")
    return document


def build_base_model(base_model: str, vocab_size: int) -> nn.Module:
    if base_model == TINY_BASE_MODEL:
        from transformers import PhiConfig, PhiForCausalLM

        config = PhiConfig(
            vocab_size=vocab_size,
            hidden_size=64,
            intermediate_size=128,
            num_hidden_layers=2,
            num_attention_heads=4,
            max_position_embeddings=MAX_SEQUENCE_LENGTH,
        )
        return PhiForCausalLM(config)
    from transformers import AutoModelForCausalLM

    return AutoModelForCausalLM.from_pretrained(base_model)


def _batches(encoded: list[list[int]], batch_size: int, group_by_length: bool):
    order = list(range(len(encoded)))
    if group_by_length:
        order.sort(key=lambda i: len(encoded[i]))
    return [order[i : i + batch_size] for i in range(0, len(order), batch_size)]


def _pad_batch(rows: list[list[int]], pad_id: int) -> tuple[torch.Tensor, torch.Tensor]:
    width = max(len(r) for r in rows)
    input_ids = torch.full((len(rows), width), pad_id, dtype=torch.long)
    attention = torch.zeros((len(rows), width), dtype=torch.long)
    for i, row in enumerate(rows):
        input_ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        attention[i, : len(row)] = 1
    return input_ids, attention


def train(run: BridgeRunSpec) -> tuple[dict[str, Any], Path]:
    """Run the fine-tune; returns (stats document, adapter directory)."""
    document = load_config_document(Path(run.config_path))
    qlora = document["qlora"]
    trainer_cfg = document["trainer"]

    requested = {
        "optimizer_name": trainer_cfg["optimizer_name"],
        "bf16": trainer_cfg["bf16"],
        "report_target": trainer_cfg["report_target"],
    }
    cuda = torch.cuda.is_available()
    effective = {
        "optimizer_name": trainer_cfg["optimizer_name"] if cuda else "adamw_torch",
        "bf16": bool(trainer_cfg["bf16"]) and cuda,
        "report_target": "none" if run.smoke_mode else trainer_cfg["report_target"],
    }

    torch.manual_seed(SMOKE_SEED)
    pairs = read_pairs(run.dataset_path)
    texts = [f"{i}\n{o}" for i, o in pairs]
    tokenizer = build_tokenizer(texts)
    encoded = encode_corpus(pairs, tokenizer, max_length=MAX_SEQUENCE_LENGTH)

    model = build_base_model(run.base_model, vocab_size=len(tokenizer))
    wrapped = inject_adapters(
        model,
        target_modules=qlora["target_modules"],
        rank=int(qlora["lora_rank"]),
        alpha=int(qlora["lora_alpha"]),
        dropout=float(qlora["lora_dropout"]),
        bias_mode=str(qlora["bias_mode"]),
    )
    model.train()

    params = trainable_parameters(model)
    optimizer = torch.optim.AdamW(
        params,
        lr=float(trainer_cfg["learning_rate"]),
        weight_decay=float(trainer_cfg["weight_decay"]),
    )

    batches = _batches(encoded, int(trainer_cfg["batch_size"]), bool(trainer_cfg["group_by_length"]))
    steps_per_epoch = math.ceil(len(batches) / int(trainer_cfg["gradient_accumulation_steps"]))
    planned = steps_per_epoch * int(trainer_cfg["epochs"])
    if int(trainer_cfg["max_steps"]) >= 0:
        planned = min(planned, int(trainer_cfg["max_steps"]))
    if run.smoke_mode:
        planned = min(planned, SMOKE_STEP_CAP)
    if planned < 1:
        raise BridgeError("training plan resolves to zero optimizer steps")
    warmup_steps = int(float(trainer_cfg["warmup_ratio"]) * planned)

    def lr_scale(step: int) -> float:
        if trainer_cfg["scheduler_type"] != "constant":
            raise BridgeError(f"unsupported scheduler {trainer_cfg['scheduler_type']!r}")
        if warmup_steps and step <= warmup_steps:
            return step / warmup_steps
        return 1.0

    pad_id = tokenizer.pad_token_id
    accumulation = int(trainer_cfg["gradient_accumulation_steps"])
    clip_norm = float(trainer_cfg["max_grad_norm"])
    loss_history: list[float] = []
    tokens_processed = 0
    samples_processed = 0
    step = 0
    started = time.perf_counter()

    try:
        done = False
        while not done:  # epoch loop; smoke cap or max_steps breaks out
            for micro_start in range(0, len(batches), accumulation):
                optimizer.zero_grad(set_to_none=True)
                micro = batches[micro_start : micro_start + accumulation]
                step_loss = 0.0
                for batch_indices in micro:
                    rows = [encoded[i] for i in batch_indices]
                    input_ids, attention = _pad_batch(rows, pad_id)
                    labels = input_ids.masked_fill(attention == 0, -100)
                    output = model(input_ids=input_ids, attention_mask=attention, labels=labels)
                    loss = output.loss / len(micro)
                    loss.backward()
                    step_loss += float(loss.detach())
                    tokens_processed += int(attention.sum())
                    samples_processed += len(rows)
                torch.nn.utils.clip_grad_norm_(params, clip_norm)
                step += 1
                for group in optimizer.param_groups:
                    group["lr"] = float(trainer_cfg["learning_rate"]) * lr_scale(step)
                optimizer.step()
                loss_history.append(step_loss)
                if step >= planned:
                    done = True
                    break
    except RuntimeError as exc:
        if "out of memory" in str(exc).lower():
            raise BridgeError(
                "training ran out of memory; reduce trainer.batch_size or use smoke_mode"
            ) from exc
        raise

    runtime = time.perf_counter() - started
    total_params = sum(p.numel() for p in model.parameters())
    stats = {
        "runtime_seconds": runtime,
        "samples_per_second": samples_processed / runtime if runtime > 0 else 0.0,
        "steps_per_second": step / runtime if runtime > 0 else 0.0,
        "total_flo": 6.0 * total_params * tokens_processed,
        "final_loss": loss_history[-1],
        "metadata": {
            "bridge_version": __version__,
            "base_model": run.base_model,
            "smoke_mode": run.smoke_mode,
            "optimizer_steps": step,
            "loss_history": loss_history,
            "trainable_parameters": sum(p.numel() for p in params),
            "wrapped_modules": len(wrapped),
            "max_sequence_length": MAX_SEQUENCE_LENGTH,
            "seed": SMOKE_SEED,
            "requested": requested,
            "effective": effective,
        },
    }

    out_dir = Path(run.output_dir)
    adapter_dir = out_dir / "adapter"
    adapter_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "training-stats.json").write_text(
        json.dumps(stats, indent=2) + "\n", encoding="utf-8"
    )
    # adapter metadata is the input config document, verbatim
    (adapter_dir / "adapter-config.json").write_text(
        json.dumps(document, indent=2) + "\n", encoding="utf-8"
    )
    torch.save(adapter_state_dict(model), adapter_dir / "adapter-weights.pt")
    tokenizer.save_pretrained(str(adapter_dir / "tokenizer"))
    (adapter_dir / "base-model.json").write_text(
        json.dumps({"base_model": run.base_model, "vocab_size": len(tokenizer)}) + "\n",
        encoding="utf-8",
    )
    return stats, adapter_dir
