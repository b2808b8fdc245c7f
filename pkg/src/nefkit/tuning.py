"""Fine-tuning configuration and training-stats contracts.

The adapter settings and trainer hyperparameters live here as validated
value types with one canonical JSON serialization
(``tuning-config.json``). The external trainer consumes that file and
writes back ``training-stats.json``, parsed by :func:`load_stats`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, IO, Mapping, Union

from nefkit.errors import ConfigError

CONFIG_SCHEMA_VERSION = 1

STATS_FIELDS = (
    "runtime_seconds",
    "samples_per_second",
    "steps_per_second",
    "total_flo",
    "final_loss",
)


@dataclass(frozen=True)
class QloraConfig:
    lora_alpha: int
    lora_dropout: float
    lora_rank: int
    target_modules: tuple[str, ...]
    bias_mode: str  # none | all | lora-only
    task_type: str

    def __post_init__(self) -> None:
        if self.lora_alpha <= 0:
            raise ConfigError("lora_alpha must be positive")
        if not 0.0 <= self.lora_dropout < 1.0:
            raise ConfigError("lora_dropout must be within [0, 1)")
        if self.lora_rank < 1:
            raise ConfigError("lora_rank must be >= 1")
        if not self.target_modules:
            raise ConfigError("target_modules must be non-empty")
        if self.bias_mode not in ("none", "all", "lora-only"):
            raise ConfigError(f"unknown bias_mode {self.bias_mode!r}")


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int
    batch_size: int
    gradient_accumulation_steps: int
    optimizer_name: str
    save_steps: int
    logging_steps: int
    learning_rate: float
    weight_decay: float
    warmup_ratio: float
    bf16: bool
    max_grad_norm: float
    max_steps: int  # -1 means unbounded
    group_by_length: bool
    scheduler_type: str
    report_target: str

    def __post_init__(self) -> None:
        for name in ("epochs", "batch_size", "gradient_accumulation_steps", "save_steps", "logging_steps"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.learning_rate < 1.0:
            raise ConfigError("learning_rate must be inside (0, 1)")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0.0 <= self.warmup_ratio < 0.5:
            raise ConfigError("warmup_ratio must be within [0, 0.5)")
        if self.max_grad_norm <= 0.0:
            raise ConfigError("max_grad_norm must be positive")
        if self.max_steps < -1:
            raise ConfigError("max_steps must be -1 or a non-negative step count")


@dataclass(frozen=True)
class ModelInitFlags:
    """Opaque model-initialization toggles handed through to the trainer."""

    flash_attention: bool = True
    load_quantized: bool = False


@dataclass(frozen=True)
class TrainingStats:
    runtime_seconds: float
    samples_per_second: float
    steps_per_second: float
    total_flo: float
    final_loss: float

    def __post_init__(self) -> None:
        for name in STATS_FIELDS:
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value!r}")
            if value < 0:
                raise ConfigError(f"{name} must be non-negative, got {value!r}")


def reference_defaults() -> tuple[QloraConfig, TrainerConfig]:
    """The toolkit's reference fine-tuning recipe for NEF API corpora."""
    qlora = QloraConfig(
        lora_alpha=16,
        lora_dropout=0.1,
        lora_rank=64,
        target_modules=("q_proj", "k_proj", "v_proj", "dense", "fc1", "fc2"),
        bias_mode="none",
        task_type="CAUSAL_LM",
    )
    trainer = TrainerConfig(
        epochs=5,
        batch_size=3,
        gradient_accumulation_steps=1,
        optimizer_name="paged_adamw_32bit",
        save_steps=10,
        logging_steps=10,
        learning_rate=2e-4,
        weight_decay=0.001,
        warmup_ratio=0.03,
        bf16=True,
        max_grad_norm=0.3,
        max_steps=-1,
        group_by_length=True,
        scheduler_type="constant",
        report_target="tensorboard",
    )
    return qlora, trainer


SinkType = Union[str, Path, IO[bytes]]


def config_document(
    qlora: QloraConfig,
    trainer: TrainerConfig,
    model_init: ModelInitFlags = ModelInitFlags(),
) -> dict[str, Any]:
    doc = {
        "qlora": asdict(qlora),
        "trainer": asdict(trainer),
        "model_init": asdict(model_init),
        "schema_version": CONFIG_SCHEMA_VERSION,
    }
    doc["qlora"]["target_modules"] = list(qlora.target_modules)
    return doc


def emit_config(
    qlora: QloraConfig,
    trainer: TrainerConfig,
    sink: SinkType,
    model_init: ModelInitFlags = ModelInitFlags(),
) -> None:
    """Write one stable-key-order JSON config document."""
    text = json.dumps(config_document(qlora, trainer, model_init), indent=2) + "\n"
    if isinstance(sink, (str, Path)):
        Path(sink).write_bytes(text.encode("utf-8"))
    else:
        sink.write(text.encode("utf-8"))


def _read_source(source: SinkType) -> Mapping[str, Any]:
    if isinstance(source, (str, Path)):
        raw = Path(source).read_bytes()
    else:
        raw = source.read()
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError("expected a JSON object at the top level")
    return data


def load_config(source: SinkType) -> tuple[QloraConfig, TrainerConfig, ModelInitFlags]:
    data = _read_source(source)
    version = data.get("schema_version")
    if version != CONFIG_SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {version!r}, expected {CONFIG_SCHEMA_VERSION}"
        )
    for section in ("qlora", "trainer"):
        if not isinstance(data.get(section), Mapping):
            raise ConfigError(f"missing config section {section!r}")
    qdata = dict(data["qlora"])
    qdata["target_modules"] = tuple(qdata.get("target_modules", ()))
    try:
        qlora = QloraConfig(**qdata)
        trainer = TrainerConfig(**dict(data["trainer"]))
        model_init = ModelInitFlags(**dict(data.get("model_init", {})))
    except TypeError as exc:
        raise ConfigError(f"config field mismatch: {exc}") from exc
    return qlora, trainer, model_init


def load_stats(source: SinkType) -> TrainingStats:
    """Parse and invariant-check a training-stats document."""
    data = _read_source(source)
    missing = [f for f in STATS_FIELDS if f not in data]
    if missing:
        raise ConfigError(f"training stats missing field(s): {', '.join(missing)}")
    values = {}
    for name in STATS_FIELDS:
        raw = data[name]
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{name} must be a number, got {type(raw).__name__}")
        values[name] = float(raw)
    return TrainingStats(**values)
