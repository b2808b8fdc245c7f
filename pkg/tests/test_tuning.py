import io
import json
import math
from pathlib import Path

import pytest

from nefkit.errors import ConfigError
from nefkit.tuning import (
    ModelInitFlags,
    QloraConfig,
    TrainerConfig,
    TrainingStats,
    emit_config,
    load_config,
    load_stats,
    reference_defaults,
)

GOLDEN = Path(__file__).parent / "data" / "tuning-config.golden.json"


class TestReferenceDefaults:
    def test_adapter_values(self):
        qlora, _ = reference_defaults()
        assert qlora.lora_alpha == 16
        assert qlora.lora_dropout == 0.1
        assert qlora.lora_rank == 64
        assert qlora.target_modules == ("q_proj", "k_proj", "v_proj", "dense", "fc1", "fc2")
        assert qlora.bias_mode == "none"
        assert qlora.task_type == "CAUSAL_LM"

    def test_trainer_values(self):
        _, trainer = reference_defaults()
        assert trainer.epochs == 5
        assert trainer.batch_size == 3
        assert trainer.gradient_accumulation_steps == 1
        assert trainer.optimizer_name == "paged_adamw_32bit"
        assert trainer.save_steps == 10
        assert trainer.logging_steps == 10
        assert trainer.learning_rate == 2e-4
        assert trainer.weight_decay == 0.001
        assert trainer.warmup_ratio == 0.03
        assert trainer.bf16 is True
        assert trainer.max_grad_norm == 0.3
        assert trainer.max_steps == -1
        assert trainer.group_by_length is True
        assert trainer.scheduler_type == "constant"
        assert trainer.report_target == "tensorboard"

    def test_constant_across_calls(self):
        assert reference_defaults() == reference_defaults()

    def test_matches_golden_file(self):
        qlora, trainer = reference_defaults()
        buffer = io.BytesIO()
        emit_config(qlora, trainer, buffer)
        assert buffer.getvalue() == GOLDEN.read_bytes()


class TestEmitAndLoad:
    def test_round_trip_identity(self, tmp_path):
        qlora, trainer = reference_defaults()
        target = tmp_path / "tuning-config.json"
        emit_config(qlora, trainer, target, model_init=ModelInitFlags(flash_attention=False))
        loaded_q, loaded_t, loaded_m = load_config(target)
        assert loaded_q == qlora
        assert loaded_t == trainer
        assert loaded_m == ModelInitFlags(flash_attention=False)

    def test_emitted_document_shape(self):
        qlora, trainer = reference_defaults()
        buffer = io.BytesIO()
        emit_config(qlora, trainer, buffer)
        doc = json.loads(buffer.getvalue())
        assert list(doc.keys()) == ["qlora", "trainer", "model_init", "schema_version"]
        assert doc["schema_version"] == 1
        assert doc["trainer"]["epochs"] == 5

    def test_invalid_dropout_fails_before_write(self):
        with pytest.raises(ConfigError):
            QloraConfig(
                lora_alpha=16,
                lora_dropout=1.5,
                lora_rank=64,
                target_modules=("q_proj",),
                bias_mode="none",
                task_type="CAUSAL_LM",
            )

    def test_wrong_schema_version_rejected(self, tmp_path):
        target = tmp_path / "config.json"
        target.write_text(json.dumps({"qlora": {}, "trainer": {}, "schema_version": 999}))
        with pytest.raises(ConfigError, match="schema_version"):
            load_config(target)


class TestTrainingStats:
    def test_reference_run_values_accepted(self):
        stats = load_stats(
            io.BytesIO(
                json.dumps(
                    {
                        "runtime_seconds": 595.0,
                        "samples_per_second": 4.495,
                        "steps_per_second": 1.504,
                        "total_flo": 6.08e15,
                        "final_loss": 0.1921,
                    }
                ).encode()
            )
        )
        assert stats.runtime_seconds == 595.0
        assert stats.final_loss == 0.1921

    def test_nan_loss_rejected(self):
        payload = {
            "runtime_seconds": 1.0,
            "samples_per_second": 1.0,
            "steps_per_second": 1.0,
            "total_flo": 0.0,
            "final_loss": float("nan"),
        }
        with pytest.raises(ConfigError):
            TrainingStats(**payload)

    def test_missing_field_named(self):
        data = {"runtime_seconds": 1.0}
        with pytest.raises(ConfigError, match="samples_per_second"):
            load_stats(io.BytesIO(json.dumps(data).encode()))

    def test_non_numeric_rejected(self):
        data = {name: "fast" for name in (
            "runtime_seconds", "samples_per_second", "steps_per_second", "total_flo", "final_loss"
        )}
        with pytest.raises(ConfigError, match="number"):
            load_stats(io.BytesIO(json.dumps(data).encode()))

    def test_extra_metadata_ignored(self):
        data = {
            "runtime_seconds": 2.0,
            "samples_per_second": 1.0,
            "steps_per_second": 0.5,
            "total_flo": 1e9,
            "final_loss": 3.5,
            "metadata": {"anything": True},
        }
        stats = load_stats(io.BytesIO(json.dumps(data).encode()))
        assert math.isfinite(stats.total_flo)
