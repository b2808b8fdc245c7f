"""One config file drives every CLI stage; flags override per run.

Paths inside the file resolve relative to the file's own directory so a
config can ship next to its fixtures.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import yaml

from nefkit.errors import ConfigError
from nefkit.llm import MockProvider, OpenAICompatProvider, Provider, ProviderConfig

GENERATION_TEMPERATURE_DEFAULT = 0.7
JUDGE_TEMPERATURE_DEFAULT = 0.0


@dataclass(frozen=True)
class ProviderSettings:
    kind: str  # mock | openai | local (judge only)
    seed: int = 0
    dim: int = 64
    canned_path: Optional[Path] = None
    base_url: str = ""
    api_key_env: str = ""
    model: str = ""
    temperature: float = GENERATION_TEMPERATURE_DEFAULT
    timeout: float = 30.0
    max_retries: int = 3
    backoff_base: float = 0.5

    def build(self) -> Provider:
        if self.kind == "mock":
            canned: dict[str, str] = {}
            if self.canned_path is not None:
                try:
                    canned = json.loads(self.canned_path.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError) as exc:
                    raise ConfigError(f"cannot load canned replies {self.canned_path}: {exc}") from exc
            return MockProvider(seed=self.seed, canned=canned, dim=self.dim)
        if self.kind == "openai":
            return OpenAICompatProvider(
                ProviderConfig(
                    base_url=self.base_url,
                    api_key_env_name=self.api_key_env,
                    model_name=self.model,
                    request_timeout=self.timeout,
                    max_retries=self.max_retries,
                    retry_backoff_base=self.backoff_base,
                )
            )
        raise ConfigError(f"cannot build a provider of kind {self.kind!r}")


@dataclass(frozen=True)
class PipelineConfig:
    spec_path: Path
    spec_dir: Path
    output_dir: Path
    generation: ProviderSettings
    embedding: ProviderSettings
    judge: ProviderSettings = ProviderSettings(kind="local")
    scaling_n: int = 100
    include_seeds: bool = False
    context_path: Optional[Path] = None
    split_ratio: float = 0.7
    split_seed: int = 13
    chunk_size: int = 1000
    overlap: int = 100
    top_k: int = 4
    eval_iterations: int = 25
    server_host: str = "127.0.0.1"
    server_port: int = 8095


def _provider_settings(raw: Mapping[str, Any], base: Path, role: str) -> ProviderSettings:
    kind = str(raw.get("kind", "mock"))
    if kind not in ("mock", "openai", "local"):
        raise ConfigError(f"{role} provider kind must be mock, openai, or local; got {kind!r}")
    canned = raw.get("canned")
    default_temp = (
        JUDGE_TEMPERATURE_DEFAULT if role == "judge" else GENERATION_TEMPERATURE_DEFAULT
    )
    settings = ProviderSettings(
        kind=kind,
        seed=int(raw.get("seed", 0)),
        dim=int(raw.get("dim", 64)),
        canned_path=(base / str(canned)) if canned else None,
        base_url=str(raw.get("base_url", "")),
        api_key_env=str(raw.get("api_key_env", "")),
        model=str(raw.get("model", "")),
        temperature=float(raw.get("temperature", default_temp)),
        timeout=float(raw.get("timeout", 30.0)),
        max_retries=int(raw.get("max_retries", 3)),
        backoff_base=float(raw.get("backoff_base", 0.5)),
    )
    if kind == "openai":
        if not settings.base_url:
            raise ConfigError(f"{role} provider needs base_url")
        if not settings.api_key_env:
            raise ConfigError(f"{role} provider needs api_key_env (the env var name)")
        if not settings.model:
            raise ConfigError(f"{role} provider needs model")
    return settings


def load_pipeline_config(path: Union[str, Path]) -> PipelineConfig:
    config_path = Path(path)
    if not config_path.is_file():
        raise ConfigError(f"config file not found: {config_path}")
    try:
        raw = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {config_path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(raw, Mapping):
        raise ConfigError(f"config {config_path} must be a mapping")
    base = config_path.parent

    spec_value = raw.get("spec")
    if not spec_value:
        raise ConfigError("config must name a 'spec' file")
    spec_path = (base / str(spec_value)).resolve()

    providers = raw.get("providers") or {}
    if not isinstance(providers, Mapping):
        raise ConfigError("'providers' must be a mapping")
    generation = _provider_settings(providers.get("generation") or {}, base, "generation")
    embedding = _provider_settings(providers.get("embedding") or {}, base, "embedding")
    judge = _provider_settings(providers.get("judge") or {"kind": "local"}, base, "judge")

    scaling = raw.get("scaling") or {}
    split = raw.get("split") or {}
    chunking = raw.get("chunking") or {}
    eval_section = raw.get("eval") or {}
    server = raw.get("mock_server") or {}

    context = scaling.get("context")
    ratio = float(split.get("ratio", 0.7))
    if not 0 < ratio < 1:
        raise ConfigError(f"split ratio must be inside (0, 1), got {ratio}")
    iterations = int(eval_section.get("iterations", 25))
    if iterations < 1:
        raise ConfigError("eval iterations must be >= 1")
    chunk_size = int(chunking.get("chunk_size", 1000))
    overlap = int(chunking.get("overlap", 100))
    if overlap >= chunk_size:
        raise ConfigError("chunking overlap must be smaller than chunk_size")

    return PipelineConfig(
        spec_path=spec_path,
        spec_dir=spec_path.parent,
        output_dir=(base / str(raw.get("output_dir", "out"))).resolve(),
        generation=generation,
        embedding=embedding,
        judge=judge,
        scaling_n=int(scaling.get("n", 100)),
        include_seeds=bool(scaling.get("include_seeds", False)),
        context_path=(base / str(context)).resolve() if context else None,
        split_ratio=ratio,
        split_seed=int(split.get("seed", 13)),
        chunk_size=chunk_size,
        overlap=overlap,
        top_k=int(chunking.get("top_k", 4)),
        eval_iterations=iterations,
        server_host=str(server.get("host", "127.0.0.1")),
        server_port=int(server.get("port", 8095)),
    )
