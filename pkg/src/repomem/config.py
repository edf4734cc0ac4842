"""Engine configuration: thresholds, retrieval and detector settings, gateways.

A JSON config file supplies defaults; command-line flags override fields;
secrets (API keys) come only from environment variables named here.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .errors import SchemaError
from .gateway import (
    DEFAULT_EMBEDDING_MODEL,
    GatewayConfig,
    HashedBagEmbedding,
    HttpCompletionGateway,
    HttpEmbeddingGateway,
    ScriptedGateway,
)

ABLATION_FLAGS = ("ctxmem", "ctxast", "sessast")


@dataclass(frozen=True)
class EngineConfig:
    tau: float = 0.95
    top_k: int = 5
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    regeneration_limit: int = 1
    rerun_detector: bool = False
    ablations: tuple[str, ...] = ()
    context_char_budget: int = 24000
    include_globs: tuple[str, ...] = ("**/*.py",)
    runner_template: str = ""
    runner_timeout: float = 60.0
    gateway_backend: str = "mock"  # "mock" | "http"
    gateway_base_url: str = ""
    gateway_model: str = ""
    gateway_api_key_env: str = "REPOMEM_API_KEY"
    gateway_timeout: float = 60.0
    mock_script: str = ""
    embedding_backend: str = "mock"  # "mock" | "http"
    embedding_base_url: str = ""
    embedding_model: str = DEFAULT_EMBEDDING_MODEL

    def __post_init__(self):
        unknown = set(self.ablations) - set(ABLATION_FLAGS)
        if unknown:
            raise ValueError(f"unknown ablation flags: {sorted(unknown)}")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["ablations"] = list(self.ablations)
        data["include_globs"] = list(self.include_globs)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "EngineConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise SchemaError(f"unknown config fields: {sorted(unknown)}", field_path=sorted(unknown)[0])
        kwargs = dict(data)
        for name in ("ablations", "include_globs"):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


def load_config(path: str | Path | None) -> EngineConfig:
    if path is None:
        return EngineConfig()
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return EngineConfig.from_dict(data)


def apply_overrides(
    config: EngineConfig,
    ablate: Sequence[str] = (),
    mock_script: str | None = None,
    **overrides,
) -> EngineConfig:
    """Command-line flag overrides on top of a loaded config."""
    if ablate:
        config = replace(config, ablations=tuple(dict.fromkeys([*config.ablations, *ablate])))
    if mock_script:
        config = replace(config, mock_script=mock_script, gateway_backend="mock")
    clean = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **clean) if clean else config


def config_hash(config: EngineConfig) -> str:
    canonical = json.dumps(config.to_dict(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def build_completion_gateway(config: EngineConfig):
    if config.gateway_backend == "http":
        return HttpCompletionGateway(
            GatewayConfig(
                base_url=config.gateway_base_url,
                model=config.gateway_model,
                api_key_env=config.gateway_api_key_env,
                timeout=config.gateway_timeout,
            )
        )
    if config.mock_script:
        return ScriptedGateway.from_file(config.mock_script)
    return ScriptedGateway([])


def build_embedding_gateway(config: EngineConfig):
    if config.embedding_backend == "http":
        return HttpEmbeddingGateway(
            GatewayConfig(
                base_url=config.gateway_base_url,
                embedding_base_url=config.embedding_base_url,
                embedding_model=config.embedding_model,
                api_key_env=config.gateway_api_key_env,
                timeout=config.gateway_timeout,
            )
        )
    return HashedBagEmbedding()
