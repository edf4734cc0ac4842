"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any

from pydantic import BaseModel, Field


class IndexRequest(BaseModel):
    root: str
    include_globs: list[str] = Field(default_factory=lambda: ["**/*.py"])


class BlockManifestEntry(BaseModel):
    namespace: str
    file_path: str
    kind: str
    key: dict[str, Any]


class IndexResponse(BaseModel):
    root: str
    blocks: list[BlockManifestEntry]
    skipped: list[dict[str, str]]


class ConfigModel(BaseModel):
    """Engine configuration payload; unset fields fall back to defaults."""

    tau: float | None = None
    top_k: int | None = None
    bm25_k1: float | None = None
    bm25_b: float | None = None
    regeneration_limit: int | None = None
    rerun_detector: bool | None = None
    ablations: list[str] | None = None
    context_char_budget: int | None = None
    include_globs: list[str] | None = None
    runner_template: str | None = None
    runner_timeout: float | None = None
    gateway_backend: str | None = None
    gateway_base_url: str | None = None
    gateway_model: str | None = None
    gateway_api_key_env: str | None = None
    gateway_timeout: float | None = None
    mock_script: str | None = None
    embedding_backend: str | None = None
    embedding_base_url: str | None = None
    embedding_model: str | None = None

    def overrides(self) -> dict[str, Any]:
        data = self.model_dump(exclude_none=True)
        for name in ("ablations", "include_globs"):
            if name in data:
                data[name] = tuple(data[name])
        return data


class SessionCreateRequest(BaseModel):
    repo_root: str
    target: str | None = None
    config: ConfigModel = Field(default_factory=ConfigModel)


class SessionSummary(BaseModel):
    session_id: str
    repo_root: str
    round: int
    target: str | None
    memory_namespaces: list[str]
    sequences: dict[str, int]


class RoundRequest(BaseModel):
    instruction: str
    feedback: str | None = None


class DecisionModel(BaseModel):
    mode: str
    action: str
    target_context: list[str]


class ConflictNodeModel(BaseModel):
    type: str
    block: str


class ConflictModel(BaseModel):
    block_id: int
    nodes: list[ConflictNodeModel]


class RoundResponse(BaseModel):
    round: int
    instruction: str
    decision: DecisionModel
    retrieved: list[str]
    generated_code: str
    conflicts: list[ConflictModel]
    final_code: str
    retained: list[str]
    prompt_tokens: int
    completion_tokens: int
    wall_time: float
    truncated_context: bool
    notes: list[str]


class StorePathRequest(BaseModel):
    path: str


class ReplayRequest(BaseModel):
    bench: str
    data: str
    out: str
    repo_base: str | None = None
    copy_repos: bool = True
    config: ConfigModel = Field(default_factory=ConfigModel)


class EvalRequest(BaseModel):
    transcripts: str


class ReportResponse(BaseModel):
    report: dict[str, Any]
    table: str
