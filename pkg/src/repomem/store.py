"""Canonical JSON persistence for session snapshots.

Stores are written with sorted keys, two-space indentation, UTF-8 and LF so a
load/save cycle is byte-identical, which keeps golden-file tests honest.
Context-memory entries use the memory_key / memory_value field names; session
blocks use id / instruction / code / note / diff_nodes / state_links.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .config import EngineConfig, config_hash
from .context_memory import ContextMemory
from .errors import SchemaError, VersionError, require_field
from .orchestrator import SessionState, new_session
from .repo_index import key_to_dict, parse_block
from .session_memory import sequence_from_record, sequence_to_record

logger = logging.getLogger(__name__)

STORE_VERSION = 1


def canonical_json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def context_memory_to_records(memory: ContextMemory) -> list[dict]:
    records = []
    for namespace in sorted(memory.blocks):
        block = memory.blocks[namespace]
        records.append(
            {
                "namespace": namespace,
                "file_path": block.file_path,
                "round_added": memory.round_added[namespace],
                "memory_key": key_to_dict(block.key),
                "memory_value": block.value,
            }
        )
    return records


def context_memory_from_records(records: list[dict]) -> ContextMemory:
    """Rebuild memory from records; keys are re-derived from each value so the
    key-is-a-function-of-value invariant holds regardless of what was stored."""
    memory = ContextMemory()
    for i, record in enumerate(records):
        path = f"context_memory[{i}]"
        namespace = require_field(record, "namespace", path)
        require_field(record, "memory_key", path)
        value = require_field(record, "memory_value", path)
        block = parse_block(value, namespace)
        if record.get("file_path"):
            from dataclasses import replace

            block = replace(block, file_path=record["file_path"])
        memory.blocks[namespace] = block
        memory.round_added[namespace] = int(record.get("round_added", 1))
    return memory


def snapshot_to_dict(state: SessionState) -> dict:
    return {
        "version": STORE_VERSION,
        "config": state.config.to_dict(),
        "config_hash": config_hash(state.config),
        "root": state.index.root,
        "target": state.target,
        "last_target": state.last_target,
        "round": state.round,
        "instructions": list(state.instructions),
        "last_feedback": state.last_feedback,
        "context_memory": context_memory_to_records(state.memory),
        "session_memory": {
            namespace: sequence_to_record(sequence)
            for namespace, sequence in sorted(state.sessions.items())
        },
    }


def save_store(state: SessionState, path: str | Path) -> None:
    Path(path).write_text(canonical_json(snapshot_to_dict(state)), encoding="utf-8")


def load_store(path: str | Path, gateway=None, embedder=None) -> SessionState:
    """Rebuild a session from a snapshot; the repository is re-indexed from the
    stored root, and gateways (not serializable) are attached by the caller."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"store file is not valid JSON: {exc}") from exc

    version = require_field(data, "version")
    if version != STORE_VERSION:
        raise VersionError(f"unsupported store version: {version!r} (expected {STORE_VERSION})")

    config = EngineConfig.from_dict(require_field(data, "config"))
    stored_hash = data.get("config_hash")
    if stored_hash and stored_hash != config_hash(config):
        logger.warning("config hash mismatch in %s; proceeding with stored config fields", path)

    state = new_session(
        require_field(data, "root"),
        config,
        gateway=gateway,
        embedder=embedder,
        target=data.get("target"),
    )
    state.last_target = data.get("last_target")
    state.round = int(require_field(data, "round"))
    state.instructions = list(require_field(data, "instructions"))
    state.last_feedback = data.get("last_feedback")
    state.memory = context_memory_from_records(require_field(data, "context_memory"))
    session_memory = require_field(data, "session_memory")
    state.sessions = {
        namespace: sequence_from_record(namespace, records)
        for namespace, records in session_memory.items()
    }
    return state


def inspect_store(path: str | Path) -> str:
    """Human-readable summary of a snapshot."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    lines = [
        f"store version : {data.get('version')}",
        f"repository    : {data.get('root')}",
        f"rounds played : {data.get('round')}",
        f"target        : {data.get('target') or '(per-function)'}",
        "",
        f"context memory ({len(data.get('context_memory', []))} blocks):",
    ]
    for record in data.get("context_memory", []):
        lines.append(f"  - {record.get('namespace')} (round {record.get('round_added')})")
    lines.append("")
    sessions = data.get("session_memory", {})
    lines.append(f"session memory ({len(sessions)} sequences):")
    for namespace, blocks in sessions.items():
        lines.append(f"  - {namespace}: {len(blocks)} blocks")
        for block in blocks:
            added = len(block.get("diff_nodes", {}).get("added", []))
            removed = len(block.get("diff_nodes", {}).get("removed", []))
            note = (block.get("note") or "").strip().splitlines()
            note_head = note[0][:60] if note else ""
            lines.append(
                f"      [{block.get('id')}] +{added}/-{removed} links={block.get('state_links')} {note_head}"
            )
    return "\n".join(lines)
