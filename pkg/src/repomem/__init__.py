"""AST-guided repository context and session memory for iterative code generation."""

from .api_analysis import ApiName, ApiProfile, api_match, api_profile, call_targets, defined_names
from .config import EngineConfig
from .context_memory import ContextMemory, decide_update, merge, retrieve_relevant, select
from .evaluation import (
    MetricsReport,
    Task,
    aggregate,
    ca,
    context_scores,
    ia,
    ifr,
    load_codeif,
    load_codereval,
    pass_at_k,
)
from .gateway import (
    HashedBagEmbedding,
    PairScoreEmbedding,
    ScriptedGateway,
    TemplateId,
    UpdateDecision,
    UpdateMode,
    parse_decision,
    render_prompt,
)
from .orchestrator import RoundRecord, SessionState, Transcript, new_session, run_round, run_session
from .repo_index import BlockIndex, CodeBlock, index_repository, parse_block, render_key
from .session_memory import (
    AstDiff,
    ConflictReport,
    DiffNode,
    MemorySequence,
    SessionBlock,
    ast_diff,
    candidate_blocks,
    conflicts,
    detect,
    link_block,
    record_round,
    refresh_note,
    working_set,
)
from .store import load_store, save_store

__version__ = "0.1.0"
