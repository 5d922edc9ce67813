"""sql2tool: compile SQL SELECT queries into verified tool-calling tasks."""

from .sql_frontend import (
    SqlAst,
    SqlSyntaxError,
    UnsupportedConstructError,
    extract_literals,
    parse_sql,
    render_sql,
)
from .runtime import LabelEnv, ToolCall, ToolError, ToolResult, execute_sequence
from .transpilers import (
    compile_slot_sequence,
    deduplicate_endpoints,
    derive_sel_pool,
    rewrite_to_sel_sequence,
    synthesize_rest_endpoint,
    verify_equivalence,
)
from .evaluation import (
    align_sequences,
    classify_error,
    completion_check,
    intent_metrics,
    normalize_answer,
    parse_model_output,
    slot_metrics,
)
from .specs import emit_tool_spec, obfuscate_pool, shortlist_tools

__version__ = "0.1.0"
