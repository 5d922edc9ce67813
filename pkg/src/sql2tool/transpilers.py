"""Compile parsed SQL into the three tool-calling formulations.

SLOT sequences are emitted phase by phase (joins, filters, grouping,
ordering, retrieval, aggregation); SEL sequences are a call-for-call
rewrite of SLOT sequences with categorical arguments bound into tool
names; REST endpoints lift WHERE literals into query parameters over a
canonical parameterized SQL template. Every artifact is verified against
direct SQL execution before it enters a dataset.
"""

from __future__ import annotations

import re
import sqlite3
from dataclasses import dataclass
from pathlib import Path

from . import pools, runtime
from .evaluation import normalize_answer, normalized_equal
from .pools import ToolPool, build_sel_pool
from .runtime import LabelEnv, ToolCall, ToolError
from .sql_frontend import (
    BinaryExpr,
    ColumnOperand,
    Projection,
    SqlAst,
    UnsupportedConstructError,
    render_sql,
)


def _float_if_number(value: object) -> object:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, float)):
        return float(value)
    return value


def _group_output_column(ast: SqlAst) -> str:
    group = ast.group_by
    if group.aggregation == "count":
        return "count"
    return f"{group.aggregation}_{group.target.prefixed_name}"


def compile_slot_sequence(ast: SqlAst, database_path: str) -> tuple[ToolCall, list[ToolCall]]:
    """Gold SLOT sequence for a query: the initialization call plus the body.

    Labels follow the FILTERED_DF_k / TRANSFORMED_DF_k / GROUPED_DF_k /
    SORTED_DF_k convention with one shared counter for table-producing
    steps, and SELECT_COL_j for retrievals.
    """
    alias_dict = {
        t.alias: {"original_table_name": t.table, "modified_table_name": t.modified}
        for t in ast.tables
    }
    init = ToolCall(
        name="initialize_active_data",
        arguments={
            "condition_sequence": [[j.left_col, j.right_col, j.kind] for j in ast.joins],
            "alias_to_table_dict": alias_dict,
            "database_path": database_path,
        },
        label=runtime.STARTING_TABLE_LABEL,
    )

    calls: list[ToolCall] = []
    df_counter = 0
    current = f"${runtime.STARTING_TABLE_LABEL}$"

    def emit(name: str, arguments: dict, label: str) -> None:
        nonlocal current
        calls.append(ToolCall(name=name, arguments=arguments, label=label))
        current = f"${label}$"

    for pred in ast.where_conjuncts:
        if pred.transform is not None:
            emit(
                "transform_data",
                {
                    "data_source": current,
                    "key_name": pred.column.prefixed_name,
                    "operation_type": pred.transform.operation,
                    "operation_args": {
                        "start_index": pred.transform.start_index,
                        "end_index": pred.transform.end_index,
                    },
                },
                f"TRANSFORMED_DF_{df_counter}",
            )
            df_counter += 1
        emit(
            "filter_data",
            {
                "data_source": current,
                "key_name": pred.column.prefixed_name,
                "value": _float_if_number(pred.value),
                "condition": pred.condition,
            },
            f"FILTERED_DF_{df_counter}",
        )
        df_counter += 1

    if ast.group_by is not None:
        arguments = {
            "data_source": current,
            "key_name": ast.group_by.key.prefixed_name,
            "aggregation": ast.group_by.aggregation,
        }
        if ast.group_by.target is not None:
            arguments["target_key"] = ast.group_by.target.prefixed_name
        emit("group_data_by", arguments, f"GROUPED_DF_{df_counter}")
        df_counter += 1

    order = ast.order_by
    if order is not None:
        if order.is_derived:
            raise UnsupportedConstructError(
                "derived ORDER BY expression", "not expressible with the supported transforms"
            )
        if order.aggregate is not None:
            sort_key = _group_output_column(ast)
        elif order.transform is not None:
            emit(
                "transform_data",
                {
                    "data_source": current,
                    "key_name": order.key.prefixed_name,
                    "operation_type": order.transform.operation,
                    "operation_args": {
                        "start_index": order.transform.start_index,
                        "end_index": order.transform.end_index,
                    },
                },
                f"TRANSFORMED_DF_{df_counter}",
            )
            df_counter += 1
            sort_key = order.key.prefixed_name
        else:
            sort_key = order.key.prefixed_name
        emit(
            "sort_data",
            {"data_source": current, "key_name": sort_key, "ascending": order.ascending},
            f"SORTED_DF_{df_counter}",
        )
        df_counter += 1

    aggregate_items = [p for p in ast.select_items if p.is_aggregate]
    limit = ast.limit if ast.limit is not None else -1
    select_counter = 0

    if ast.group_by is not None:
        for item in ast.select_items:
            key_name = (_group_output_column(ast) if item.is_aggregate
                        else item.column.prefixed_name)
            calls.append(ToolCall(
                name="retrieve_data",
                arguments={"data_source": current, "key_name": key_name,
                           "distinct": ast.distinct, "limit": limit},
                label=f"SELECT_COL_{select_counter}",
            ))
            select_counter += 1
    elif not aggregate_items:
        for item in ast.select_items:
            if item.is_derived:
                raise UnsupportedConstructError(
                    "derived projection", "not expressible with the supported tools"
                )
            calls.append(ToolCall(
                name="retrieve_data",
                arguments={"data_source": current, "key_name": item.column.prefixed_name,
                           "distinct": ast.distinct, "limit": limit},
                label=f"SELECT_COL_{select_counter}",
            ))
            select_counter += 1
    else:
        item = aggregate_items[0]
        arguments = {"data_source": current, "operation": item.aggregate}
        if item.column is not None:
            arguments["key_name"] = item.column.prefixed_name
        calls.append(ToolCall(name="aggregate_data", arguments=arguments,
                              label=f"AGGREGATED_DF_{df_counter}"))
        df_counter += 1

    return init, calls


def derive_sel_pool(slot_pool: ToolPool, column_enum: list[dict] | None = None) -> ToolPool:
    """Expand a SLOT pool's categorical arguments into the SEL tool set."""
    if slot_pool.formulation != "SLOT":
        raise ValueError("derive_sel_pool expects a SLOT pool")
    enum = column_enum if column_enum is not None else slot_pool.column_enum
    return build_sel_pool(slot_pool.database, enum)


def _getter_name(prefixed_column: str) -> str:
    return f"get_{pools.sanitize_tool_name(prefixed_column)}"


def rewrite_to_sel_sequence(slot_calls: list[ToolCall]) -> list[ToolCall]:
    """Call-for-call rewrite of a SLOT sequence into the SEL tool names."""
    sel_calls: list[ToolCall] = []
    for call in slot_calls:
        args = dict(call.arguments)
        if call.name == "filter_data":
            condition = args.pop("condition")
            sel_calls.append(ToolCall(f"select_data_{condition}", args, call.label))
        elif call.name == "sort_data":
            ascending = args.pop("ascending")
            name = "sort_data_ascending" if ascending else "sort_data_descending"
            sel_calls.append(ToolCall(name, args, call.label))
        elif call.name == "group_data_by":
            aggregation = args.pop("aggregation")
            sel_calls.append(ToolCall(f"group_data_by_{aggregation}", args, call.label))
        elif call.name == "aggregate_data":
            operation = args.pop("operation")
            sel_calls.append(ToolCall(f"aggregate_data_{operation}", args, call.label))
        elif call.name == "transform_data":
            args.pop("operation_type")
            sel_calls.append(ToolCall("transform_data_substring", args, call.label))
        elif call.name in ("retrieve_data", "select_unique_values"):
            distinct = bool(args.pop("distinct", call.name == "select_unique_values"))
            limit = args.pop("limit", -1)
            getter = ToolCall(
                _getter_name(args["key_name"]),
                {"data_source": args["data_source"]},
                call.label,
            )
            sel_calls.append(getter)
            suffix = call.label or "VALS"
            if distinct:
                previous = sel_calls[-1].label
                sel_calls.append(ToolCall(
                    "distinct_values", {"data_source": f"${previous}$"},
                    f"DISTINCT_{suffix}",
                ))
            if isinstance(limit, int) and limit != -1:
                previous = sel_calls[-1].label
                sel_calls.append(ToolCall(
                    "limit_values", {"data_source": f"${previous}$", "limit": limit},
                    f"LIMITED_{suffix}",
                ))
        else:
            sel_calls.append(call)
    return sel_calls


# --- REST synthesis ---

_PAREN_RE = re.compile(r"\([^)]*\)")


def snake_name(raw: str) -> str:
    cleaned = _PAREN_RE.sub("", raw)
    cleaned = re.sub(r"[^0-9A-Za-z]+", "_", cleaned).strip("_")
    return cleaned.lower() or "value"


def _literal_json_type(value: object) -> str:
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, int):
        return "integer"
    if isinstance(value, float):
        return "number"
    return "string"


def _expression_resource(expr: object) -> str:
    if isinstance(expr, BinaryExpr):
        left = _expression_resource(expr.left)
        if expr.op == "/":
            return f"{left}_ratio"
        op_word = {"+": "plus", "-": "minus", "*": "times"}[expr.op]
        return f"{left}_{op_word}_{_expression_resource(expr.right)}"
    if isinstance(expr, ColumnOperand):
        return snake_name(expr.column.column)
    return "value"


def _projection_resource(item: Projection) -> str:
    if item.is_aggregate:
        if item.column is None:
            return "count"
        return f"{item.aggregate}_{snake_name(item.column.column)}"
    if item.is_derived:
        return _expression_resource(item.expression)
    return snake_name(item.column.column)


def base_resource(ast: SqlAst) -> str:
    parts = [_projection_resource(item) for item in ast.select_items]
    resource = "_".join(dict.fromkeys(parts))
    if ast.group_by is not None:
        resource += f"_by_{snake_name(ast.group_by.key.column)}"
    return resource


@dataclass
class RestEndpoint:
    name: str
    description: str
    path: str
    resource: str
    database: str
    arguments: dict[str, dict]
    params: list[dict]
    sql_template: str

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "path": self.path,
            "resource": self.resource,
            "database": self.database,
            "arguments": self.arguments,
            "params": self.params,
            "sql_template": self.sql_template,
        }


def _endpoint_for_resource(ast: SqlAst, database: str, resource: str,
                           column_descriptions: dict[str, tuple[str, str]] | None) -> RestEndpoint:
    template, values = render_sql(ast, parameterize=True)
    params: list[dict] = []
    arguments: dict[str, dict] = {}
    used: set[str] = set()
    for pred, value in zip(ast.where_conjuncts, values):
        name = snake_name(pred.column.column)
        base = name
        n = 1
        while name in used:
            n += 1
            name = f"{base}_{n}"
        used.add(name)
        description = None
        if column_descriptions is not None:
            entry = column_descriptions.get(pred.column.prefixed_name)
            if entry is not None:
                description = entry[0][:1].upper() + entry[0][1:]
        if description is None:
            description = name.replace("_", " ").capitalize()
        title = name.replace("_", " ").title()
        arguments[name] = {
            "type": _literal_json_type(value),
            "description": description,
            "title": title,
        }
        params.append({"name": name, "column": pred.column.prefixed_name,
                       "condition": pred.condition, "type": _literal_json_type(value)})
    description = f"Get {resource.replace('_', ' ')}"
    if params:
        description += " for a given " + " and ".join(
            p["name"].replace("_", " ") for p in params
        )
    return RestEndpoint(
        name=f"get_{resource}_v1_bird_{database}_{resource}_get",
        description=description,
        path=f"/v1/bird/{database}/{resource}",
        resource=resource,
        database=database,
        arguments=arguments,
        params=params,
        sql_template=template,
    )


def synthesize_rest_endpoint(ast: SqlAst, nl_input: str, database: str,
                             column_descriptions: dict[str, tuple[str, str]] | None = None,
                             ) -> tuple[RestEndpoint, dict]:
    """Deterministic endpoint synthesis: WHERE literals become query parameters.

    Returns the endpoint and the gold arguments for this instance. nl_input
    only influences nothing here on purpose (determinism); the adapter seam
    for an LLM-backed generator is this function's signature.
    """
    endpoint = _endpoint_for_resource(ast, database, base_resource(ast), column_descriptions)
    _, values = render_sql(ast, parameterize=True)
    gold_arguments = {p["name"]: value for p, value in zip(endpoint.params, values)}
    return endpoint, gold_arguments


def deduplicate_endpoints(
    endpoints: list[RestEndpoint],
) -> tuple[list[RestEndpoint], dict[int, int]]:
    """Merge endpoints with identical SQL templates.

    Returns the surviving endpoints (first-appearance order) and a map from
    input index to surviving endpoint index. The survivor keeps the
    lexicographically smallest name of its group. Distinct templates that
    collide on resource names are disambiguated deterministically.
    """
    by_template: dict[str, list[int]] = {}
    for index, endpoint in enumerate(endpoints):
        by_template.setdefault(endpoint.sql_template, []).append(index)

    survivors: list[RestEndpoint] = []
    remap: dict[int, int] = {}
    for template, group in by_template.items():
        best = min(group, key=lambda i: endpoints[i].name)
        survivor = endpoints[best]
        position = len(survivors)
        survivors.append(survivor)
        for index in group:
            remap[index] = position

    taken: set[str] = set()
    for position, endpoint in enumerate(survivors):
        resource = endpoint.resource
        if resource in taken:
            if endpoint.params:
                candidate = resource + "_by_" + "_".join(p["name"] for p in endpoint.params)
            else:
                candidate = resource
            if candidate in taken or candidate == resource:
                base = candidate
                n = 2
                candidate = f"{base}_{n}"
                while candidate in taken:
                    n += 1
                    candidate = f"{base}_{n}"
            resource = candidate
        taken.add(resource)
        if resource != endpoint.resource:
            endpoint.resource = resource
            endpoint.path = f"/v1/bird/{endpoint.database}/{resource}"
            endpoint.name = f"get_{resource}_v1_bird_{endpoint.database}_{resource}_get"
            base_description = f"Get {resource.replace('_', ' ')}"
            if endpoint.params:
                base_description += " for a given " + " and ".join(
                    p["name"].replace("_", " ") for p in endpoint.params
                )
            endpoint.description = base_description
    return survivors, remap


# --- verification against the SQL oracle ---

@dataclass
class VerificationRecord:
    sample_id: object
    formulation: str
    matched: bool
    normalized_gold: list
    normalized_actual: list
    discard_reason: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "formulation": self.formulation,
            "matched": self.matched,
            "normalized_gold": self.normalized_gold,
            "normalized_actual": self.normalized_actual,
            "discard_reason": self.discard_reason,
        }


def execute_sql_oracle(db_path: Path, query: str) -> list[list]:
    conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    try:
        rows = conn.execute(query).fetchall()
    finally:
        conn.close()
    return [list(row) for row in rows]


def verify_equivalence(sample: dict, formulation: str, pool: ToolPool,
                       db_root: Path, workdir: Path) -> VerificationRecord:
    """Execute a gold artifact and compare it with direct SQL execution."""
    db_path = Path(db_root) / f"{sample['dataset_name']}.sqlite"
    oracle = execute_sql_oracle(db_path, sample["query"])
    gold_norm = normalize_answer(oracle)
    sample_id = sample.get("sample_id")
    try:
        if formulation in ("SLOT", "SEL"):
            env = LabelEnv(workdir=Path(workdir), database_root=Path(db_root))
            runtime.run_initialization(sample["initialization_step"], env)
            calls = [ToolCall.from_json_dict(c) for c in sample["output"]]
            outcome = runtime.execute_sequence(calls, env, pool)
            if not outcome.ok:
                return VerificationRecord(sample_id, formulation, False, sorted(map(repr, gold_norm.elements())),
                                          [], discard_reason=outcome.error)
            actual = outcome.result.final_value()
        elif formulation == "REST":
            call = sample["output"][0]
            result = pool.execute(call["name"], call.get("arguments") or {},
                                  LabelEnv(workdir=Path(workdir)))
            actual = result.payload
        else:
            raise ValueError(f"unknown formulation {formulation!r}")
    except ToolError as exc:
        return VerificationRecord(sample_id, formulation, False,
                                  sorted(map(repr, gold_norm.elements())), [],
                                  discard_reason=str(exc))
    actual_norm = normalize_answer(actual)
    matched = normalized_equal(actual_norm, gold_norm)
    return VerificationRecord(
        sample_id,
        formulation,
        matched,
        sorted(map(repr, gold_norm.elements())),
        sorted(map(repr, actual_norm.elements())),
        discard_reason=None if matched else "result mismatch with SQL oracle",
    )
