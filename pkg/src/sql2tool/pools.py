"""Tool pools: per-formulation tool specifications bound to executors.

A `ToolPool` couples the OpenAPI-style spec dicts that models see with the
callables the runtime dispatches to. SLOT pools hold the seven generic
tools, SEL pools the expanded variants plus per-column getters, and REST
pools one executor per synthesized endpoint. Pools serialize to JSON files
and can be renamed wholesale for obfuscation experiments without changing
execution semantics.
"""

from __future__ import annotations

import hashlib
import json
import re
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

from . import runtime
from .runtime import LabelEnv, ToolError, ToolResult
from .sql_frontend import CONDITIONS

SLOT_TOOL_NAMES = (
    "aggregate_data",
    "filter_data",
    "group_data_by",
    "retrieve_data",
    "select_unique_values",
    "sort_data",
    "transform_data",
)

AGG_OPERATIONS = ("count", "sum", "avg", "min", "max")

_DATA_SOURCE_PARAM = {
    "description": "The location of the data file in csv format.",
    "schema": {"type": "string"},
}

_VALUES_SOURCE_PARAM = {
    "description": "A previously retrieved list of values, referenced by its label.",
    "schema": {"type": "string"},
}

_CSV_OUTPUT = "The path to a csv file containing "


def sanitize_tool_name(name: str) -> str:
    return re.sub(r"\W+", "_", name).strip("_")


def _column_block(intro: str, column_enum: list[dict]) -> dict:
    lines = [f"{intro}:"]
    lines += [f"* `{row['key_name']}` - {row['description']}" for row in column_enum]
    return {
        "description": "\n".join(lines),
        "schema": {"type": "string", "enum": [row["key_name"] for row in column_enum]},
    }


def _spec(name: str, description: str, params: dict, required: list[str],
          output_description: str, output_type: str = "string") -> dict:
    return {
        "name": name,
        "description": description,
        "parameters": {"properties": params, "required": required, "type": "object"},
        "output_parameters": {
            "properties": {
                "output_0": {"description": output_description, "type": output_type}
            }
        },
    }


def slot_tool_specs(column_enum: list[dict]) -> dict[str, dict]:
    """Spec dicts for the seven generic tools, with the column enum embedded."""
    key_of = lambda intro: _column_block(intro, column_enum)
    specs = {}
    specs["aggregate_data"] = _spec(
        "aggregate_data",
        "Aggregate the data using the chosen operation. Returns a single-row table "
        "holding the aggregate value. 'count' counts the rows of the input data; the "
        "other operations require a numeric column chosen with 'key_name'.",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to aggregate over"),
            "operation": {
                "description": "the aggregation to apply",
                "schema": {"type": "string", "enum": list(AGG_OPERATIONS)},
            },
        },
        ["data_source", "operation"],
        _CSV_OUTPUT + "the aggregate value",
    )
    specs["filter_data"] = _spec(
        "filter_data",
        "Filter data by comparing the values in column 'key_name' against 'value' "
        "using the chosen condition. Returns the rows that satisfy the condition, "
        "in their original order.",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to filter by"),
            "value": {
                "description": "the value to compare against",
                "schema": {"type": "string"},
            },
            "condition": {
                "description": "the comparison to perform",
                "schema": {"type": "string", "enum": list(CONDITIONS)},
            },
        },
        ["data_source", "key_name", "value", "condition"],
        _CSV_OUTPUT + "the rows that satisfy the condition",
    )
    specs["group_data_by"] = _spec(
        "group_data_by",
        "Group rows by the values in column 'key_name' and aggregate each group. "
        "Returns a table with one row per distinct key holding the key and the "
        "aggregate. 'count' counts the rows of each group and ignores 'target_key'; "
        "the other aggregations apply to the numeric column 'target_key'.",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to group by"),
            "aggregation": {
                "description": "the aggregation applied to each group",
                "schema": {"type": "string", "enum": list(AGG_OPERATIONS)},
            },
            "target_key": key_of("name of key to aggregate within each group"),
        },
        ["data_source", "key_name", "aggregation"],
        _CSV_OUTPUT + "one row per group with its aggregate value",
    )
    specs["retrieve_data"] = _spec(
        "retrieve_data",
        "Retrieve the values of column 'key_name' as a list, in row order. "
        "'distinct' controls whether to only return a list of the distinct elements "
        "in the column and 'limit' truncates the returned results (-1 returns "
        "everything).",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to retrieve"),
            "distinct": {
                "description": "whether to only return distinct values",
                "schema": {"type": "boolean"},
            },
            "limit": {
                "description": "maximum number of values to return, or -1 for no limit",
                "schema": {"type": "integer"},
            },
        },
        ["data_source", "key_name", "distinct", "limit"],
        "The list of values in the chosen column",
        output_type="array",
    )
    specs["select_unique_values"] = _spec(
        "select_unique_values",
        "Return the distinct values of column 'key_name' as a list, keeping the "
        "first occurrence of each value.",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to select unique values from"),
        },
        ["data_source", "key_name"],
        "The list of distinct values in the chosen column",
        output_type="array",
    )
    specs["sort_data"] = _spec(
        "sort_data",
        "Sort data by the values associated with the chosen key='key_name' If the "
        "input data is list-like, returns the sorted list. If the input data is "
        "tabular, returns the table with rows sorted by the values in column "
        "'key_name'. If the data is grouped tables, then sort the groups by the "
        "value in 'key_name'",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to sort by"),
            "ascending": {
                "description": "whether to sort by ascending order",
                "schema": {"type": "boolean"},
            },
        },
        ["data_source", "key_name", "ascending"],
        _CSV_OUTPUT + "data sorted by chosen key",
    )
    specs["transform_data"] = _spec(
        "transform_data",
        "Rewrite the values of column 'key_name' in place using the chosen "
        "operation. 'substring' keeps the character slice [start_index, end_index) "
        "of every value, with indices given in 'operation_args'.",
        {
            "data_source": dict(_DATA_SOURCE_PARAM),
            "key_name": key_of("name of key to transform"),
            "operation_type": {
                "description": "the transformation to apply",
                "schema": {"type": "string", "enum": ["substring"]},
            },
            "operation_args": {
                "description": "arguments of the transformation, e.g. start_index and "
                               "end_index for substring",
                "schema": {"type": "object"},
            },
        },
        ["data_source", "key_name", "operation_type", "operation_args"],
        _CSV_OUTPUT + "the transformed data",
    )
    return specs


def _require_arg(arguments: dict, name: str):
    if name not in arguments:
        raise ToolError("MissingArgument", f"required argument {name!r} is missing")
    return arguments[name]


def _slot_executors() -> dict:
    def run_filter(args, env, label, condition=None):
        return ToolResult("table", runtime.filter_data(
            _require_arg(args, "data_source"), _require_arg(args, "key_name"),
            _require_arg(args, "value"),
            condition if condition is not None else _require_arg(args, "condition"),
            env, label=label or "filtered"))

    def run_sort(args, env, label, ascending=None):
        return ToolResult("table", runtime.sort_data(
            _require_arg(args, "data_source"), _require_arg(args, "key_name"),
            ascending if ascending is not None else _require_arg(args, "ascending"),
            env, label=label or "sorted"))

    def run_group(args, env, label, aggregation=None):
        return ToolResult("table", runtime.group_data_by(
            _require_arg(args, "data_source"), _require_arg(args, "key_name"),
            aggregation if aggregation is not None else _require_arg(args, "aggregation"),
            env, target_key=args.get("target_key"), label=label or "grouped"))

    def run_aggregate(args, env, label, operation=None):
        return ToolResult("table", runtime.aggregate_data(
            _require_arg(args, "data_source"),
            operation if operation is not None else _require_arg(args, "operation"),
            env, key_name=args.get("key_name"), label=label or "aggregated"))

    def run_retrieve(args, env, label):
        return ToolResult("values", runtime.retrieve_data(
            _require_arg(args, "data_source"), _require_arg(args, "key_name"), env,
            distinct=bool(args.get("distinct", False)),
            limit=args.get("limit", -1)))

    def run_unique(args, env, label):
        return ToolResult("values", runtime.select_unique_values(
            _require_arg(args, "data_source"), _require_arg(args, "key_name"), env))

    def run_transform(args, env, label, operation_type=None):
        return ToolResult("table", runtime.transform_data(
            _require_arg(args, "data_source"), _require_arg(args, "key_name"),
            operation_type if operation_type is not None else _require_arg(args, "operation_type"),
            _require_arg(args, "operation_args"), env, label=label or "transformed"))

    return {
        "aggregate_data": run_aggregate,
        "filter_data": run_filter,
        "group_data_by": run_group,
        "retrieve_data": run_retrieve,
        "select_unique_values": run_unique,
        "sort_data": run_sort,
        "transform_data": run_transform,
        "_bindable": {
            "filter": run_filter, "sort": run_sort, "group": run_group,
            "aggregate": run_aggregate, "transform": run_transform,
        },
    }


@dataclass
class ToolPool:
    formulation: str  # SLOT, SEL or REST
    database: str
    tools: dict[str, dict]
    column_enum: list[dict] = field(default_factory=list)
    endpoints: dict[str, dict] = field(default_factory=dict)
    sel_getters: dict[str, str] = field(default_factory=dict)
    obfuscation: dict | None = None
    _executors: dict = field(default_factory=dict, repr=False)
    db_root: Path | None = None

    def tool_names(self) -> list[str]:
        return list(self.tools)

    def execute(self, name: str, arguments: dict, env: LabelEnv,
                label: str | None = None) -> ToolResult:
        executor = self._executors.get(name)
        if executor is None:
            raise ToolError("ToolNotInPool", f"{name!r} is not in the {self.formulation} pool")
        return executor(arguments, env, label)

    def content_hash(self) -> str:
        canonical = json.dumps(list(self.tools.values()), sort_keys=True,
                               ensure_ascii=False).encode("utf-8")
        return hashlib.sha256(canonical).hexdigest()

    # -- renaming (obfuscation) --

    def with_renames(self, tool_renames: dict[str, str],
                     arg_renames: dict[str, dict[str, str]]) -> "ToolPool":
        """A pool with tools and arguments renamed but identical execution."""
        renamed_tools: dict[str, dict] = {}
        executors: dict = {}
        for original, spec in self.tools.items():
            new_name = tool_renames[original]
            renamed_tools[new_name] = _rename_spec(spec, new_name, arg_renames.get(original, {}))
            executors[new_name] = _renamed_executor(
                self._executors[original], arg_renames.get(original, {}))
        pool = ToolPool(
            formulation=self.formulation,
            database=self.database,
            tools=renamed_tools,
            column_enum=list(self.column_enum),
            endpoints=self.endpoints,
            sel_getters=self.sel_getters,
            obfuscation={"tool_names": dict(tool_renames),
                         "arg_names": {k: dict(v) for k, v in arg_renames.items()}},
            db_root=self.db_root,
        )
        pool._executors = executors
        return pool

    # -- serialization --

    def to_json_dict(self) -> dict:
        data = {
            "formulation": self.formulation,
            "database": self.database,
            "column_enum": self.column_enum,
            "tools": list(self.tools.values()),
        }
        if self.formulation == "SEL":
            data["sel_getters"] = self.sel_getters
        if self.formulation == "REST":
            data["endpoints"] = [self.endpoints[name] for name in self.endpoints]
        if self.obfuscation is not None:
            data["obfuscation"] = self.obfuscation
        return data

    def save(self, path: Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(self.to_json_dict(), handle, indent=2, ensure_ascii=False)
            handle.write("\n")


def _rename_spec(spec: dict, new_name: str, arg_map: dict[str, str]) -> dict:
    renamed = json.loads(json.dumps(spec, ensure_ascii=False))
    renamed["name"] = new_name
    if "parameters" in renamed:
        properties = renamed["parameters"]["properties"]
        new_properties = {}
        for original, prop in properties.items():
            target = arg_map.get(original, original)
            prop = dict(prop)
            if target != original:
                prop["name"] = original  # breadcrumb: the pre-rename argument name
            new_properties[target] = prop
        renamed["parameters"]["properties"] = new_properties
        renamed["parameters"]["required"] = [
            arg_map.get(name, name) for name in renamed["parameters"].get("required", [])
        ]
    if "arguments" in renamed:
        new_arguments = {}
        for original, prop in renamed["arguments"].items():
            target = arg_map.get(original, original)
            prop = dict(prop)
            if target != original:
                prop["name"] = original
            new_arguments[target] = prop
        renamed["arguments"] = new_arguments
    return renamed


def _renamed_executor(executor, arg_map: dict[str, str]):
    inverse = {new: original for original, new in arg_map.items()}

    def run(arguments: dict, env: LabelEnv, label):
        translated = {inverse.get(key, key): value for key, value in arguments.items()}
        return executor(translated, env, label)

    return run


def build_slot_pool(database: str, column_enum: list[dict]) -> ToolPool:
    pool = ToolPool(
        formulation="SLOT",
        database=database,
        tools=slot_tool_specs(column_enum),
        column_enum=list(column_enum),
    )
    executors = _slot_executors()
    executors.pop("_bindable")
    pool._executors = executors
    return pool


# --- SEL pool ---

def sel_tool_specs(column_enum: list[dict]) -> tuple[dict[str, dict], dict[str, str]]:
    """Spec dicts for the expanded pool plus the getter-name -> column mapping."""
    slot = slot_tool_specs(column_enum)
    specs: dict[str, dict] = {}

    for condition in CONDITIONS:
        spec = json.loads(json.dumps(slot["filter_data"], ensure_ascii=False))
        spec["name"] = f"select_data_{condition}"
        spec["description"] = (
            f"Filter data by comparing the values in column 'key_name' against "
            f"'value' using the {condition} condition. Returns the rows that "
            f"satisfy the condition, in their original order."
        )
        del spec["parameters"]["properties"]["condition"]
        spec["parameters"]["required"] = ["data_source", "key_name", "value"]
        specs[spec["name"]] = spec

    for direction, flag in (("ascending", True), ("descending", False)):
        spec = json.loads(json.dumps(slot["sort_data"], ensure_ascii=False))
        spec["name"] = f"sort_data_{direction}"
        del spec["parameters"]["properties"]["ascending"]
        spec["parameters"]["required"] = ["data_source", "key_name"]
        specs[spec["name"]] = spec

    for operation in AGG_OPERATIONS:
        spec = json.loads(json.dumps(slot["group_data_by"], ensure_ascii=False))
        spec["name"] = f"group_data_by_{operation}"
        del spec["parameters"]["properties"]["aggregation"]
        spec["parameters"]["required"] = ["data_source", "key_name"]
        specs[spec["name"]] = spec

    for operation in AGG_OPERATIONS:
        spec = json.loads(json.dumps(slot["aggregate_data"], ensure_ascii=False))
        spec["name"] = f"aggregate_data_{operation}"
        del spec["parameters"]["properties"]["operation"]
        spec["parameters"]["required"] = ["data_source"]
        specs[spec["name"]] = spec

    spec = json.loads(json.dumps(slot["transform_data"], ensure_ascii=False))
    spec["name"] = "transform_data_substring"
    del spec["parameters"]["properties"]["operation_type"]
    spec["parameters"]["required"] = ["data_source", "key_name", "operation_args"]
    specs[spec["name"]] = spec

    getters: dict[str, str] = {}
    for row in column_enum:
        name = f"get_{sanitize_tool_name(row['key_name'])}"
        base = name
        n = 1
        while name in getters or name in specs:
            n += 1
            name = f"{base}_{n}"
        getters[name] = row["key_name"]
        specs[name] = _spec(
            name,
            f"Get the values of column '{row['key_name']}' ({row['description']}) "
            f"as a list, in row order.",
            {"data_source": dict(_DATA_SOURCE_PARAM)},
            ["data_source"],
            f"The list of values in column '{row['key_name']}'",
            output_type="array",
        )

    specs["distinct_values"] = _spec(
        "distinct_values",
        "Reduce a previously retrieved list of values to its distinct elements, "
        "keeping the first occurrence of each value.",
        {"data_source": dict(_VALUES_SOURCE_PARAM)},
        ["data_source"],
        "The distinct values of the input list",
        output_type="array",
    )
    specs["limit_values"] = _spec(
        "limit_values",
        "Truncate a previously retrieved list of values to at most 'limit' elements.",
        {"data_source": dict(_VALUES_SOURCE_PARAM),
         "limit": {"description": "maximum number of values to keep",
                   "schema": {"type": "integer"}}},
        ["data_source", "limit"],
        "The truncated list of values",
        output_type="array",
    )
    return specs, getters


def build_sel_pool(database: str, column_enum: list[dict]) -> ToolPool:
    specs, getters = sel_tool_specs(column_enum)
    pool = ToolPool(
        formulation="SEL",
        database=database,
        tools=specs,
        column_enum=list(column_enum),
        sel_getters=getters,
    )
    bindable = _slot_executors()["_bindable"]
    executors: dict = {}
    for condition in CONDITIONS:
        executors[f"select_data_{condition}"] = (
            lambda args, env, label, _c=condition: bindable["filter"](args, env, label, condition=_c)
        )
    executors["sort_data_ascending"] = lambda args, env, label: bindable["sort"](
        args, env, label, ascending=True)
    executors["sort_data_descending"] = lambda args, env, label: bindable["sort"](
        args, env, label, ascending=False)
    for operation in AGG_OPERATIONS:
        executors[f"group_data_by_{operation}"] = (
            lambda args, env, label, _o=operation: bindable["group"](args, env, label, aggregation=_o)
        )
        executors[f"aggregate_data_{operation}"] = (
            lambda args, env, label, _o=operation: bindable["aggregate"](args, env, label, operation=_o)
        )
    executors["transform_data_substring"] = lambda args, env, label: bindable["transform"](
        args, env, label, operation_type="substring")

    def make_getter(column: str):
        def run(args, env, label):
            return ToolResult("values", runtime.retrieve_data(
                _require_arg(args, "data_source"), column, env, distinct=False, limit=-1))
        return run

    for name, column in getters.items():
        executors[name] = make_getter(column)

    def run_distinct(args, env, label):
        values = runtime._require_values(_require_arg(args, "data_source"))
        seen = set()
        unique = []
        for value in values:
            if value not in seen:
                seen.add(value)
                unique.append(value)
        return ToolResult("values", unique)

    def run_limit(args, env, label):
        values = runtime._require_values(_require_arg(args, "data_source"))
        limit = _require_arg(args, "limit")
        if not isinstance(limit, int) or isinstance(limit, bool) or (limit < 1 and limit != -1):
            raise ToolError("BadLimit", f"limit must be >= 1 or -1, got {limit!r}")
        return ToolResult("values", values if limit == -1 else values[:limit])

    executors["distinct_values"] = run_distinct
    executors["limit_values"] = run_limit
    pool._executors = executors
    return pool


# --- REST pool ---

def _rest_executor(endpoint: dict, database: str, db_root: Path):
    def run(arguments: dict, env: LabelEnv, label):
        params = []
        for descriptor in endpoint["params"]:
            name = descriptor["name"]
            if name not in arguments:
                raise ToolError("MissingParam", f"required parameter {name!r} is missing")
            params.append(arguments[name])
        db_path = Path(db_root) / f"{database}.sqlite"
        conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
        try:
            cursor = conn.execute(endpoint["sql_template"], params)
            rows = cursor.fetchall()
            width = len(cursor.description)
        except sqlite3.Error as exc:
            raise ToolError("ExecutionError", str(exc))
        finally:
            conn.close()
        values = [row[0] for row in rows] if width == 1 else [list(row) for row in rows]
        return ToolResult("values", {endpoint["resource"]: values})
    return run


def build_rest_pool(database: str, endpoints: list[dict], db_root: Path | None = None) -> ToolPool:
    tools = {}
    endpoint_map = {}
    for endpoint in endpoints:
        spec = {
            "name": endpoint["name"],
            "description": endpoint["description"],
            "arguments": endpoint["arguments"],
            "path": endpoint["path"],
        }
        tools[endpoint["name"]] = spec
        endpoint_map[endpoint["name"]] = endpoint
    pool = ToolPool(
        formulation="REST",
        database=database,
        tools=tools,
        endpoints=endpoint_map,
        db_root=Path(db_root) if db_root is not None else None,
    )
    if db_root is not None:
        pool._executors = {
            name: _rest_executor(endpoint, database, Path(db_root))
            for name, endpoint in endpoint_map.items()
        }
    return pool


def load_pool(path: Path, db_root: Path | None = None) -> ToolPool:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    formulation = data["formulation"]
    database = data["database"]
    if formulation == "SLOT":
        pool = build_slot_pool(database, data.get("column_enum", []))
    elif formulation == "SEL":
        pool = build_sel_pool(database, data.get("column_enum", []))
    elif formulation == "REST":
        pool = build_rest_pool(database, data.get("endpoints", []), db_root=db_root)
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    obfuscation = data.get("obfuscation")
    if obfuscation is not None:
        pool = pool.with_renames(obfuscation["tool_names"], obfuscation["arg_names"])
    return pool
