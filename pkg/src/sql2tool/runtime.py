"""File-backed execution of tool-call sequences.

Tables travel as RFC-4180 CSV files whose header row carries
``{table}_{column}`` prefixed names; an empty field is NULL. A column is
numeric for comparison/sorting/aggregation iff every non-NULL cell parses
as a number. Tool outputs bind to labels in a LabelEnv and later calls
reference them with the ``$LABEL$`` syntax; the runtime resolves those
references so models never touch payload files themselves.
"""

from __future__ import annotations

import csv
import re
import sqlite3
from dataclasses import dataclass, field
from pathlib import Path

from .sql_frontend import CONDITIONS

STARTING_TABLE_LABEL = "starting_table_var"

_LABEL_REF_RE = re.compile(r"^\$([^$]+)\$$")


class ToolError(Exception):
    """Execution failure inside a tool, tagged with a stable error code."""

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


@dataclass(frozen=True)
class TableHandle:
    path: Path
    schema: tuple[str, ...]
    row_count: int


@dataclass(frozen=True)
class ToolResult:
    kind: str  # "table" or "values"
    payload: object

    def final_value(self) -> object:
        """Materialize the result for answer comparison."""
        if self.kind == "values":
            return self.payload
        header, rows = read_table(self.payload)
        numeric = [_column_is_numeric(rows, i) for i in range(len(header))]
        out = [
            [_typed_cell(cell, numeric[i]) for i, cell in enumerate(row)]
            for row in rows
        ]
        if len(header) == 1:
            return [row[0] for row in out]
        return out


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: dict
    label: str | None = None

    def to_json_dict(self) -> dict:
        return {"name": self.name, "arguments": dict(self.arguments), "label": self.label}

    @classmethod
    def from_json_dict(cls, data: dict) -> "ToolCall":
        return cls(name=data["name"], arguments=dict(data.get("arguments") or {}),
                   label=data.get("label"))


@dataclass
class LabelEnv:
    """Per-instance label bindings plus the workdir payload files live in."""

    workdir: Path
    database_root: Path | None = None
    bindings: dict[str, object] = field(default_factory=dict)
    _counter: int = 0

    def bind(self, label: str, value: object) -> None:
        self.bindings[label] = value

    def payload_path(self, label: str) -> Path:
        self._counter += 1
        safe = re.sub(r"\W+", "_", label).strip("_") or "payload"
        return Path(self.workdir) / f"{self._counter:03d}_{safe}.csv"

    def resolve(self, value: object) -> object:
        if isinstance(value, str):
            match = _LABEL_REF_RE.match(value)
            if match:
                label = match.group(1)
                if label not in self.bindings:
                    raise ToolError("UnresolvedReference", f"label {label!r} is not bound")
                return self.bindings[label]
        return value


# --- CSV table IO ---

def write_table(path: Path, header: list[str], rows: list[list]) -> TableHandle:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if cell is None else str(cell) for cell in row])
    return TableHandle(path=path, schema=tuple(header), row_count=len(rows))


def read_table(handle: TableHandle | Path | str) -> tuple[list[str], list[list[str | None]]]:
    path = handle.path if isinstance(handle, TableHandle) else Path(handle)
    with open(path, encoding="utf-8", newline="") as stream:
        reader = csv.reader(stream)
        try:
            header = next(reader)
        except StopIteration:
            raise ToolError("BadPayload", f"{path} has no header row")
        rows = [[cell if cell != "" else None for cell in row] for row in reader]
    for row in rows:
        if len(row) != len(header):
            raise ToolError("BadPayload", f"{path} row arity does not match header")
    return header, rows


def _parse_number(cell: str) -> float | int | None:
    try:
        return int(cell)
    except ValueError:
        try:
            return float(cell)
        except ValueError:
            return None


def _column_is_numeric(rows: list[list], index: int) -> bool:
    seen = False
    for row in rows:
        cell = row[index]
        if cell is None:
            continue
        seen = True
        if _parse_number(str(cell)) is None:
            return False
    return seen


def _typed_cell(cell: str | None, numeric: bool) -> object:
    if cell is None:
        return None
    if numeric:
        return _parse_number(str(cell))
    return cell


def _column_index(handle_header: list[str], key_name: str) -> int:
    try:
        return handle_header.index(key_name)
    except ValueError:
        raise ToolError("UnknownColumn", f"{key_name!r} not in schema {handle_header}")


def _require_table(value: object) -> TableHandle:
    if not isinstance(value, TableHandle):
        raise ToolError("BadPayload", "expected a table payload")
    return value


def _require_values(value: object) -> list:
    if isinstance(value, ToolResult):
        value = value.payload
    if not isinstance(value, list):
        raise ToolError("BadPayload", "expected a values payload")
    return value


# --- join initialization ---

def _qident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def initialize_active_data(
    condition_sequence: list,
    alias_to_table_dict: dict,
    database_path: str | Path,
    env: LabelEnv,
) -> TableHandle:
    """Perform every join in one step and bind the result to starting_table_var.

    Columns of the joined table are renamed to ``{table}_{column}`` using the
    modified table names, so self-joined tables stay distinguishable.
    """
    db_path = Path(database_path)
    if not db_path.is_absolute() and env.database_root is not None:
        db_path = Path(env.database_root) / db_path
    if not db_path.exists():
        raise ToolError("MissingTable", f"database file {db_path} does not exist")

    aliases = list(alias_to_table_dict)
    if not aliases:
        raise ToolError("MissingTable", "alias_to_table_dict is empty")

    conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    try:
        existing = {
            row[0] for row in conn.execute("SELECT name FROM sqlite_master WHERE type='table'")
        }
        table_columns: dict[str, list[str]] = {}
        for alias in aliases:
            entry = alias_to_table_dict[alias]
            original = entry["original_table_name"]
            if original not in existing:
                raise ToolError("MissingTable", f"table {original!r} not in database")
            cols = [row[1] for row in conn.execute(f"PRAGMA table_info({_qident(original)})")]
            table_columns[alias] = cols

        def check_column(ref: str) -> tuple[str, str]:
            alias, _, column = ref.partition(".")
            if alias not in alias_to_table_dict:
                raise ToolError("MissingColumn", f"unknown alias in join condition {ref!r}")
            if column not in table_columns[alias]:
                raise ToolError("MissingColumn", f"{ref!r} does not resolve")
            return alias, column

        joined = {aliases[0]}
        sql_parts = [
            "SELECT " + ", ".join(f"{_qident(a)}.*" for a in aliases),
            f"FROM {_qident(alias_to_table_dict[aliases[0]]['original_table_name'])} "
            f"AS {_qident(aliases[0])}",
        ]
        for condition in condition_sequence:
            left, right, kind = condition[0], condition[1], condition[2]
            if str(kind).upper() != "INNER":
                raise ToolError("MissingTable", f"unsupported join kind {kind!r}")
            left_alias, left_col = check_column(left)
            right_alias, right_col = check_column(right)
            if left_alias in joined and right_alias not in joined:
                new_alias = right_alias
            elif right_alias in joined and left_alias not in joined:
                new_alias = left_alias
            else:
                raise ToolError("MissingColumn", f"join condition {left}={right} is not sequential")
            joined.add(new_alias)
            sql_parts.append(
                f"INNER JOIN {_qident(alias_to_table_dict[new_alias]['original_table_name'])} "
                f"AS {_qident(new_alias)} ON {_qident(left_alias)}.{_qident(left_col)} "
                f"= {_qident(right_alias)}.{_qident(right_col)}"
            )
        rows = conn.execute(" ".join(sql_parts)).fetchall()
    finally:
        conn.close()

    header: list[str] = []
    for alias in aliases:
        prefix = alias_to_table_dict[alias].get("modified_table_name") or \
            alias_to_table_dict[alias]["original_table_name"]
        header.extend(f"{prefix}_{column}" for column in table_columns[alias])

    handle = write_table(env.payload_path(STARTING_TABLE_LABEL), header, [list(r) for r in rows])
    env.bind(STARTING_TABLE_LABEL, handle)
    return handle


# --- the seven tools ---

def filter_data(data_source, key_name: str, value, condition: str, env: LabelEnv,
                label: str = "filtered") -> TableHandle:
    table = _require_table(data_source)
    if condition not in CONDITIONS:
        raise ToolError("UnknownCondition", f"{condition!r} is not a supported condition")
    header, rows = read_table(table)
    index = _column_index(header, key_name)
    numeric = _column_is_numeric(rows, index)
    value_number = _parse_number(str(value)) if not isinstance(value, (int, float)) else value
    use_numeric = numeric and value_number is not None and condition in (
        "equal_to", "not_equal_to", "greater_than", "less_than",
        "greater_than_equal_to", "less_than_equal_to",
    )

    def keep(cell: str | None) -> bool:
        if cell is None:
            return False
        if condition == "contains":
            return str(value) in cell
        if condition == "like":
            return _like_match(str(value), cell)
        if use_numeric:
            left, right = float(_parse_number(cell)), float(value_number)
        else:
            left, right = cell, str(value)
        if condition == "equal_to":
            return left == right
        if condition == "not_equal_to":
            return left != right
        if condition == "greater_than":
            return left > right
        if condition == "less_than":
            return left < right
        if condition == "greater_than_equal_to":
            return left >= right
        return left <= right

    kept = [row for row in rows if keep(row[index])]
    return write_table(env.payload_path(label), header, kept)


def _like_match(pattern: str, cell: str) -> bool:
    regex = []
    for char in pattern:
        if char == "%":
            regex.append(".*")
        elif char == "_":
            regex.append(".")
        else:
            regex.append(re.escape(char.lower()))
    return re.fullmatch("".join(regex), cell.lower(), flags=re.DOTALL) is not None


def sort_data(data_source, key_name: str, ascending: bool, env: LabelEnv,
              label: str = "sorted") -> TableHandle:
    table = _require_table(data_source)
    header, rows = read_table(table)
    index = _column_index(header, key_name)
    numeric = _column_is_numeric(rows, index)

    present = [row for row in rows if row[index] is not None]
    missing = [row for row in rows if row[index] is None]
    if numeric:
        present.sort(key=lambda row: float(_parse_number(row[index])), reverse=not ascending)
    else:
        present.sort(key=lambda row: row[index], reverse=not ascending)
    # empty cells sort last regardless of direction
    return write_table(env.payload_path(label), header, present + missing)


def _aggregate(values: list[str], operation: str, numeric: bool, column: str):
    cells = [cell for cell in values if cell is not None]
    if operation == "count":
        return len(values)
    if not numeric:
        raise ToolError("NonNumericAggregate",
                        f"{operation} requires a numeric column, {column!r} is not")
    numbers = [_parse_number(cell) for cell in cells]
    if not numbers:
        return None
    if operation == "sum":
        return sum(numbers)
    if operation == "avg":
        return sum(float(n) for n in numbers) / len(numbers)
    if operation == "min":
        return min(numbers)
    return max(numbers)


def group_data_by(data_source, key_name: str, aggregation: str, env: LabelEnv,
                  target_key: str | None = None, label: str = "grouped") -> TableHandle:
    table = _require_table(data_source)
    if aggregation not in ("count", "sum", "avg", "min", "max"):
        raise ToolError("UnknownCondition", f"unsupported aggregation {aggregation!r}")
    if aggregation != "count" and not target_key:
        raise ToolError("UnknownColumn", f"aggregation {aggregation!r} requires target_key")
    header, rows = read_table(table)
    key_index = _column_index(header, key_name)
    if aggregation == "count":
        target_index = None
        numeric = True
        out_column = "count"
    else:
        target_index = _column_index(header, target_key)
        numeric = _column_is_numeric(rows, target_index)
        out_column = f"{aggregation}_{target_key}"

    groups: dict = {}
    order: list = []
    for row in rows:
        key = row[key_index]
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(row)

    out_rows = []
    for key in order:
        members = groups[key]
        if aggregation == "count":
            value = len(members)
        else:
            value = _aggregate([m[target_index] for m in members], aggregation,
                               numeric, target_key)
        out_rows.append([key, value])
    return write_table(env.payload_path(label), [key_name, out_column], out_rows)


def aggregate_data(data_source, operation: str, env: LabelEnv,
                   key_name: str | None = None, label: str = "aggregated") -> TableHandle:
    table = _require_table(data_source)
    if operation not in ("count", "sum", "avg", "min", "max"):
        raise ToolError("UnknownCondition", f"unsupported operation {operation!r}")
    if operation != "count" and not key_name:
        raise ToolError("UnknownColumn", f"operation {operation!r} requires key_name")
    header, rows = read_table(table)
    if operation == "count":
        out_column = "count"
        value = len(rows)
    else:
        index = _column_index(header, key_name)
        numeric = _column_is_numeric(rows, index)
        out_column = f"{operation}_{key_name}"
        value = _aggregate([row[index] for row in rows], operation, numeric, key_name)
    return write_table(env.payload_path(label), [out_column], [[value]])


def retrieve_data(data_source, key_name: str, env: LabelEnv,
                  distinct: bool = False, limit: int = -1) -> list:
    table = _require_table(data_source)
    if not isinstance(limit, int) or isinstance(limit, bool) or (limit < 1 and limit != -1):
        raise ToolError("BadLimit", f"limit must be >= 1 or -1, got {limit!r}")
    header, rows = read_table(table)
    index = _column_index(header, key_name)
    numeric = _column_is_numeric(rows, index)
    values = [_typed_cell(row[index], numeric) for row in rows]
    if distinct:
        seen = set()
        unique = []
        for value in values:
            if value not in seen:
                seen.add(value)
                unique.append(value)
        values = unique
    if limit != -1:
        values = values[:limit]
    return values


def select_unique_values(data_source, key_name: str, env: LabelEnv) -> list:
    return retrieve_data(data_source, key_name, env, distinct=True, limit=-1)


def transform_data(data_source, key_name: str, operation_type: str, operation_args: dict,
                   env: LabelEnv, label: str = "transformed") -> TableHandle:
    table = _require_table(data_source)
    if operation_type != "substring":
        raise ToolError("UnknownOperation", f"unsupported operation_type {operation_type!r}")
    try:
        start = int(operation_args["start_index"])
        end = int(operation_args["end_index"])
    except (KeyError, TypeError, ValueError):
        raise ToolError("BadRange", "substring requires integer start_index and end_index")
    if start < 0 or end < start:
        raise ToolError("BadRange", f"invalid slice [{start}, {end})")
    header, rows = read_table(table)
    index = _column_index(header, key_name)
    out_rows = []
    for row in rows:
        new = list(row)
        if new[index] is not None:
            new[index] = str(new[index])[start:end]
        out_rows.append(new)
    return write_table(env.payload_path(label), header, out_rows)


def run_initialization(step: dict, env: LabelEnv) -> TableHandle:
    """Execute a serialized initialization step and bind its label."""
    if step.get("name") != "initialize_active_data":
        raise ToolError("BadPayload", "initialization step must call initialize_active_data")
    args = step.get("arguments") or {}
    handle = initialize_active_data(
        args.get("condition_sequence") or [],
        args.get("alias_to_table_dict") or {},
        args.get("database_path", ""),
        env,
    )
    label = step.get("label") or STARTING_TABLE_LABEL
    env.bind(label, handle)
    return handle


@dataclass(frozen=True)
class StepRecord:
    index: int
    name: str
    label: str | None
    ok: bool
    error: str | None = None


@dataclass
class ExecutionOutcome:
    result: ToolResult | None
    trace: list[StepRecord]
    failed_step: int | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def execute_sequence(calls: list[ToolCall], env: LabelEnv, pool) -> ExecutionOutcome:
    """Run a sequence, binding each result to its label; stop at the first error.

    `pool` must expose execute(name, arguments, env, label=...) and raise
    ToolError("ToolNotInPool", ...) for unknown names.
    """
    trace: list[StepRecord] = []
    if not calls:
        return ExecutionOutcome(result=None, trace=trace, failed_step=None,
                                error="NoFinalResult: empty sequence")
    result: ToolResult | None = None
    for index, call in enumerate(calls):
        try:
            resolved = {key: env.resolve(value) for key, value in call.arguments.items()}
            result = pool.execute(call.name, resolved, env, label=call.label)
            if call.label:
                env.bind(call.label, result.payload)
            trace.append(StepRecord(index, call.name, call.label, True))
        except ToolError as exc:
            trace.append(StepRecord(index, call.name, call.label, False, str(exc)))
            return ExecutionOutcome(result=None, trace=trace, failed_step=index, error=str(exc))
    return ExecutionOutcome(result=result, trace=trace)
