"""Parser for the constrained SELECT dialect the tool pipeline supports.

The dialect covers single read-only SELECT statements with inner joins,
AND-connected WHERE conjuncts, a single GROUP BY key, ORDER BY + LIMIT,
DISTINCT, the five standard aggregates, and SUBSTR-based predicates.
Everything else (OR, CASE, nested SELECT, UNION, BETWEEN, IN, outer joins,
DML, ...) is rejected with an explicit UnsupportedConstructError naming
the offending construct.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


AGGREGATES = ("count", "sum", "avg", "min", "max")

CONDITIONS = (
    "equal_to",
    "not_equal_to",
    "greater_than",
    "less_than",
    "greater_than_equal_to",
    "less_than_equal_to",
    "contains",
    "like",
)

_COMPARISON_TO_CONDITION = {
    "=": "equal_to",
    "!=": "not_equal_to",
    "<>": "not_equal_to",
    ">": "greater_than",
    "<": "less_than",
    ">=": "greater_than_equal_to",
    "<=": "less_than_equal_to",
}

_CONDITION_TO_OP = {v: k for k, v in _COMPARISON_TO_CONDITION.items() if k != "<>"}

# Constructs outside the dialect, rejected by name.
_UNSUPPORTED_KEYWORDS = {
    "OR", "CASE", "UNION", "INTERSECT", "EXCEPT", "BETWEEN", "IN", "EXISTS",
    "HAVING", "NOT", "LEFT", "RIGHT", "FULL", "OUTER", "CROSS", "NATURAL",
    "OFFSET", "WITH", "NULL", "IS",
}

_DML_KEYWORDS = {
    "INSERT", "UPDATE", "DELETE", "CREATE", "DROP", "ALTER", "REPLACE",
    "TRUNCATE", "PRAGMA", "ATTACH",
}

_KEYWORDS = {
    "SELECT", "DISTINCT", "FROM", "AS", "INNER", "JOIN", "ON", "WHERE",
    "AND", "GROUP", "BY", "ORDER", "ASC", "DESC", "LIMIT", "LIKE", "CAST",
    "REAL", "SUBSTR", "COUNT", "SUM", "AVG", "MIN", "MAX",
} | _UNSUPPORTED_KEYWORDS | _DML_KEYWORDS


class SqlSyntaxError(ValueError):
    """Malformed SQL that does not scan or parse."""


class UnsupportedConstructError(ValueError):
    """Well-formed SQL using a construct outside the supported dialect."""

    def __init__(self, construct: str, detail: str = ""):
        self.construct = construct
        message = f"unsupported construct: {construct}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


@dataclass(frozen=True)
class ColumnRef:
    table: str
    column: str

    @property
    def prefixed_name(self) -> str:
        return f"{self.table}_{self.column}"


@dataclass(frozen=True)
class TransformSpec:
    """Substring rewrite applied to a column before a comparison."""

    operation: str
    start_index: int
    end_index: int


@dataclass(frozen=True)
class Predicate:
    column: ColumnRef
    condition: str
    value: object
    transform: TransformSpec | None = None


# Arithmetic expression nodes appear only in derived projections and order
# keys (e.g. ratio orderings); they are renderable back to SQL but the SLOT
# compiler does not accept them.

@dataclass(frozen=True)
class ColumnOperand:
    column: ColumnRef
    cast_real: bool = False


@dataclass(frozen=True)
class LiteralOperand:
    value: object


@dataclass(frozen=True)
class BinaryExpr:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Projection:
    column: ColumnRef | None = None
    aggregate: str | None = None
    alias: str | None = None
    expression: object | None = None

    @property
    def is_aggregate(self) -> bool:
        return self.aggregate is not None

    @property
    def is_derived(self) -> bool:
        return self.expression is not None


@dataclass(frozen=True)
class JoinSpec:
    left_col: str
    right_col: str
    kind: str = "INNER"


@dataclass(frozen=True)
class TableAlias:
    alias: str
    table: str
    modified: str


@dataclass(frozen=True)
class GroupSpec:
    key: ColumnRef
    aggregation: str = "count"
    target: ColumnRef | None = None


@dataclass(frozen=True)
class OrderSpec:
    key: ColumnRef | None
    ascending: bool
    aggregate: str | None = None
    agg_target: ColumnRef | None = None
    transform: TransformSpec | None = None
    expression: object | None = None

    @property
    def is_derived(self) -> bool:
        return self.expression is not None


@dataclass(frozen=True)
class LiteralBinding:
    """One WHERE literal in source order, as lifted for REST parameters."""

    column: ColumnRef
    condition: str
    value: object
    transform: TransformSpec | None = None


@dataclass
class SqlAst:
    select_items: list[Projection]
    tables: list[TableAlias]
    joins: list[JoinSpec]
    where_conjuncts: list[Predicate]
    group_by: GroupSpec | None = None
    order_by: OrderSpec | None = None
    limit: int | None = None
    distinct: bool = False

    @property
    def alias_map(self) -> dict[str, TableAlias]:
        return {t.alias: t for t in self.tables}

    def schema_tables(self) -> list[str]:
        return [t.modified for t in self.tables]


# --- tokenizer ---

@dataclass(frozen=True)
class _Token:
    kind: str  # KEYWORD, IDENT, QIDENT, STRING, NUMBER, OP
    value: object
    pos: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+\.\d+|\.\d+|\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<qident>`[^`]*`|"[^"]*")
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><>|!=|>=|<=|[(),.*=<>/+-])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise SqlSyntaxError(f"unexpected character {text[pos]!r} at offset {pos}")
        if match.lastgroup == "ws":
            pos = match.end()
            continue
        value: object = match.group()
        kind = match.lastgroup
        if kind == "number":
            raw = match.group()
            value = float(raw) if "." in raw else int(raw)
            kind = "NUMBER"
        elif kind == "string":
            value = match.group()[1:-1].replace("''", "'")
            kind = "STRING"
        elif kind == "qident":
            value = match.group()[1:-1]
            kind = "QIDENT"
        elif kind == "ident":
            upper = match.group().upper()
            if upper in _KEYWORDS:
                kind, value = "KEYWORD", upper
            else:
                kind = "IDENT"
        else:
            kind = "OP"
        tokens.append(_Token(kind, value, match.start()))
        pos = match.end()
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.i = 0

    # -- token helpers --

    def peek(self, offset: int = 0) -> _Token | None:
        j = self.i + offset
        return self.tokens[j] if j < len(self.tokens) else None

    def next(self) -> _Token:
        token = self.peek()
        if token is None:
            raise SqlSyntaxError("unexpected end of query")
        self.i += 1
        return token

    def accept_keyword(self, *names: str) -> bool:
        token = self.peek()
        if token and token.kind == "KEYWORD" and token.value in names:
            self.i += 1
            return True
        return False

    def expect_keyword(self, name: str) -> None:
        if not self.accept_keyword(name):
            token = self.peek()
            found = repr(token.value) if token else "end of query"
            raise SqlSyntaxError(f"expected {name}, found {found}")

    def accept_op(self, op: str) -> bool:
        token = self.peek()
        if token and token.kind == "OP" and token.value == op:
            self.i += 1
            return True
        return False

    def expect_op(self, op: str) -> None:
        if not self.accept_op(op):
            token = self.peek()
            found = repr(token.value) if token else "end of query"
            raise SqlSyntaxError(f"expected {op!r}, found {found}")

    def _reject_unsupported(self, token: _Token) -> None:
        if token.kind == "KEYWORD":
            if token.value in _DML_KEYWORDS:
                raise UnsupportedConstructError(token.value, "read-only SELECT queries only")
            if token.value == "SELECT":
                raise UnsupportedConstructError("nested SELECT")
            if token.value in _UNSUPPORTED_KEYWORDS:
                raise UnsupportedConstructError(token.value)

    # -- grammar --

    def parse_query(self) -> SqlAst:
        first = self.peek()
        if first is not None and first.kind == "KEYWORD" and first.value in _DML_KEYWORDS:
            raise UnsupportedConstructError(first.value, "read-only SELECT queries only")
        self.expect_keyword("SELECT")
        distinct = self.accept_keyword("DISTINCT")

        raw_items = [self._parse_select_item() for _ in self._comma_list()]

        self.expect_keyword("FROM")
        tables, joins = self._parse_from()

        self._aliases = self._build_alias_lookup(tables)
        select_items = [self._resolve_projection(item) for item in raw_items]

        conjuncts: list[Predicate] = []
        if self.accept_keyword("WHERE"):
            conjuncts.append(self._parse_predicate())
            while self.accept_keyword("AND"):
                conjuncts.append(self._parse_predicate())

        group_key = None
        if self.accept_keyword("GROUP"):
            self.expect_keyword("BY")
            group_key = self._parse_column_ref()
            if self.accept_op(","):
                raise UnsupportedConstructError("multi-key GROUP BY")

        order_by = None
        if self.accept_keyword("ORDER"):
            self.expect_keyword("BY")
            order_by = self._parse_order()

        limit = None
        if self.accept_keyword("LIMIT"):
            token = self.next()
            if token.kind != "NUMBER" or not isinstance(token.value, int) or token.value < 0:
                raise SqlSyntaxError("LIMIT expects a non-negative integer")
            limit = token.value

        trailing = self.peek()
        if trailing is not None:
            self._reject_unsupported(trailing)
            raise SqlSyntaxError(f"unexpected trailing token {trailing.value!r}")

        ast = SqlAst(
            select_items=select_items,
            tables=tables,
            joins=joins,
            where_conjuncts=conjuncts,
            group_by=None,
            order_by=order_by,
            limit=limit,
            distinct=distinct,
        )
        self._attach_group(ast, group_key)
        self._validate(ast)
        return ast

    def _comma_list(self):
        yield None
        while self.accept_op(","):
            yield None

    # select items are parsed before aliases are known, so column references
    # stay raw (qualifier, name) pairs until _resolve_projection runs.

    def _parse_select_item(self) -> dict:
        token = self.peek()
        if token is None:
            raise SqlSyntaxError("unexpected end of query in SELECT list")
        if token.kind == "KEYWORD" and token.value in {a.upper() for a in AGGREGATES}:
            agg = str(token.value).lower()
            self.next()
            self.expect_op("(")
            if self.accept_keyword("DISTINCT"):
                raise UnsupportedConstructError("aggregate DISTINCT")
            if self.accept_op("*"):
                if agg != "count":
                    raise SqlSyntaxError(f"{agg.upper()}(*) is not valid SQL")
                target = None
            else:
                target = self._parse_raw_column()
            self.expect_op(")")
            return {"kind": "aggregate", "aggregate": agg, "target": target,
                    "alias": self._parse_optional_alias()}
        expr = self._parse_raw_expression()
        alias = self._parse_optional_alias()
        if expr[0] == "col":
            return {"kind": "column", "column": expr, "alias": alias}
        return {"kind": "derived", "expression": expr, "alias": alias}

    def _parse_optional_alias(self) -> str | None:
        if self.accept_keyword("AS"):
            token = self.next()
            if token.kind not in ("IDENT", "QIDENT"):
                raise SqlSyntaxError("expected alias name after AS")
            return str(token.value)
        token = self.peek()
        if token and token.kind in ("IDENT", "QIDENT"):
            nxt = self.peek(1)
            # bare alias only makes sense right before a separator
            if nxt is None or (nxt.kind == "OP" and nxt.value == ",") or (
                nxt.kind == "KEYWORD" and nxt.value == "FROM"
            ):
                self.i += 1
                return str(token.value)
        return None

    def _parse_raw_column(self) -> tuple:
        token = self.next()
        if token.kind not in ("IDENT", "QIDENT"):
            self._reject_unsupported(token)
            raise SqlSyntaxError(f"expected column name, found {token.value!r}")
        name = str(token.value)
        if self.accept_op("."):
            column = self.next()
            if column.kind not in ("IDENT", "QIDENT"):
                raise SqlSyntaxError(f"expected column after {name!r}.")
            return ("col", name, str(column.value))
        return ("col", None, name)

    def _parse_raw_expression(self, min_prec: int = 0):
        """Raw column tuple, or an expression tree once an operator appears."""
        left = self._parse_raw_operand()
        while True:
            token = self.peek()
            if token is None or token.kind != "OP" or token.value not in ("+", "-", "*", "/"):
                break
            op = str(token.value)
            prec = 1 if op in ("+", "-") else 2
            if prec < min_prec:
                break
            self.next()
            right = self._parse_raw_expression(prec + 1)
            left = ("binary", op, left, right)
        return left

    def _parse_raw_operand(self):
        token = self.peek()
        if token is None:
            raise SqlSyntaxError("unexpected end of expression")
        if token.kind == "OP" and token.value == "(":
            self.next()
            inner = self._parse_raw_expression()
            self.expect_op(")")
            return inner
        if token.kind == "NUMBER":
            self.next()
            return ("literal", token.value)
        if token.kind == "KEYWORD" and token.value == "CAST":
            self.next()
            self.expect_op("(")
            col = self._parse_raw_column()
            self.expect_keyword("AS")
            self.expect_keyword("REAL")
            self.expect_op(")")
            return ("cast", col)
        if token.kind in ("IDENT", "QIDENT"):
            return self._parse_raw_column()
        self._reject_unsupported(token)
        raise SqlSyntaxError(f"unexpected token {token.value!r} in expression")

    def _parse_from(self) -> tuple[list[TableAlias], list[JoinSpec]]:
        tables = [self._parse_table_ref([])]
        joins: list[JoinSpec] = []
        while True:
            token = self.peek()
            if token is None or token.kind != "KEYWORD":
                break
            if token.value in ("LEFT", "RIGHT", "FULL", "CROSS", "OUTER", "NATURAL"):
                raise UnsupportedConstructError(f"{token.value} JOIN", "only INNER JOIN is supported")
            if token.value == "INNER":
                self.next()
                self.expect_keyword("JOIN")
            elif token.value == "JOIN":
                self.next()
            elif token.value == "OR":
                raise UnsupportedConstructError("OR")
            else:
                break
            tables.append(self._parse_table_ref(tables))
            self.expect_keyword("ON")
            left = self._parse_raw_column()
            self.expect_op("=")
            right = self._parse_raw_column()
            if left[1] is None or right[1] is None:
                raise SqlSyntaxError("join conditions must use qualified columns")
            joins.append(JoinSpec(f"{left[1]}.{left[2]}", f"{right[1]}.{right[2]}"))
        if self.peek() and self.peek().kind == "OP" and self.peek().value == ",":
            raise UnsupportedConstructError("comma join", "use INNER JOIN ... ON")
        return tables, joins

    def _parse_table_ref(self, existing: list[TableAlias]) -> TableAlias:
        token = self.next()
        if token.kind == "KEYWORD" and token.value == "SELECT":
            raise UnsupportedConstructError("nested SELECT")
        if token.kind == "OP" and token.value == "(":
            raise UnsupportedConstructError("nested SELECT", "subquery in FROM")
        if token.kind not in ("IDENT", "QIDENT"):
            raise SqlSyntaxError(f"expected table name, found {token.value!r}")
        table = str(token.value)
        alias = table
        if self.accept_keyword("AS"):
            alias_token = self.next()
            if alias_token.kind not in ("IDENT", "QIDENT"):
                raise SqlSyntaxError("expected alias after AS")
            alias = str(alias_token.value)
        else:
            nxt = self.peek()
            if nxt and nxt.kind == "IDENT":
                alias = str(nxt.value)
                self.i += 1
        taken = {t.modified for t in existing}
        modified = table
        n = 1
        while modified in taken:
            modified = f"{table}_{n}"
            n += 1
        if alias in {t.alias for t in existing}:
            raise SqlSyntaxError(f"duplicate table alias {alias!r}")
        return TableAlias(alias=alias, table=table, modified=modified)

    def _build_alias_lookup(self, tables: list[TableAlias]) -> dict[str, TableAlias]:
        lookup: dict[str, TableAlias] = {}
        for t in tables:
            lookup[t.alias] = t
            lookup.setdefault(t.table, t)
        self._tables = tables
        return lookup

    def _resolve_column(self, raw: tuple) -> ColumnRef:
        _, qualifier, name = raw
        if qualifier is None:
            if len(self._tables) != 1:
                raise UnsupportedConstructError(
                    "unqualified column", f"{name!r} is ambiguous across joined tables"
                )
            return ColumnRef(self._tables[0].modified, name)
        entry = self._aliases.get(qualifier)
        if entry is None:
            raise SqlSyntaxError(f"unknown table alias {qualifier!r}")
        return ColumnRef(entry.modified, name)

    def _resolve_expression(self, raw):
        if raw[0] == "binary":
            _, op, left, right = raw
            return BinaryExpr(op, self._resolve_expression(left), self._resolve_expression(right))
        if raw[0] == "literal":
            return LiteralOperand(raw[1])
        if raw[0] == "cast":
            return ColumnOperand(self._resolve_column(raw[1]), cast_real=True)
        return ColumnOperand(self._resolve_column(raw))

    def _resolve_projection(self, item: dict) -> Projection:
        if item["kind"] == "aggregate":
            target = item["target"]
            column = self._resolve_column(target) if target is not None else None
            return Projection(column=column, aggregate=item["aggregate"], alias=item["alias"])
        if item["kind"] == "derived":
            return Projection(expression=self._resolve_expression(item["expression"]),
                              alias=item["alias"])
        return Projection(column=self._resolve_column(item["column"]), alias=item["alias"])

    def _parse_column_ref(self) -> ColumnRef:
        return self._resolve_column(self._parse_raw_column())

    def _parse_substr(self) -> tuple[ColumnRef, TransformSpec]:
        self.expect_op("(")
        column = self._parse_column_ref()
        self.expect_op(",")
        start_token = self.next()
        self.expect_op(",")
        length_token = self.next()
        self.expect_op(")")
        if (start_token.kind != "NUMBER" or length_token.kind != "NUMBER"
                or not isinstance(start_token.value, int)
                or not isinstance(length_token.value, int)):
            raise SqlSyntaxError("SUBSTR expects integer start and length")
        start, length = start_token.value, length_token.value
        if start < 1 or length < 0:
            raise UnsupportedConstructError("SUBSTR", "only positive start offsets are supported")
        return column, TransformSpec("substring", start - 1, start - 1 + length)

    def _parse_predicate(self) -> Predicate:
        token = self.peek()
        if token is None:
            raise SqlSyntaxError("unexpected end of WHERE clause")
        transform = None
        if token.kind == "KEYWORD" and token.value == "SUBSTR":
            self.next()
            column, transform = self._parse_substr()
        else:
            if token.kind == "KEYWORD":
                self._reject_unsupported(token)
            column = self._parse_column_ref()

        if self.accept_keyword("LIKE"):
            value_token = self.next()
            if value_token.kind != "STRING":
                raise SqlSyntaxError("LIKE expects a string pattern")
            condition, value = _classify_like(str(value_token.value))
            return Predicate(column, condition, value, transform)

        op_token = self.next()
        if op_token.kind == "KEYWORD":
            self._reject_unsupported(op_token)
        if op_token.kind != "OP" or op_token.value not in _COMPARISON_TO_CONDITION:
            raise SqlSyntaxError(f"expected comparison operator, found {op_token.value!r}")
        condition = _COMPARISON_TO_CONDITION[str(op_token.value)]

        value_token = self.peek()
        if value_token is None:
            raise SqlSyntaxError("missing comparison value")
        if value_token.kind == "KEYWORD" and value_token.value == "SELECT":
            raise UnsupportedConstructError("nested SELECT")
        negative = value_token.kind == "OP" and value_token.value == "-"
        if negative:
            self.next()
            value_token = self.peek()
        if value_token is None:
            raise SqlSyntaxError("missing comparison value")
        if value_token.kind not in ("NUMBER", "STRING"):
            self._reject_unsupported(value_token)
            raise SqlSyntaxError("comparison value must be a literal")
        self.next()
        value = value_token.value
        if negative:
            value = -value  # type: ignore[operator]
        return Predicate(column, condition, value, transform)

    def _parse_order(self) -> OrderSpec:
        token = self.peek()
        if token is None:
            raise SqlSyntaxError("unexpected end of ORDER BY")
        aggregate = None
        agg_target = None
        transform = None
        key: ColumnRef | None = None
        expression = None
        if token.kind == "KEYWORD" and token.value in {a.upper() for a in AGGREGATES}:
            aggregate = str(token.value).lower()
            self.next()
            self.expect_op("(")
            if self.accept_op("*"):
                if aggregate != "count":
                    raise SqlSyntaxError(f"{aggregate.upper()}(*) is not valid SQL")
            else:
                agg_target = self._parse_column_ref()
            self.expect_op(")")
        elif token.kind == "KEYWORD" and token.value == "SUBSTR":
            self.next()
            key, transform = self._parse_substr()
        else:
            raw = self._parse_raw_expression()
            if raw[0] == "col":
                key = self._resolve_column(raw)
            else:
                expression = self._resolve_expression(raw)
        ascending = True
        if self.accept_keyword("DESC"):
            ascending = False
        else:
            self.accept_keyword("ASC")
        if self.peek() and self.peek().kind == "OP" and self.peek().value == ",":
            raise UnsupportedConstructError("multi-key ORDER BY")
        return OrderSpec(key=key, ascending=ascending, aggregate=aggregate,
                         agg_target=agg_target, transform=transform, expression=expression)

    def _attach_group(self, ast: SqlAst, group_key: ColumnRef | None) -> None:
        agg_items = [p for p in ast.select_items if p.is_aggregate]
        plain_items = [p for p in ast.select_items if not p.is_aggregate and not p.is_derived]
        if agg_items and plain_items:
            raise UnsupportedConstructError(
                "mixed projections", "aggregate and plain projections cannot be combined"
            )
        if len(agg_items) > 1:
            raise UnsupportedConstructError("multiple aggregates")
        order = ast.order_by
        if group_key is None:
            if order is not None and order.aggregate is not None:
                raise UnsupportedConstructError("aggregate ORDER BY", "requires GROUP BY")
            if agg_items and order is not None:
                raise UnsupportedConstructError("ORDER BY with ungrouped aggregate")
            return
        aggregation = "count"
        target = None
        sources = []
        if agg_items:
            sources.append((agg_items[0].aggregate, agg_items[0].column))
        if order is not None and order.aggregate is not None:
            sources.append((order.aggregate, order.agg_target))
        if sources:
            first = sources[0]
            for other in sources[1:]:
                if other != first:
                    raise UnsupportedConstructError(
                        "multiple aggregates", "grouped queries support one aggregate"
                    )
            aggregation, target = first
        ast.group_by = GroupSpec(key=group_key, aggregation=aggregation, target=target)

    def _validate(self, ast: SqlAst) -> None:
        if not ast.select_items:
            raise SqlSyntaxError("empty SELECT list")
        group = ast.group_by
        if group is not None:
            for item in ast.select_items:
                if item.is_derived:
                    raise UnsupportedConstructError("derived projection", "not allowed with GROUP BY")
                if not item.is_aggregate and item.column != group.key:
                    raise UnsupportedConstructError(
                        "non-grouped projection",
                        f"{item.column.prefixed_name} is not the GROUP BY key",
                    )


def _classify_like(pattern: str) -> tuple[str, str]:
    """Map a LIKE pattern to (condition, value).

    '%lit%' with no interior wildcards means plain substring containment;
    every other pattern keeps full LIKE semantics.
    """
    if (len(pattern) >= 2 and pattern.startswith("%") and pattern.endswith("%")):
        inner = pattern[1:-1]
        if inner and "%" not in inner and "_" not in inner:
            return "contains", inner
    return "like", pattern


def parse_sql(text: str) -> SqlAst:
    """Parse SQL text into a constrained SELECT AST.

    Raises SqlSyntaxError for malformed input and UnsupportedConstructError
    (naming the construct) for anything outside the dialect.
    """
    if not text or not text.strip():
        raise SqlSyntaxError("empty query")
    stripped = text.strip().rstrip(";").strip()
    if ";" in _strip_strings(stripped):
        raise UnsupportedConstructError("multiple statements")
    tokens = _tokenize(stripped)
    select_seen = 0
    for token in tokens:
        if token.kind == "KEYWORD" and token.value == "SELECT":
            select_seen += 1
    if select_seen > 1:
        raise UnsupportedConstructError("nested SELECT")
    return _Parser(tokens).parse_query()


def _strip_strings(text: str) -> str:
    return re.sub(r"'(?:[^']|'')*'", "''", text)


def extract_literals(ast: SqlAst) -> list[LiteralBinding]:
    """WHERE literals in source order, with their transform flags."""
    return [
        LiteralBinding(p.column, p.condition, p.value, p.transform)
        for p in ast.where_conjuncts
    ]


# --- rendering back to canonical SQL ---

def _quote_ident(name: str) -> str:
    return '"' + name.replace('"', '""') + '"'


def _render_literal(value: object) -> str:
    if isinstance(value, str):
        return "'" + value.replace("'", "''") + "'"
    return repr(value)


def _render_column(col: ColumnRef) -> str:
    return f"{_quote_ident(col.table)}.{_quote_ident(col.column)}"


def _render_expression(expr: object, params: list | None) -> str:
    if isinstance(expr, BinaryExpr):
        return (f"({_render_expression(expr.left, params)} {expr.op} "
                f"{_render_expression(expr.right, params)})")
    if isinstance(expr, ColumnOperand):
        rendered = _render_column(expr.column)
        return f"CAST({rendered} AS REAL)" if expr.cast_real else rendered
    if isinstance(expr, LiteralOperand):
        return _render_literal(expr.value)
    raise TypeError(f"unrenderable expression node: {expr!r}")


def _render_substr(col: ColumnRef, transform: TransformSpec) -> str:
    start = transform.start_index + 1
    length = transform.end_index - transform.start_index
    return f"SUBSTR({_render_column(col)}, {start}, {length})"


def render_sql(ast: SqlAst, parameterize: bool = False) -> tuple[str, list]:
    """Render an AST back to canonical SQL.

    Aliases are normalized to the modified table names and identifiers are
    double-quoted, so semantically identical queries render identically.
    With parameterize=True, WHERE literals become ? placeholders and their
    values are returned as the parameter list.
    """
    params: list = []
    parts = ["SELECT"]
    if ast.distinct:
        parts.append("DISTINCT")
    rendered_items = []
    for item in ast.select_items:
        if item.is_aggregate:
            inner = _render_column(item.column) if item.column is not None else "*"
            rendered_items.append(f"{item.aggregate.upper()}({inner})")
        elif item.is_derived:
            rendered_items.append(_render_expression(item.expression, params))
        else:
            rendered_items.append(_render_column(item.column))
    parts.append(", ".join(rendered_items))

    first = ast.tables[0]
    parts.append(f"FROM {_quote_ident(first.table)} AS {_quote_ident(first.modified)}")
    alias_to_modified = {t.alias: t.modified for t in ast.tables}
    alias_to_modified.update({t.table: t.modified for t in ast.tables if t.table not in alias_to_modified})
    for table, join in zip(ast.tables[1:], ast.joins):
        left_alias, left_col = join.left_col.split(".", 1)
        right_alias, right_col = join.right_col.split(".", 1)
        left = f"{_quote_ident(alias_to_modified[left_alias])}.{_quote_ident(left_col)}"
        right = f"{_quote_ident(alias_to_modified[right_alias])}.{_quote_ident(right_col)}"
        parts.append(
            f"INNER JOIN {_quote_ident(table.table)} AS {_quote_ident(table.modified)} "
            f"ON {left} = {right}"
        )

    if ast.where_conjuncts:
        rendered = []
        for pred in ast.where_conjuncts:
            lhs = (_render_substr(pred.column, pred.transform)
                   if pred.transform is not None else _render_column(pred.column))
            if pred.condition == "contains":
                if parameterize:
                    params.append(pred.value)
                    rendered.append(f"{lhs} LIKE '%' || ? || '%'")
                else:
                    rendered.append(f"{lhs} LIKE {_render_literal(f'%{pred.value}%')}")
            elif pred.condition == "like":
                if parameterize:
                    params.append(pred.value)
                    rendered.append(f"{lhs} LIKE ?")
                else:
                    rendered.append(f"{lhs} LIKE {_render_literal(str(pred.value))}")
            else:
                op = _CONDITION_TO_OP[pred.condition]
                if parameterize:
                    params.append(pred.value)
                    rendered.append(f"{lhs} {op} ?")
                else:
                    rendered.append(f"{lhs} {op} {_render_literal(pred.value)}")
        parts.append("WHERE " + " AND ".join(rendered))

    if ast.group_by is not None:
        parts.append(f"GROUP BY {_render_column(ast.group_by.key)}")

    order = ast.order_by
    if order is not None:
        if order.aggregate is not None:
            inner = _render_column(order.agg_target) if order.agg_target is not None else "*"
            key = f"{order.aggregate.upper()}({inner})"
        elif order.transform is not None:
            key = _render_substr(order.key, order.transform)
        elif order.is_derived:
            key = _render_expression(order.expression, params)
        else:
            key = _render_column(order.key)
        parts.append(f"ORDER BY {key} {'ASC' if order.ascending else 'DESC'}")

    if ast.limit is not None:
        parts.append(f"LIMIT {ast.limit}")

    return " ".join(parts), params
