"""Scoring: robust output parsing, sequence alignment, metrics, error taxonomy.

Model text is decoded by a four-stage pipeline (strict JSON, Python
literal, <tool_call> XML tags, fenced ```json blocks) attempted in order.
Intent metrics are position-aware: predictions align to gold by the
longest order-preserving common subsequence of tool names. Slot metrics
score argument key-value pairs only on intent-matched calls, with label
references canonicalized by producer position so a model is never
penalized for its label spellings. Final answers compare as multisets of
leaf scalars with 9-significant-digit numeric rounding.
"""

from __future__ import annotations

import ast as python_ast
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .runtime import LabelEnv, ToolCall, ToolError, execute_sequence, run_initialization

ERROR_CATEGORIES = (
    "instruction_alignment_failure",
    "wrong_func_count",
    "wrong_func_format",
    "hallucinated_func_name",
    "wrong_func_name",
    "missing_required_parameter",
    "unexpected_param",
    "value_error",
)

_XML_TOOL_CALL_RE = re.compile(r"<tool_call>\s*(.*?)\s*</tool_call>", re.DOTALL)
_FENCED_JSON_RE = re.compile(r"```json\s*(.*?)\s*```", re.DOTALL)
_LABEL_REF_RE = re.compile(r"^\$([^$]+)\$$")


# --- answer normalization ---

def _round_sig(value: float) -> float:
    if value == 0:
        return 0.0
    return float(f"{value:.9g}")


def _leaf_token(value: object) -> tuple:
    if value is None:
        return ("null",)
    if isinstance(value, bool):
        return ("num", _round_sig(float(value)))
    if isinstance(value, (int, float)):
        return ("num", _round_sig(float(value)))
    text = str(value).strip()
    try:
        return ("num", _round_sig(float(text)))
    except ValueError:
        return ("str", text)


def normalize_answer(value: object) -> Counter:
    """Flatten to a multiset of canonical leaf scalars.

    Containers flatten recursively (dict keys are structure, not data);
    numeric strings coerce to numbers so CSV round-trips compare equal.
    """
    tokens: Counter = Counter()

    def walk(node: object) -> None:
        if isinstance(node, dict):
            for child in node.values():
                walk(child)
        elif isinstance(node, (list, tuple)):
            for child in node:
                walk(child)
        else:
            tokens[_leaf_token(node)] += 1

    walk(value)
    return tokens


def normalized_equal(left: Counter, right: Counter) -> bool:
    return left == right


# --- four-stage output parsing ---

@dataclass
class ParsedPrediction:
    calls: list[ToolCall]
    parse_stage: str  # json, literal, xml_tags, fenced_block or failed
    raw_text: str
    payload: object | None = None

    @property
    def failed(self) -> bool:
        return self.parse_stage == "failed"


def _unwrap_nesting(payload: object) -> object:
    while isinstance(payload, list) and len(payload) == 1 and isinstance(payload[0], list):
        payload = payload[0]
    return payload


def _shape_calls(payload: object) -> list[ToolCall] | None:
    payload = _unwrap_nesting(payload)
    if isinstance(payload, dict):
        payload = [payload]
    if not isinstance(payload, list) or not payload:
        return None
    calls = []
    for item in payload:
        if not isinstance(item, dict) or not isinstance(item.get("name"), str):
            return None
        arguments = item.get("arguments")
        if arguments is None:
            arguments = {}
        if not isinstance(arguments, dict):
            return None
        label = item.get("label")
        calls.append(ToolCall(name=item["name"], arguments=arguments,
                              label=label if isinstance(label, str) else None))
    return calls


def _decode_json(text: str) -> object | None:
    try:
        return json.loads(text)
    except (json.JSONDecodeError, ValueError):
        return None


def _decode_literal(text: str) -> object | None:
    try:
        result = python_ast.literal_eval(text.strip())
    except (ValueError, SyntaxError, MemoryError, RecursionError):
        return None
    return result if isinstance(result, (list, dict)) else None


def _decode_with_prefix_stripping(text: str, decoder) -> object | None:
    """Strict decode, then retry from each opening bracket through to the end.

    Prepended prose is handled; text trailing the structure is not, so a
    valid body followed by runaway generation stays unparseable.
    """
    stripped = text.strip()
    result = decoder(stripped)
    if result is not None:
        return result
    starts = [m.start() for m in re.finditer(r"[\[{]", stripped)][:50]
    for start in starts:
        result = decoder(stripped[start:].strip())
        if result is not None:
            return result
    return None


def _stage_json(text: str) -> object | None:
    return _decode_with_prefix_stripping(text, _decode_json)


def _stage_literal(text: str) -> object | None:
    return _decode_with_prefix_stripping(text, _decode_literal)


def _stage_xml(text: str) -> object | None:
    blocks = _XML_TOOL_CALL_RE.findall(text)
    if not blocks:
        return None
    parsed = []
    for block in blocks:
        payload = _decode_json(block) or _decode_literal(block)
        if payload is not None:
            parsed.append(payload)
    return parsed or None


def _stage_fenced(text: str) -> object | None:
    blocks = _FENCED_JSON_RE.findall(text)
    if not blocks:
        return None
    fallback = None
    # the last parseable block is the model's concluding call
    for block in reversed(blocks):
        payload = _decode_json(block) or _decode_literal(block)
        if payload is None:
            continue
        if _shape_calls(payload) is not None:
            return payload
        if fallback is None:
            fallback = payload
    return fallback


_STAGES = (
    ("json", _stage_json),
    ("literal", _stage_literal),
    ("xml_tags", _stage_xml),
    ("fenced_block", _stage_fenced),
)


def parse_model_output(text: str) -> ParsedPrediction:
    """First succeeding stage wins; an undecodable text parses as failed."""
    text = text if isinstance(text, str) else str(text)
    structure: tuple[str, object] | None = None
    for stage, decoder in _STAGES:
        payload = decoder(text)
        if payload is None:
            continue
        calls = _shape_calls(payload)
        if calls is not None:
            return ParsedPrediction(calls=calls, parse_stage=stage, raw_text=text,
                                    payload=payload)
        if structure is None:
            structure = (stage, payload)
    if structure is not None:
        stage, payload = structure
        return ParsedPrediction(calls=[], parse_stage=stage, raw_text=text, payload=payload)
    return ParsedPrediction(calls=[], parse_stage="failed", raw_text=text, payload=None)


# --- position-aware alignment ---

@dataclass
class AlignmentResult:
    pairs: list[tuple[int, int]]
    pred_len: int
    gold_len: int

    @property
    def unmatched_pred(self) -> list[int]:
        matched = {i for i, _ in self.pairs}
        return [i for i in range(self.pred_len) if i not in matched]

    @property
    def unmatched_gold(self) -> list[int]:
        matched = {j for _, j in self.pairs}
        return [j for j in range(self.gold_len) if j not in matched]


def _names(sequence) -> list[str]:
    return [item.name if isinstance(item, ToolCall) else str(item) for item in sequence]


def align_sequences(pred, gold) -> AlignmentResult:
    """Longest order-preserving common subsequence on intent names.

    Ties break leftmost-greedy: among maximum alignments, the one pairing
    the earliest prediction and gold indices.
    """
    a, b = _names(pred), _names(gold)
    n, m = len(a), len(b)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        for j in range(m - 1, -1, -1):
            if a[i] == b[j]:
                dp[i][j] = dp[i + 1][j + 1] + 1
            else:
                dp[i][j] = max(dp[i + 1][j], dp[i][j + 1])
    pairs: list[tuple[int, int]] = []
    i = j = 0
    while i < n and j < m:
        if a[i] == b[j] and dp[i][j] == dp[i + 1][j + 1] + 1:
            pairs.append((i, j))
            i += 1
            j += 1
        elif dp[i + 1][j] >= dp[i][j + 1]:
            i += 1
        else:
            j += 1
    return AlignmentResult(pairs=pairs, pred_len=n, gold_len=m)


def intent_metrics(alignment: AlignmentResult) -> tuple[float, float, float]:
    matched = len(alignment.pairs)
    precision = matched / alignment.pred_len if alignment.pred_len else 0.0
    recall = matched / alignment.gold_len if alignment.gold_len else 0.0
    f1 = _harmonic(precision, recall)
    return precision, recall, f1


def _harmonic(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# --- slot metrics ---

@dataclass
class SlotScore:
    precision: float
    recall: float
    f1: float
    zero_pairs: bool
    tp: int = 0
    fp: int = 0
    fn: int = 0


def _canonical_value(value: object, producer_position: dict[str, object]) -> object:
    if isinstance(value, bool):
        return ("bool", value)
    if isinstance(value, (int, float)):
        return ("num", _round_sig(float(value)))
    if isinstance(value, str):
        match = _LABEL_REF_RE.match(value)
        if match:
            label = match.group(1)
            if label in producer_position:
                return ("ref", producer_position[label])
            return ("ref-env", label)
        return ("str", value.strip())
    if isinstance(value, dict):
        return ("dict", frozenset(
            (key, _canonical_value(child, producer_position)) for key, child in value.items()
        ))
    if isinstance(value, (list, tuple)):
        return ("list", tuple(_canonical_value(child, producer_position) for child in value))
    if value is None:
        return ("null",)
    return ("str", str(value))


def _producer_positions(calls: list[ToolCall], to_gold: dict[int, int] | None) -> dict[str, object]:
    """Map each label to the gold position of its producing call.

    For gold sequences to_gold is None and the producer's own index is the
    position; for predictions, the index maps through the alignment so two
    references are equal exactly when their producers are aligned.
    """
    positions: dict[str, object] = {}
    for index, call in enumerate(calls):
        if not call.label:
            continue
        if to_gold is None:
            positions[call.label] = ("gold", index)
        elif index in to_gold:
            positions[call.label] = ("gold", to_gold[index])
        else:
            positions[call.label] = ("unmatched-pred", index)
    return positions


def slot_metrics(alignment: AlignmentResult, pred: list[ToolCall],
                 gold: list[ToolCall]) -> SlotScore:
    if not alignment.pairs:
        return SlotScore(0.0, 0.0, 0.0, zero_pairs=True)
    to_gold = dict(alignment.pairs)
    pred_positions = _producer_positions(pred, to_gold)
    gold_positions = _producer_positions(gold, None)
    tp = fp = fn = 0
    for i, j in alignment.pairs:
        pred_kv = {
            (key, _canonical_value(value, pred_positions))
            for key, value in pred[i].arguments.items()
        }
        gold_kv = {
            (key, _canonical_value(value, gold_positions))
            for key, value in gold[j].arguments.items()
        }
        tp += len(pred_kv & gold_kv)
        fp += len(pred_kv - gold_kv)
        fn += len(gold_kv - pred_kv)
    if tp + fp == 0 and tp + fn == 0:
        return SlotScore(1.0, 1.0, 1.0, zero_pairs=False)
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    return SlotScore(precision, recall, _harmonic(precision, recall), False, tp, fp, fn)


# --- completion ---

def completion_check(instance: dict, calls: list[ToolCall], pool,
                     db_root: Path, workdir: Path) -> tuple[bool, str | None]:
    """Execute a predicted sequence and compare with the verified gold answer."""
    if not calls:
        return False, "empty prediction"
    env = LabelEnv(workdir=Path(workdir), database_root=Path(db_root))
    try:
        if instance.get("initialization_step"):
            run_initialization(instance["initialization_step"], env)
        outcome = execute_sequence(calls, env, pool)
    except ToolError as exc:
        return False, str(exc)
    if not outcome.ok:
        return False, outcome.error
    actual = outcome.result.final_value()
    if normalized_equal(normalize_answer(actual), normalize_answer(instance["gold_answer"])):
        return True, None
    return False, "result mismatch"


# --- hierarchical error classification ---

def _tool_parameters(pool, name: str) -> tuple[list[str], list[str]] | None:
    """(allowed, required) parameter names for a pool tool, if known."""
    spec = pool.tools.get(name) if pool is not None else None
    if spec is None:
        return None
    if "parameters" in spec:
        allowed = list(spec["parameters"].get("properties", {}))
        required = list(spec["parameters"].get("required", []))
        return allowed, required
    if "arguments" in spec:
        allowed = list(spec["arguments"])
        return allowed, list(allowed)
    return None


def classify_error(parsed: ParsedPrediction, gold: list[ToolCall], pool) -> str:
    """First matching category in the fixed precedence order."""
    if parsed.failed:
        return "instruction_alignment_failure"

    payload = _unwrap_nesting(parsed.payload)
    if isinstance(payload, dict):
        payload = [payload]
    items = payload if isinstance(payload, list) else []

    if len(items) != len(gold):
        return "wrong_func_count"

    def well_formed(item: object) -> bool:
        return (isinstance(item, dict) and isinstance(item.get("name"), str)
                and isinstance(item.get("arguments"), dict))

    if not parsed.calls or not all(well_formed(item) for item in items):
        return "wrong_func_format"

    universe = set(pool.tools) if pool is not None else None
    if universe is not None:
        for call in parsed.calls:
            if call.name not in universe:
                return "hallucinated_func_name"

    if [c.name for c in parsed.calls] != [g.name for g in gold]:
        return "wrong_func_name"

    for call, gold_call in zip(parsed.calls, gold):
        info = _tool_parameters(pool, call.name)
        required = info[1] if info is not None else list(gold_call.arguments)
        for name in required:
            if name not in call.arguments:
                return "missing_required_parameter"

    for call, gold_call in zip(parsed.calls, gold):
        info = _tool_parameters(pool, call.name)
        allowed = set(info[0]) if info is not None else set(gold_call.arguments)
        for name in call.arguments:
            if name not in allowed:
                return "unexpected_param"

    return "value_error"


# --- batch scoring ---

@dataclass
class InstanceScore:
    sample_id: object
    dataset_name: str
    parse_stage: str
    intent: tuple[float, float, float]
    slot: SlotScore
    completed: bool
    error_category: str | None
    failure_cause: str | None = None


@dataclass
class MetricsReport:
    formulation: str
    pool_hash: str
    n_instances: int
    intent_precision: float
    intent_recall: float
    intent_f1: float
    slot_precision: float
    slot_recall: float
    slot_f1: float
    intent_precision_pooled: float
    intent_recall_pooled: float
    intent_f1_pooled: float
    slot_precision_pooled: float
    slot_recall_pooled: float
    slot_f1_pooled: float
    completion_rate: float
    error_histogram: dict[str, int]
    slot_zero_pair_instances: int
    per_instance: list[InstanceScore] = field(default_factory=list)
    agent_stats: dict | None = None

    def to_json_dict(self) -> dict:
        data = {
            "formulation": self.formulation,
            "pool_hash": self.pool_hash,
            "n_instances": self.n_instances,
            "intent": {"precision": self.intent_precision, "recall": self.intent_recall,
                       "f1": self.intent_f1},
            "slot": {"precision": self.slot_precision, "recall": self.slot_recall,
                     "f1": self.slot_f1},
            "intent_pooled": {"precision": self.intent_precision_pooled,
                              "recall": self.intent_recall_pooled,
                              "f1": self.intent_f1_pooled},
            "slot_pooled": {"precision": self.slot_precision_pooled,
                            "recall": self.slot_recall_pooled,
                            "f1": self.slot_f1_pooled},
            "completion_rate": self.completion_rate,
            "error_histogram": {k: self.error_histogram.get(k, 0) for k in ERROR_CATEGORIES},
            "slot_zero_pair_instances": self.slot_zero_pair_instances,
        }
        if self.agent_stats is not None:
            data["agent"] = self.agent_stats
        return data


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def score_instance(instance: dict, raw_text: str, pool, db_root: Path,
                   workdir: Path) -> InstanceScore:
    gold = [ToolCall.from_json_dict(c) for c in instance["output"]]
    parsed = parse_model_output(raw_text)
    alignment = align_sequences(parsed.calls, gold)
    intent = intent_metrics(alignment)
    slot = slot_metrics(alignment, parsed.calls, gold)
    completed, cause = completion_check(instance, parsed.calls, pool, db_root, workdir)
    category = None if completed else classify_error(parsed, gold, pool)
    return InstanceScore(
        sample_id=instance.get("sample_id"),
        dataset_name=instance.get("dataset_name", ""),
        parse_stage=parsed.parse_stage,
        intent=intent,
        slot=slot,
        completed=completed,
        error_category=category,
        failure_cause=cause,
    )


def aggregate_scores(formulation: str, pool_hash: str,
                     scores: list[InstanceScore],
                     gold_lengths: list[int], pred_lengths: list[int],
                     matched_counts: list[int],
                     agent_stats: dict | None = None) -> MetricsReport:
    histogram: dict[str, int] = {}
    for score in scores:
        if score.error_category:
            histogram[score.error_category] = histogram.get(score.error_category, 0) + 1
    total_matched = sum(matched_counts)
    total_pred = sum(pred_lengths)
    total_gold = sum(gold_lengths)
    pooled_p = total_matched / total_pred if total_pred else 0.0
    pooled_r = total_matched / total_gold if total_gold else 0.0
    tp = sum(s.slot.tp for s in scores)
    fp = sum(s.slot.fp for s in scores)
    fn = sum(s.slot.fn for s in scores)
    slot_pooled_p = tp / (tp + fp) if tp + fp else 0.0
    slot_pooled_r = tp / (tp + fn) if tp + fn else 0.0
    return MetricsReport(
        formulation=formulation,
        pool_hash=pool_hash,
        n_instances=len(scores),
        intent_precision=_mean([s.intent[0] for s in scores]),
        intent_recall=_mean([s.intent[1] for s in scores]),
        intent_f1=_mean([s.intent[2] for s in scores]),
        slot_precision=_mean([s.slot.precision for s in scores]),
        slot_recall=_mean([s.slot.recall for s in scores]),
        slot_f1=_mean([s.slot.f1 for s in scores]),
        intent_precision_pooled=pooled_p,
        intent_recall_pooled=pooled_r,
        intent_f1_pooled=_harmonic(pooled_p, pooled_r),
        slot_precision_pooled=slot_pooled_p,
        slot_recall_pooled=slot_pooled_r,
        slot_f1_pooled=_harmonic(slot_pooled_p, slot_pooled_r),
        completion_rate=_mean([1.0 if s.completed else 0.0 for s in scores]),
        error_histogram=histogram,
        slot_zero_pair_instances=sum(1 for s in scores if s.slot.zero_pairs),
        per_instance=scores,
        agent_stats=agent_stats,
    )


def combined_pool_hash(pools: dict) -> str:
    import hashlib

    digest = hashlib.sha256()
    for database in sorted(pools):
        digest.update(database.encode("utf-8"))
        digest.update(pools[database].content_hash().encode("utf-8"))
    return digest.hexdigest()


def parallel_map(fn, items, workers: int | None):
    """Order-preserving map, threaded when workers allows it.

    Results come back in input order regardless of completion order, so
    parallel runs produce identical output to serial ones.
    """
    import os
    from concurrent.futures import ThreadPoolExecutor

    items = list(items)
    if workers is None:
        workers = os.cpu_count() or 1
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(fn, items))


def score_run(instances: list[dict], predictions: dict, pools: dict, db_root: Path,
              workdir_root: Path, formulation: str,
              workers: int | None = 1) -> MetricsReport:
    """Score a predictions map {sample_id: raw text} against a dataset.

    `pools` maps each dataset_name to its executable pool; instances score
    in isolated workdirs, so scoring parallelizes safely across instances.
    """

    def score_one(instance: dict):
        sample_id = instance.get("sample_id")
        pool = pools[instance["dataset_name"]]
        raw = predictions.get(sample_id, "")
        workdir = Path(workdir_root) / f"inst_{sample_id}"
        workdir.mkdir(parents=True, exist_ok=True)
        gold = [ToolCall.from_json_dict(c) for c in instance["output"]]
        parsed = parse_model_output(raw)
        alignment = align_sequences(parsed.calls, gold)
        return (score_instance(instance, raw, pool, db_root, workdir),
                len(gold), len(parsed.calls), len(alignment.pairs))

    results = parallel_map(score_one, instances, workers)
    scores = [r[0] for r in results]
    gold_lengths = [r[1] for r in results]
    pred_lengths = [r[2] for r in results]
    matched_counts = [r[3] for r in results]
    return aggregate_scores(formulation, combined_pool_hash(pools),
                            scores, gold_lengths, pred_lengths, matched_counts)
