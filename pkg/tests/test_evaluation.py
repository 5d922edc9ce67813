import itertools
import json
import random

import pytest

from sql2tool.evaluation import (
    ERROR_CATEGORIES,
    align_sequences,
    classify_error,
    completion_check,
    intent_metrics,
    normalize_answer,
    parse_model_output,
    slot_metrics,
)
from sql2tool.pools import build_slot_pool
from sql2tool.runtime import ToolCall
from sql2tool import bundled

XML_TAGGED_RESPONSE = (
    '<tool_call>\n{"name": "select_data_equal_to", "arguments": {"data_source": '
    '"$starting_table_var$", "key_name": "races_raceId", "value": 901}, "label": '
    '"FILTERED_DF"}\n</tool_call>\n'
    '<tool_call>\n{"name": "get_races_years", "arguments": {"data_source": '
    '"$FILTERED_DF$"}, "label": "RACE_YEAR"}\n</tool_call>\n'
    '<tool_call>\n{"name": "get_seasons_urls", "arguments": {"data_source": '
    '"$RACE_YEAR$"}, "label": "SEASON_URL"}\n</tool_call>'
)

CHAIN_OF_THOUGHT_RESPONSE = """To determine which molecules containing the "C" (carbon) element are not carcinogenic, we need to:

1. Identify the molecules that contain the "C" element.
2. Check the carcinogenic flag for each of these molecules.

Here are the steps and the corresponding tool calls:

1. **Get molecule IDs with the "C" element:**
   ```json
   {"name": "get_molecule_ids_with_element_v1_bird", "arguments": {"element": "C"}}
   ```

2. **For each molecule ID, check the carcinogenic flag:**
   ```json
   {"name": "get_carcinogenic_flag_v1_bird_toxicology_carcinogenic_flag_get", "arguments": {"atom_id": "atom_id_from_molecule"}}
   ```

This process would need to be repeated for each molecule ID obtained in step 1.

Since this involves multiple steps and potentially multiple tool calls, I can initiate the first step to get the molecule IDs containing the "C" element. Here is the first tool call:

```json
{"name": "get_molecule_ids_with_element_v1_bird", "arguments": {"element": "C"}}
```"""

RUNAWAY_GENERATION_RESPONSE = """[{"name": "get_card_status_v1_bird_card_games_card_status_get", "arguments": {"card_name": "Cloudchaser Eagle"}}]

USER: What is the format of card "Cloudchaser Eagle"?
ASSISTANT:
[{"name": "get_card_format_v1_bird_card_games_card_format_get", "arguments": {"card_name": "Cloudchaser Eagle"}}]

USER: What is the artist of card "Cloudchaser Eagle"?
ASSISTANT:
[{"name": "get_artist_by_language_v1_bird_card_games_artist_by_language_get", "arguments": {"language": "English"}}]

USER: What are the colors and format for id range 1-100?
ASSISTANT:
[{"name": "get_colors_format_v1_"""


# --- normalization ---

def test_normalize_equates_format_variants():
    assert normalize_answer([[1.0]]) == normalize_answer({"free_meal_count_ratio": [1.0]})
    assert normalize_answer("Business") == normalize_answer(["Business"])
    assert normalize_answer([1, 2]) == normalize_answer([2, 1])


def test_normalize_is_a_multiset_not_a_set():
    assert normalize_answer([1, 1, 2]) != normalize_answer([1, 2])


def test_normalize_coerces_numeric_strings_and_rounds():
    assert normalize_answer(["500"]) == normalize_answer([500.0])
    assert normalize_answer([1.0000000001]) == normalize_answer([1.0])
    assert normalize_answer([1.001]) != normalize_answer([1.0])
    assert normalize_answer(["  x  "]) == normalize_answer(["x"])
    assert normalize_answer([None]) != normalize_answer([0])


# --- four-stage parsing ---

def test_stage_json_plain_list():
    parsed = parse_model_output('[{"name": "filter_data", "arguments": {"value": 1}}]')
    assert parsed.parse_stage == "json"
    assert [c.name for c in parsed.calls] == ["filter_data"]


def test_stage_json_extra_brackets():
    parsed = parse_model_output('[[{"name": "filter_data", "arguments": {}}]]')
    assert parsed.parse_stage == "json"
    assert len(parsed.calls) == 1


def test_stage_json_prepended_prose():
    parsed = parse_model_output(
        'Here is the call list you asked for:\n'
        '[{"name": "retrieve_data", "arguments": {"limit": -1}}]')
    assert parsed.parse_stage == "json"
    assert parsed.calls[0].name == "retrieve_data"


def test_stage_literal_python_syntax():
    parsed = parse_model_output(
        "[{'name': 'retrieve_data', 'arguments': {'distinct': False, 'limit': -1}}]")
    assert parsed.parse_stage == "literal"
    assert parsed.calls[0].arguments["distinct"] is False


def test_stage_xml_tagged_calls():
    parsed = parse_model_output(XML_TAGGED_RESPONSE)
    assert parsed.parse_stage == "xml_tags"
    assert [c.name for c in parsed.calls] == [
        "select_data_equal_to", "get_races_years", "get_seasons_urls"]
    assert parsed.calls[0].arguments["value"] == 901
    assert parsed.calls[0].label == "FILTERED_DF"


def test_stage_fenced_chain_of_thought_takes_final_block():
    parsed = parse_model_output(CHAIN_OF_THOUGHT_RESPONSE)
    assert parsed.parse_stage == "fenced_block"
    assert len(parsed.calls) == 1
    assert parsed.calls[0].name == "get_molecule_ids_with_element_v1_bird"
    assert parsed.calls[0].arguments == {"element": "C"}


def test_runaway_generation_is_unparseable():
    parsed = parse_model_output(RUNAWAY_GENERATION_RESPONSE)
    assert parsed.failed
    assert parsed.calls == []


def test_structure_without_calls_is_not_failed():
    parsed = parse_model_output('["just_a_tool_name"]')
    assert parsed.parse_stage == "json"
    assert parsed.calls == []
    assert parsed.payload == ["just_a_tool_name"]


def test_stage_order_short_circuits():
    # valid JSON that also contains a fenced block elsewhere stays stage json
    text = '[{"name": "a", "arguments": {}}]'
    assert parse_model_output(text).parse_stage == "json"
    assert parse_model_output("```json\n" + text + "\n```").parse_stage == "fenced_block"


# --- alignment ---

def _brute_force_lcs(a, b):
    best = 0
    for size in range(min(len(a), len(b)), 0, -1):
        for pred_idx in itertools.combinations(range(len(a)), size):
            for gold_idx in itertools.combinations(range(len(b)), size):
                if all(a[i] == b[j] for i, j in zip(pred_idx, gold_idx)):
                    return size
        if best:
            break
    return 0


def test_alignment_identity():
    gold = ["filter_data", "filter_data", "retrieve_data"]
    alignment = align_sequences(gold, gold)
    assert alignment.pairs == [(0, 0), (1, 1), (2, 2)]
    assert intent_metrics(alignment) == (1.0, 1.0, 1.0)


def test_alignment_one_of_three():
    alignment = align_sequences(["filter_data"],
                                ["filter_data", "filter_data", "retrieve_data"])
    assert len(alignment.pairs) == 1
    precision, recall, f1 = intent_metrics(alignment)
    assert precision == 1.0
    assert abs(recall - 1 / 3) < 1e-9
    assert abs(f1 - 0.5) < 1e-9


def test_alignment_is_order_preserving():
    alignment = align_sequences(["retrieve", "filter"], ["filter", "retrieve"])
    assert len(alignment.pairs) == 1


def test_alignment_leftmost_tiebreak():
    alignment = align_sequences(["a", "a"], ["a"])
    assert alignment.pairs == [(0, 0)]


def test_alignment_matches_brute_force_on_random_pairs():
    rng = random.Random(20240809)
    names = ["f", "g", "h", "k"]
    for _ in range(1000):
        a = [rng.choice(names) for _ in range(rng.randint(0, 6))]
        b = [rng.choice(names) for _ in range(rng.randint(0, 6))]
        alignment = align_sequences(a, b)
        assert len(alignment.pairs) == _brute_force_lcs(a, b), (a, b)
        # pairs strictly increasing in both coordinates
        for (i1, j1), (i2, j2) in zip(alignment.pairs, alignment.pairs[1:]):
            assert i1 < i2 and j1 < j2


def test_intent_metrics_empty_prediction():
    alignment = align_sequences([], ["filter_data"])
    assert intent_metrics(alignment) == (0.0, 0.0, 0.0)


# --- slot metrics ---

def _call(name, label=None, **arguments):
    return ToolCall(name=name, arguments=arguments, label=label)


def test_slot_metrics_identical_args():
    gold = [_call("filter_data", label="A", key_name="t_a", value=1.0)]
    alignment = align_sequences(gold, gold)
    score = slot_metrics(alignment, gold, gold)
    assert (score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0)


def test_slot_metrics_wrong_value_counts_against_both():
    gold = [_call("filter_data", key_name="t_a", value=1.0)]
    pred = [_call("filter_data", key_name="t_a", value=2.0)]
    alignment = align_sequences(pred, gold)
    score = slot_metrics(alignment, pred, gold)
    assert score.precision == 0.5 and score.recall == 0.5


def test_slot_metrics_label_spellings_never_penalized():
    gold = [
        _call("filter_data", label="FILTERED_DF_0",
              data_source="$starting_table_var$", key_name="k", value=1.0),
        _call("retrieve_data", label="SELECT_COL_0",
              data_source="$FILTERED_DF_0$", key_name="k", distinct=False, limit=-1),
    ]
    pred = [
        _call("filter_data", label="step1",
              data_source="$starting_table_var$", key_name="k", value=1.0),
        _call("retrieve_data", label="out",
              data_source="$step1$", key_name="k", distinct=False, limit=-1),
    ]
    alignment = align_sequences(pred, gold)
    score = slot_metrics(alignment, pred, gold)
    assert score.f1 == 1.0


def test_slot_metrics_ref_to_unaligned_producer_penalized():
    gold = [
        _call("filter_data", label="A", key_name="k", value=1.0),
        _call("retrieve_data", label="B", data_source="$A$", key_name="k"),
    ]
    pred = [
        _call("sort_data", label="X", key_name="k", ascending=True),
        _call("retrieve_data", label="Y", data_source="$X$", key_name="k"),
    ]
    alignment = align_sequences(pred, gold)
    assert alignment.pairs == [(1, 1)]
    score = slot_metrics(alignment, pred, gold)
    assert score.f1 < 1.0


def test_slot_metrics_zero_pairs_flagged():
    gold = [_call("filter_data", key_name="t_a", value=1.0)]
    pred = [_call("sort_data", key_name="t_a", ascending=True)]
    alignment = align_sequences(pred, gold)
    score = slot_metrics(alignment, pred, gold)
    assert score.zero_pairs
    assert (score.precision, score.recall, score.f1) == (0.0, 0.0, 0.0)


def test_slot_metrics_int_float_unify():
    gold = [_call("filter_data", value=1.0)]
    pred = [_call("filter_data", value=1)]
    alignment = align_sequences(pred, gold)
    assert slot_metrics(alignment, pred, gold).f1 == 1.0


# --- completion ---

def test_completion_gold_replay_and_empty(build, db_root, tmp_path):
    sample = build.datasets["SLOT"][0]
    pool = build.pool_for("SLOT", sample["dataset_name"])
    calls = [ToolCall.from_json_dict(c) for c in sample["output"]]
    ok, cause = completion_check(sample, calls, pool, db_root, tmp_path / "replay")
    assert ok and cause is None
    ok, cause = completion_check(sample, [], pool, db_root, tmp_path / "empty")
    assert not ok


# --- hierarchical error classification ---

@pytest.fixture(scope="module")
def clf_pool():
    return build_slot_pool("student_club", bundled.column_enum("student_club"))


GOLD = [
    ToolCall("filter_data", {"data_source": "$starting_table_var$",
                             "key_name": "member_first_name", "value": "Angela",
                             "condition": "equal_to"}, "FILTERED_DF_0"),
    ToolCall("retrieve_data", {"data_source": "$FILTERED_DF_0$",
                               "key_name": "major_major_name",
                               "distinct": False, "limit": -1}, "SELECT_COL_0"),
]


def _classify(text, pool):
    return classify_error(parse_model_output(text), GOLD, pool)


def test_each_category_has_a_crafted_failure(clf_pool):
    gold_json = json.dumps([c.to_json_dict() for c in GOLD])
    crafted = {
        "instruction_alignment_failure": "I think the answer is Business.",
        "wrong_func_count": json.dumps([GOLD[0].to_json_dict()]),
        "wrong_func_format": '["filter_data", "retrieve_data"]',
        "hallucinated_func_name": gold_json.replace("filter_data", "imaginary_tool"),
        "wrong_func_name": gold_json.replace('"filter_data"', '"sort_data"'),
        "missing_required_parameter": json.dumps([
            {"name": "filter_data", "arguments": {"data_source": "$starting_table_var$",
                                                  "key_name": "member_first_name",
                                                  "condition": "equal_to"},
             "label": "FILTERED_DF_0"},
            GOLD[1].to_json_dict(),
        ]),
        "unexpected_param": json.dumps([
            {"name": "filter_data",
             "arguments": {**GOLD[0].arguments, "strictness": "high"},
             "label": "FILTERED_DF_0"},
            GOLD[1].to_json_dict(),
        ]),
        "value_error": gold_json.replace('"Angela"', '"Bob"'),
    }
    assert set(crafted) == set(ERROR_CATEGORIES)
    for category, text in crafted.items():
        assert _classify(text, clf_pool) == category, category


def test_precedence_takes_the_earlier_category(clf_pool):
    # missing required parameter AND wrong value: precedence chooses the former
    text = json.dumps([
        {"name": "filter_data", "arguments": {"data_source": "$starting_table_var$",
                                              "key_name": "member_first_name",
                                              "condition": "not_equal_to"},
         "label": "L"},
        GOLD[1].to_json_dict(),
    ])
    assert _classify(text, clf_pool) == "missing_required_parameter"
    # hallucinated name AND wrong count: count precedes
    text = json.dumps([{"name": "imaginary_tool", "arguments": {}}])
    assert _classify(text, clf_pool) == "wrong_func_count"
