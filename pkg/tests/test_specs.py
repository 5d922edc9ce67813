import json
import random

import pytest

from sql2tool import bundled
from sql2tool.pools import ToolPool, build_slot_pool
from sql2tool.runtime import LabelEnv, ToolCall, execute_sequence, run_initialization
from sql2tool.specs import (
    FractionTooSmallError,
    ObfuscationMap,
    emit_spec_json,
    emit_tool_spec,
    obfuscate_pool,
    rewrite_sequence,
    shortlist_tools,
)

# golden shrink sizes for the eleven source-database tool universes
SHORTLIST_TABLE = {
    "formula_1": (126, {0.10: 12, 0.25: 31, 0.50: 63, 0.75: 94}),
    "card_games": (154, {0.10: 15, 0.25: 38, 0.50: 77, 0.75: 115}),
    "superhero": (109, {0.10: 10, 0.25: 27, 0.50: 54, 0.75: 81}),
    "codebase_community": (156, {0.10: 15, 0.25: 39, 0.50: 78, 0.75: 117}),
    "thrombosis_prediction": (135, {0.10: 13, 0.25: 33, 0.50: 67, 0.75: 101}),
    "toxicology": (95, {0.10: 9, 0.25: 23, 0.50: 47, 0.75: 71}),
    "financial": (91, {0.10: 9, 0.25: 22, 0.50: 45, 0.75: 68}),
    "california_schools": (75, {0.10: 7, 0.25: 18, 0.50: 37, 0.75: 56}),
    "student_club": (130, {0.10: 13, 0.25: 32, 0.50: 65, 0.75: 97}),
    "european_football_2": (118, {0.10: 11, 0.25: 29, 0.50: 59, 0.75: 88}),
    "debit_card_specializing": (61, {0.10: 6, 0.25: 15, 0.50: 30, 0.75: 45}),
}


@pytest.fixture(scope="module")
def slot_pool():
    return build_slot_pool("student_club", bundled.column_enum("student_club"))


def test_sort_data_spec_shape(slot_pool):
    spec = slot_pool.tools["sort_data"]
    properties = spec["parameters"]["properties"]
    assert properties["ascending"]["schema"]["type"] == "boolean"
    assert properties["ascending"]["description"] == "whether to sort by ascending order"
    enum = properties["key_name"]["schema"]["enum"]
    assert "member_member_id" in enum and "major_major_name" in enum
    assert "* `member_member_id` - unique id of member" in properties["key_name"]["description"]
    assert spec["parameters"]["required"] == ["data_source", "key_name", "ascending"]
    assert "output_0" in spec["output_parameters"]["properties"]


def test_rest_spec_titles_and_types(build):
    pool = build.pool_for("REST", "california_schools")
    zip_spec = next(spec for name, spec in pool.tools.items()
                    if spec["path"].endswith("/zip"))
    assert zip_spec["arguments"]["district_name"]["title"] == "District Name"
    assert zip_spec["arguments"]["district_name"]["type"] == "string"
    assert zip_spec["arguments"]["charter_school"]["title"] == "Charter School"
    assert zip_spec["arguments"]["charter_school"]["type"] == "integer"
    assert zip_spec["arguments"]["charter_school"]["description"] == \
        "Charter school status (1 for yes, 0 for no)"


def test_empty_pool_emits_empty_spec():
    pool = ToolPool(formulation="SLOT", database="none", tools={})
    assert emit_tool_spec(pool) == []


def test_spec_emission_is_deterministic(slot_pool):
    assert emit_spec_json(slot_pool) == emit_spec_json(slot_pool)
    reparsed = json.loads(emit_spec_json(slot_pool))
    assert [t["name"] for t in reparsed] == list(slot_pool.tools)


def test_obfuscation_shape_and_preserved_descriptions(build):
    pool = build.pool_for("REST", "california_schools")
    renamed, mapping = obfuscate_pool(pool, seed=7)
    assert sorted(mapping.tool_names.values()) == sorted(
        f"FUNC_{i}" for i in range(len(pool.tools)))
    alameda = next(name for name in pool.tools if "free_meal_count_ratio" in name)
    new_name = mapping.tool_names[alameda]
    spec = renamed.tools[new_name]
    assert spec["name"] == new_name
    arg_spec = spec["arguments"]["ARG_1"]
    assert arg_spec["description"] == "Name of the county"
    assert arg_spec["title"] == "County Name"
    assert arg_spec["name"] == "county_name"  # breadcrumb keeps the original


def test_obfuscation_is_bijective(build):
    pool = build.pool_for("SLOT", "california_schools")
    _, mapping = obfuscate_pool(pool, seed=3)
    assert len(set(mapping.tool_names.values())) == len(mapping.tool_names)
    for args in mapping.arg_names.values():
        assert len(set(args.values())) == len(args)


def test_obfuscate_then_restore_is_identity(build):
    pool = build.pool_for("SLOT", "student_club")
    _, mapping = obfuscate_pool(pool, seed=11)
    sample = next(r for r in build.datasets["SLOT"]
                  if r["dataset_name"] == "student_club")
    calls = [ToolCall.from_json_dict(c) for c in sample["output"]]
    round_tripped = [mapping.restore_call(mapping.rename_call(c)) for c in calls]
    assert [c.to_json_dict() for c in round_tripped] == [c.to_json_dict() for c in calls]


def test_renamed_pool_replays_gold_sequences(build, db_root, tmp_path):
    # execution-level obfuscation invariance on a sample of instances
    from sql2tool.evaluation import normalize_answer
    for formulation in ("SLOT", "SEL"):
        for sample in build.datasets[formulation][:8]:
            pool = build.pool_for(formulation, sample["dataset_name"])
            renamed, mapping = obfuscate_pool(pool, seed=5)
            calls = [ToolCall.from_json_dict(c) for c in sample["output"]]
            renamed_calls = rewrite_sequence(calls, mapping)
            env = LabelEnv(workdir=tmp_path / f"{formulation}_{sample['sample_id']}",
                           database_root=db_root)
            run_initialization(sample["initialization_step"], env)
            outcome = execute_sequence(renamed_calls, env, renamed)
            assert outcome.ok, outcome.error
            assert normalize_answer(outcome.result.final_value()) == \
                normalize_answer(sample["gold_answer"])


def test_obfuscation_map_round_trips_through_json(build):
    pool = build.pool_for("SLOT", "california_schools")
    _, mapping = obfuscate_pool(pool, seed=2)
    clone = ObfuscationMap.from_json_dict(json.loads(json.dumps(mapping.to_json_dict())))
    assert clone.tool_names == mapping.tool_names
    assert clone.arg_names == mapping.arg_names


def test_shortlist_sizes_match_golden_table():
    for name, (universe_size, by_fraction) in SHORTLIST_TABLE.items():
        universe = [f"{name}_tool_{i}" for i in range(universe_size)]
        for fraction, expected in by_fraction.items():
            shortlist = shortlist_tools(universe, [universe[0]], fraction, seed=1)
            assert len(shortlist.tool_names) == expected, (name, fraction)


def test_shortlist_full_fraction_is_identity():
    universe = [f"t{i}" for i in range(20)]
    shortlist = shortlist_tools(universe, ["t3"], 1.0, seed=9)
    assert shortlist.tool_names == universe


def test_shortlist_always_contains_gold():
    universe = [f"t{i}" for i in range(40)]
    rng = random.Random(123)
    for trial in range(1000):
        gold = rng.choice(universe)
        shortlist = shortlist_tools(universe, [gold], 0.10, seed=trial)
        assert gold in shortlist.tool_names
        assert len(shortlist.tool_names) == 4


def test_shortlist_fraction_too_small():
    with pytest.raises(FractionTooSmallError):
        shortlist_tools(["a", "b"], ["a"], 0.1, seed=0)
    with pytest.raises(ValueError):
        shortlist_tools(["a", "b"], ["z"], 1.0, seed=0)


def test_shortlist_clamps_to_gold_size():
    universe = [f"t{i}" for i in range(30)]
    shortlist = shortlist_tools(universe, ["t1", "t2", "t3", "t4", "t5"], 0.10, seed=0)
    assert len(shortlist.tool_names) == 5
    assert set(["t1", "t2", "t3", "t4", "t5"]) <= set(shortlist.tool_names)
