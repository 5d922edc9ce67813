"""Acceptance suite: one test per criterion, summarized at the end of the run."""

import concurrent.futures
import json
import random
import time

import httpx
import pytest

from sql2tool import bundled
from sql2tool.agent import (
    DEFAULT_BUDGET,
    ScriptedClient,
    classify_trace,
    episode_completed,
    gold_replay_responses,
    run_episode,
)
from sql2tool.cli import main
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
from sql2tool.runtime import LabelEnv, ToolCall, execute_sequence, run_initialization
from sql2tool.service import BackgroundServer, create_app
from sql2tool.specs import obfuscate_pool, rewrite_sequence, shortlist_tools
from sql2tool.sql_frontend import parse_sql
from sql2tool.transpilers import (
    compile_slot_sequence,
    execute_sql_oracle,
    rewrite_to_sel_sequence,
)

from conftest import by_query_fragment
from test_evaluation import (
    CHAIN_OF_THOUGHT_RESPONSE,
    RUNAWAY_GENERATION_RESPONSE,
    XML_TAGGED_RESPONSE,
    _brute_force_lcs,
)

LISTING_QUERY = (
    "SELECT T2.School FROM satscores AS T1 INNER JOIN schools AS T2 "
    "ON T1.cds = T2.CDSCode WHERE T2.Magnet = 1 AND T1.NumTstTakr > 500"
)


@pytest.mark.criterion(1, "semantic preservation: gold SLOT/SEL/REST equal the SQL "
                          "oracle on 100% of retained instances in under 60s")
def test_semantic_preservation(build, db_root, tmp_path):
    started = time.monotonic()
    checked = 0
    for formulation in ("SLOT", "SEL", "REST"):
        for sample in build.datasets[formulation]:
            oracle = execute_sql_oracle(
                db_root / f"{sample['dataset_name']}.sqlite", sample["query"])
            gold_norm = normalize_answer(oracle)
            pool = build.pool_for(formulation, sample["dataset_name"])
            if formulation == "REST":
                call = sample["output"][0]
                env = LabelEnv(workdir=tmp_path / f"r{checked}")
                result = pool.execute(call["name"], call["arguments"], env)
                actual = result.payload
            else:
                env = LabelEnv(workdir=tmp_path / f"{formulation}_{checked}",
                               database_root=db_root)
                run_initialization(sample["initialization_step"], env)
                outcome = execute_sequence(
                    [ToolCall.from_json_dict(c) for c in sample["output"]], env, pool)
                assert outcome.ok, (sample["query"], outcome.error)
                actual = outcome.result.final_value()
            assert normalize_answer(actual) == gold_norm, (formulation, sample["query"])
            checked += 1
    elapsed = time.monotonic() - started
    assert checked == sum(len(v) for v in build.datasets.values())
    assert checked >= 150  # three formulations over a >=50-query corpus
    assert elapsed < 60, f"semantic preservation sweep took {elapsed:.1f}s"


@pytest.mark.criterion(2, "golden micro-facts: reference compile targets, Business, "
                          "medium, and the Alameda 1.0 over live HTTP")
def test_golden_micro_facts(build, db_root, tmp_path):
    # SLOT compilation of the magnet-schools query is exact
    init, calls = compile_slot_sequence(parse_sql(LISTING_QUERY),
                                        "california_schools.sqlite")
    assert [c.to_json_dict() for c in calls] == [
        {"name": "filter_data",
         "arguments": {"data_source": "$starting_table_var$",
                       "key_name": "schools_Magnet", "value": 1.0,
                       "condition": "equal_to"},
         "label": "FILTERED_DF_0"},
        {"name": "filter_data",
         "arguments": {"data_source": "$FILTERED_DF_0$",
                       "key_name": "satscores_NumTstTakr", "value": 500.0,
                       "condition": "greater_than"},
         "label": "FILTERED_DF_1"},
        {"name": "retrieve_data",
         "arguments": {"data_source": "$FILTERED_DF_1$",
                       "key_name": "schools_School", "distinct": False, "limit": -1},
         "label": "SELECT_COL_0"},
    ]

    # the SEL rewrite of that sequence is exact
    assert [c.to_json_dict() for c in rewrite_to_sel_sequence(calls)] == [
        {"name": "select_data_equal_to",
         "arguments": {"data_source": "$starting_table_var$",
                       "key_name": "schools_Magnet", "value": 1.0},
         "label": "FILTERED_DF_0"},
        {"name": "select_data_greater_than",
         "arguments": {"data_source": "$FILTERED_DF_0$",
                       "key_name": "satscores_NumTstTakr", "value": 500.0},
         "label": "FILTERED_DF_1"},
        {"name": "get_schools_School",
         "arguments": {"data_source": "$FILTERED_DF_1$"},
         "label": "SELECT_COL_0"},
    ]

    # executing it yields the expected gold answer
    pool = build.pool_for("SLOT", "california_schools")
    env = LabelEnv(workdir=tmp_path / "magnet", database_root=db_root)
    run_initialization(init.to_json_dict(), env)
    outcome = execute_sequence(calls, env, pool)
    assert outcome.result.final_value() == ["Millikan High", "Polytechnic High",
                                            "Troy High"]

    # the member/major pipeline yields Business
    angela = by_query_fragment(build.datasets["SLOT"], "Angela")
    assert normalize_answer(angela["gold_answer"]) == normalize_answer("Business")
    ok, _ = completion_check(
        angela, [ToolCall.from_json_dict(c) for c in angela["output"]],
        build.pool_for("SLOT", "student_club"), db_root, tmp_path / "angela")
    assert ok

    # the substring pipeline yields medium
    kevin = by_query_fragment(build.datasets["SLOT"], "Berigaud")
    assert normalize_answer(kevin["gold_answer"]) == normalize_answer("medium")
    assert [c["name"] for c in kevin["output"]] == [
        "transform_data", "filter_data", "filter_data", "retrieve_data"]
    ok, _ = completion_check(
        kevin, [ToolCall.from_json_dict(c) for c in kevin["output"]],
        build.pool_for("SLOT", "european_football_2"), db_root, tmp_path / "kevin")
    assert ok

    # the Alameda instance answers 1.0 over live HTTP
    app = create_app(build.pool_for("REST", "california_schools"), db_root)
    with BackgroundServer(app) as base_url:
        response = httpx.get(
            base_url + "/v1/bird/california_schools/free_meal_count_ratio",
            params={"county_name": "Alameda"})
        assert response.status_code == 200
        assert response.json() == {"free_meal_count_ratio": [1.0]}


@pytest.mark.criterion(3, "metric battery: identity/empty degeneracies, the 1-of-3 "
                          "case, and LCS alignment vs brute force (1000 trials)")
def test_metric_unit_battery(build, db_root, tmp_path):
    sample = build.datasets["SLOT"][0]
    pool = build.pool_for("SLOT", sample["dataset_name"])
    gold = [ToolCall.from_json_dict(c) for c in sample["output"]]

    identity = align_sequences(gold, gold)
    assert intent_metrics(identity) == (1.0, 1.0, 1.0)
    assert slot_metrics(identity, gold, gold).f1 == 1.0
    ok, _ = completion_check(sample, gold, pool, db_root, tmp_path / "id")
    assert ok

    empty = align_sequences([], gold)
    assert intent_metrics(empty) == (0.0, 0.0, 0.0)
    assert slot_metrics(empty, [], gold).f1 == 0.0
    ok, _ = completion_check(sample, [], pool, db_root, tmp_path / "empty")
    assert not ok

    one_of_three = align_sequences(
        ["filter_data"], ["filter_data", "filter_data", "retrieve_data"])
    precision, recall, f1 = intent_metrics(one_of_three)
    assert precision == 1.0
    assert abs(recall - 0.333) < 1e-3
    assert abs(f1 - 0.5) < 1e-3

    rng = random.Random(1337)
    names = ["filter_data", "sort_data", "retrieve_data", "group_data_by"]
    for _ in range(1000):
        a = [rng.choice(names) for _ in range(rng.randint(0, 6))]
        b = [rng.choice(names) for _ in range(rng.randint(0, 6))]
        assert len(align_sequences(a, b).pairs) == _brute_force_lcs(a, b)


@pytest.mark.criterion(4, "parser battery: tagged, fenced and extra-bracketed outputs "
                          "parse; runaway generation classifies as instruction failure")
def test_parser_battery():
    qwen = parse_model_output(XML_TAGGED_RESPONSE)
    assert qwen.parse_stage == "xml_tags"
    assert [c.name for c in qwen.calls] == [
        "select_data_equal_to", "get_races_years", "get_seasons_urls"]

    deepseek = parse_model_output(CHAIN_OF_THOUGHT_RESPONSE)
    assert deepseek.parse_stage == "fenced_block"
    assert [c.to_json_dict() for c in deepseek.calls] == [
        {"name": "get_molecule_ids_with_element_v1_bird",
         "arguments": {"element": "C"}, "label": None}]

    bracketed = parse_model_output('[[{"name": "filter_data", "arguments": {"value": 1}}]]')
    assert bracketed.parse_stage == "json"
    assert [c.name for c in bracketed.calls] == ["filter_data"]

    runaway = parse_model_output(RUNAWAY_GENERATION_RESPONSE)
    assert runaway.failed
    gold = [ToolCall("get_card_status_v1_bird_card_games_card_status_get",
                     {"card_name": "Cloudchaser Eagle"})]
    assert classify_error(runaway, gold, None) == "instruction_alignment_failure"


@pytest.mark.criterion(5, "error classifier: eight crafted failures land in their own "
                          "categories; overlaps take the earlier one")
def test_error_classifier_precedence():
    pool = build_slot_pool("student_club", bundled.column_enum("student_club"))
    gold = [
        ToolCall("filter_data", {"data_source": "$starting_table_var$",
                                 "key_name": "member_first_name", "value": "Angela",
                                 "condition": "equal_to"}, "FILTERED_DF_0"),
        ToolCall("retrieve_data", {"data_source": "$FILTERED_DF_0$",
                                   "key_name": "major_major_name",
                                   "distinct": False, "limit": -1}, "SELECT_COL_0"),
    ]
    gold_json = json.dumps([c.to_json_dict() for c in gold])
    crafted = {
        "instruction_alignment_failure": "The major is Business, I believe.",
        "wrong_func_count": json.dumps([gold[0].to_json_dict()]),
        "wrong_func_format": '["filter_data", "retrieve_data"]',
        "hallucinated_func_name": gold_json.replace("filter_data", "lookup_member"),
        "wrong_func_name": gold_json.replace('"filter_data"', '"sort_data"'),
        "missing_required_parameter": json.dumps([
            {"name": "filter_data",
             "arguments": {"data_source": "$starting_table_var$",
                           "key_name": "member_first_name", "condition": "equal_to"},
             "label": "FILTERED_DF_0"},
            gold[1].to_json_dict()]),
        "unexpected_param": json.dumps([
            {"name": "filter_data",
             "arguments": {**gold[0].arguments, "mode": "strict"},
             "label": "FILTERED_DF_0"},
            gold[1].to_json_dict()]),
        "value_error": gold_json.replace('"Angela"', '"Angela "'),
    }
    assert set(crafted) == set(ERROR_CATEGORIES)
    for category, text in crafted.items():
        assert classify_error(parse_model_output(text), gold, pool) == category, category

    # missing parameter + wrong value in one prediction: earlier category wins
    double = json.dumps([
        {"name": "filter_data",
         "arguments": {"data_source": "$starting_table_var$",
                       "key_name": "member_first_name", "condition": "not_equal_to"},
         "label": "L"},
        gold[1].to_json_dict()])
    assert classify_error(parse_model_output(double), gold, pool) == \
        "missing_required_parameter"


@pytest.mark.criterion(6, "agent harness: gold stub completes within gold+1 turns, "
                          "OOB at exactly 10, repetition flags stuck")
def test_react_harness_with_stubs(build, db_root, tmp_path):
    sample = by_query_fragment(build.datasets["SLOT"], "Angela")
    pool = build.pool_for("SLOT", sample["dataset_name"])

    replay = run_episode(sample, pool, ScriptedClient(gold_replay_responses(sample)),
                         workdir=tmp_path / "replay", db_root=db_root)
    assert replay.outcome == "completed"
    assert len(replay.turns) <= len(sample["output"]) + 1
    assert episode_completed(replay, sample)
    flags = classify_trace(replay, True)
    assert not flags.oob and not flags.stuck and not flags.unclassified

    wanderer = [
        f'Thought: step {i}\nAction: retrieve_data\nAction Input: '
        + json.dumps({"data_source": "$starting_table_var$",
                      "key_name": "member_first_name",
                      "distinct": bool(i % 2), "limit": i + 1})
        for i in range(DEFAULT_BUDGET + 3)
    ]
    oob = run_episode(sample, pool, ScriptedClient(wanderer),
                      workdir=tmp_path / "oob", db_root=db_root)
    assert len(oob.turns) == DEFAULT_BUDGET == 10
    assert oob.final_answer is None
    oob_flags = classify_trace(oob, False)
    assert oob_flags.oob and not oob_flags.stuck

    repeater = ('Thought: retry\nAction: filter_data\nAction Input: '
                '{"data_source": "$starting_table_var$", "key_name": "nope", '
                '"value": 1, "condition": "equal_to"}')
    stuck = run_episode(sample, pool, ScriptedClient([repeater]),
                        workdir=tmp_path / "stuck", db_root=db_root)
    stuck_flags = classify_trace(stuck, False)
    assert stuck_flags.stuck
    assert stuck_flags.oob  # not mutually exclusive
    assert not stuck_flags.unclassified


@pytest.mark.criterion(7, "perturbations: obfuscated pools replay gold to 100% "
                          "completion; shortlists keep gold and match the 75@10%=7 row")
def test_perturbation_invariance(build, db_root, tmp_path):
    seed = 13
    for formulation in ("SLOT", "SEL"):
        for sample in build.datasets[formulation]:
            pool = build.pool_for(formulation, sample["dataset_name"])
            renamed, mapping = obfuscate_pool(pool, seed)
            calls = rewrite_sequence(
                [ToolCall.from_json_dict(c) for c in sample["output"]], mapping)
            env = LabelEnv(
                workdir=tmp_path / f"{formulation}_{sample['sample_id']}",
                database_root=db_root)
            run_initialization(sample["initialization_step"], env)
            outcome = execute_sequence(calls, env, renamed)
            assert outcome.ok, (sample["query"], outcome.error)
            assert normalize_answer(outcome.result.final_value()) == \
                normalize_answer(sample["gold_answer"]), sample["query"]
    for sample in build.datasets["REST"]:
        pool = build.pool_for("REST", sample["dataset_name"])
        renamed, mapping = obfuscate_pool(pool, seed)
        call = mapping.rename_call(ToolCall.from_json_dict(sample["output"][0]))
        env = LabelEnv(workdir=tmp_path / f"rest_{sample['sample_id']}")
        result = renamed.execute(call.name, call.arguments, env)
        assert normalize_answer(result.payload) == \
            normalize_answer(sample["gold_answer"]), sample["query"]

    universe = [f"tool_{i}" for i in range(75)]
    assert len(shortlist_tools(universe, [universe[0]], 0.10, seed=0).tool_names) == 7
    rng = random.Random(99)
    draws = 0
    for fraction in (0.10, 0.25, 0.50, 0.75):
        for _ in range(250):
            gold = rng.choice(universe)
            shortlist = shortlist_tools(universe, [gold], fraction, seed=rng.randint(0, 10**9))
            assert gold in shortlist.tool_names
            draws += 1
    assert draws == 1000


@pytest.mark.criterion(8, "service contract: 100 concurrent GETs equal serial replay; "
                          "422/400/404 behave as specified")
def test_rest_service_contract(build, db_root):
    pool = build.pool_for("REST", "california_schools")
    app = create_app(pool, db_root)
    samples = [s for s in build.datasets["REST"]
               if s["dataset_name"] == "california_schools"]
    with BackgroundServer(app) as base_url:
        calls = [samples[i % len(samples)]["output"][0] for i in range(100)]

        def fetch(call):
            response = httpx.get(base_url + call["path"], params=call["arguments"],
                                 timeout=30)
            return response.status_code, response.text

        serial = [fetch(call) for call in calls]
        with concurrent.futures.ThreadPoolExecutor(max_workers=25) as pool_exec:
            parallel = list(pool_exec.map(fetch, calls))
        assert parallel == serial
        assert all(status == 200 for status, _ in serial)

        missing = httpx.get(base_url + "/v1/bird/california_schools/zip",
                            params={"district_name": "Long Beach Unified"})
        assert missing.status_code == 422
        assert missing.json()["param"] == "charter_school"

        bad_type = httpx.get(base_url + "/v1/bird/california_schools/zip",
                             params={"district_name": "x", "charter_school": "abc"})
        assert bad_type.status_code == 400

        unknown = httpx.get(base_url + "/v1/bird/california_schools/not_here")
        assert unknown.status_code == 404
        assert unknown.json()["error"] == "not found"


@pytest.mark.criterion(9, "determinism: same seed produces byte-identical datasets, "
                          "specs and reports")
def test_build_determinism(tmp_path):
    outputs = []
    for run in ("one", "two"):
        db = tmp_path / run / "db"
        out = tmp_path / run / "out"
        assert main(["build", "--db-root", str(db), "--out", str(out),
                     "--seed", "42", "--obfuscate"]) == 0
        dataset = [json.loads(line) for line in
                   (out / "datasets" / "slot.jsonl").read_text().splitlines()]
        predictions = tmp_path / run / "preds.jsonl"
        with open(predictions, "w") as handle:
            for row in dataset:
                handle.write(json.dumps({"sample_id": row["sample_id"],
                                         "text": json.dumps(row["output"])}) + "\n")
        eval_out = tmp_path / run / "eval"
        assert main(["eval", "--dataset", str(out / "datasets" / "slot.jsonl"),
                     "--pool-dir", str(out / "pools"), "--formulation", "SLOT",
                     "--db-root", str(db), "--predictions", str(predictions),
                     "--out", str(eval_out)]) == 0
        snapshot = {}
        for relative in sorted(p.relative_to(out) for p in out.rglob("*") if p.is_file()):
            snapshot[str(relative)] = (out / relative).read_bytes()
        snapshot["report.json"] = (eval_out / "report.json").read_bytes()
        outputs.append(snapshot)
    assert outputs[0].keys() == outputs[1].keys()
    for key in outputs[0]:
        assert outputs[0][key] == outputs[1][key], f"non-deterministic artifact: {key}"
