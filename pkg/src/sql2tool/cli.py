"""Command-line orchestration: build datasets, serve endpoints, evaluate, report.

Option precedence is flags > environment (SQL2TOOL_*) > --config JSON file.
Builds are fully seeded: the same corpus, database root and seed produce
byte-identical datasets, pool files and spec files.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sqlite3
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from . import bundled
from .agent import (
    HttpChatClient,
    HttpRestPool,
    ModelClientConfig,
    ScriptedClient,
    classify_trace,
    episode_completed,
    gold_replay_responses,
    run_episode,
)
from .evaluation import (
    MetricsReport,
    aggregate_scores,
    align_sequences,
    combined_pool_hash,
    parallel_map,
    score_instance,
    score_run,
)
from .pools import ToolPool, build_rest_pool, build_slot_pool, load_pool
from .runtime import ToolCall
from .service import ServiceConfig, serve
from .specs import obfuscate_pool, rewrite_sequence, shortlist_tools, write_spec
from .sql_frontend import SqlSyntaxError, UnsupportedConstructError, parse_sql
from .transpilers import (
    build_sel_pool,
    compile_slot_sequence,
    deduplicate_endpoints,
    execute_sql_oracle,
    rewrite_to_sel_sequence,
    synthesize_rest_endpoint,
    verify_equivalence,
)

FORMULATIONS = ("SLOT", "SEL", "REST")


# --- configuration plumbing ---

def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as handle:
        return json.load(handle)


def resolve_option(flag_value, name: str, config_file: dict, default=None):
    """flags > environment > config file > default."""
    if flag_value is not None:
        return flag_value
    env_value = os.environ.get(f"SQL2TOOL_{name.upper()}")
    if env_value is not None:
        return env_value
    if name in config_file:
        return config_file[name]
    return default


# --- schema introspection for non-bundled databases ---

_SQLITE_TYPE_TO_DTYPE = {"INTEGER": "integer", "REAL": "number", "TEXT": "string"}


def database_column_enum(db_path: Path, database: str) -> list[dict]:
    if database in bundled.COLUMN_DESCRIPTIONS:
        return bundled.column_enum(database)
    conn = sqlite3.connect(f"file:{db_path}?mode=ro", uri=True)
    rows = []
    try:
        tables = [r[0] for r in conn.execute(
            "SELECT name FROM sqlite_master WHERE type='table' ORDER BY rowid")]
        for table in tables:
            for info in conn.execute(f'PRAGMA table_info("{table}")'):
                dtype = _SQLITE_TYPE_TO_DTYPE.get(str(info[2]).upper(), "string")
                rows.append({"key_name": f"{table}_{info[1]}",
                             "description": str(info[1]), "dtype": dtype})
    finally:
        conn.close()
    return rows


def column_description_map(database: str) -> dict | None:
    table = bundled.COLUMN_DESCRIPTIONS.get(database)
    return table


def _simplify_gold(rows: list[list]) -> object:
    if rows and all(len(row) == 1 for row in rows):
        return [row[0] for row in rows]
    return rows


# --- dataset building ---

@dataclass
class BuildStats:
    formulation: str
    corpus_size: int = 0
    compiled: int = 0
    skipped: list[tuple[int, str]] = field(default_factory=list)
    retained: int = 0
    discarded: list[tuple[int, str]] = field(default_factory=list)
    total_calls: int = 0

    @property
    def retention_rate(self) -> float:
        return self.retained / self.compiled if self.compiled else 0.0

    @property
    def avg_calls_per_query(self) -> float:
        return self.total_calls / self.retained if self.retained else 0.0

    def to_json_dict(self) -> dict:
        return {
            "formulation": self.formulation,
            "corpus_size": self.corpus_size,
            "compiled": self.compiled,
            "skipped": [{"corpus_index": i, "reason": r} for i, r in self.skipped],
            "retained": self.retained,
            "discarded": [{"corpus_index": i, "reason": r} for i, r in self.discarded],
            "retention_rate": self.retention_rate,
            "avg_tool_calls_per_query": self.avg_calls_per_query,
        }


@dataclass
class BuildResult:
    datasets: dict[str, list[dict]]
    pools: dict[tuple[str, str], ToolPool]
    records: dict[str, list]
    stats: dict[str, BuildStats]

    def pool_for(self, formulation: str, database: str) -> ToolPool:
        return self.pools[(formulation, database)]


def build_artifacts(corpus: list[dict], db_root: Path, seed: int = 0,
                    formulations: tuple[str, ...] = FORMULATIONS,
                    workdir: Path | None = None,
                    parallelism: int | None = None) -> BuildResult:
    """Compile, verify and collect datasets for the requested formulations.

    Verification runs across instances with `parallelism` workers (default:
    processor count); outputs are ordered by corpus position either way.
    """
    db_root = Path(db_root)
    if workdir is None:
        workdir = Path(tempfile.mkdtemp(prefix="sql2tool_build_"))
    databases = sorted({row["dataset_name"] for row in corpus})
    for database in databases:
        path = db_root / f"{database}.sqlite"
        if not path.exists():
            if database in bundled.DATABASES:
                bundled.create_database(database, db_root)
            else:
                raise FileNotFoundError(f"database file {path} does not exist")

    enums = {db: database_column_enum(db_root / f"{db}.sqlite", db) for db in databases}
    slot_pools = {db: build_slot_pool(db, enums[db]) for db in databases}
    sel_pools = {db: build_sel_pool(db, enums[db]) for db in databases}

    parsed: list[tuple[int, dict, object]] = []
    parse_failures: list[tuple[int, str]] = []
    oracles: dict[int, object] = {}
    for index, row in enumerate(corpus):
        try:
            ast = parse_sql(row["query"])
        except (SqlSyntaxError, UnsupportedConstructError) as exc:
            parse_failures.append((index, str(exc)))
            continue
        gold_rows = execute_sql_oracle(db_root / f"{row['dataset_name']}.sqlite", row["query"])
        oracles[index] = _simplify_gold(gold_rows)
        parsed.append((index, row, ast))

    datasets: dict[str, list[dict]] = {}
    records: dict[str, list] = {}
    stats: dict[str, BuildStats] = {}
    pools: dict[tuple[str, str], ToolPool] = {}
    slot_compiled: dict[int, tuple] = {}

    if "SLOT" in formulations or "SEL" in formulations:
        for index, row, ast in parsed:
            try:
                init, calls = compile_slot_sequence(ast, f"{row['dataset_name']}.sqlite")
                slot_compiled[index] = (init, calls)
            except UnsupportedConstructError as exc:
                slot_compiled[index] = (None, str(exc))

    for formulation in formulations:
        stat = BuildStats(formulation=formulation, corpus_size=len(corpus))
        stat.skipped.extend(parse_failures)
        rows_out: list[dict] = []
        recs: list = []

        if formulation in ("SLOT", "SEL"):
            for db in databases:
                pools[(formulation, db)] = slot_pools[db] if formulation == "SLOT" else sel_pools[db]
            candidates: list[tuple[int, dict]] = []
            for index, row, ast in parsed:
                init, calls = slot_compiled[index]
                if init is None:
                    stat.skipped.append((index, calls))
                    continue
                if formulation == "SEL":
                    body = rewrite_to_sel_sequence(calls)
                    pool = pools[("SEL", row["dataset_name"])]
                    missing = sorted({c.name for c in body} - set(pool.tools))
                    if missing:
                        stat.skipped.append(
                            (index, f"not expressible in SEL: no tool for {missing}"))
                        continue
                else:
                    body = calls
                stat.compiled += 1
                sample = {
                    "query": row["query"],
                    "input": row["input"],
                    "dataset_name": row["dataset_name"],
                    "gold_answer": oracles[index],
                    "output": [c.to_json_dict() for c in body],
                    "initialization_step": init.to_json_dict(),
                    "sample_id": None,
                }
                candidates.append((index, sample))

            def verify_one(pair, _formulation=formulation):
                index, sample = pair
                return verify_equivalence(
                    sample, _formulation, pools[(_formulation, sample["dataset_name"])],
                    db_root, Path(workdir) / f"{_formulation.lower()}_{index}")

            verdicts = parallel_map(verify_one, candidates, parallelism)
            for (index, sample), record in zip(candidates, verdicts):
                if record.matched:
                    sample["sample_id"] = len(rows_out)
                    record.sample_id = sample["sample_id"]
                    rows_out.append(sample)
                    stat.retained += 1
                    stat.total_calls += len(sample["output"])
                else:
                    record.sample_id = f"corpus_{index}"
                    stat.discarded.append((index, record.discard_reason or "mismatch"))
                recs.append(record)

        elif formulation == "REST":
            per_db: dict[str, list] = {db: [] for db in databases}
            membership: dict[int, tuple[str, int]] = {}
            gold_args: dict[int, dict] = {}
            for index, row, ast in parsed:
                db = row["dataset_name"]
                endpoint, arguments = synthesize_rest_endpoint(
                    ast, row["input"], db, column_descriptions=column_description_map(db))
                membership[index] = (db, len(per_db[db]))
                per_db[db].append(endpoint)
                gold_args[index] = arguments
            endpoint_lookup: dict[str, tuple[list, dict]] = {}
            for db in databases:
                survivors, remap = deduplicate_endpoints(per_db[db])
                endpoint_lookup[db] = (survivors, remap)
                pools[("REST", db)] = build_rest_pool(
                    db, [e.to_json_dict() for e in survivors], db_root=db_root)
            candidates = []
            for index, row, ast in parsed:
                db, position = membership[index]
                survivors, remap = endpoint_lookup[db]
                endpoint = survivors[remap[position]]
                stat.compiled += 1
                sample = {
                    "query": row["query"],
                    "input": row["input"],
                    "dataset_name": db,
                    "gold_answer": oracles[index],
                    "output": [{
                        "name": endpoint.name,
                        "arguments": gold_args[index],
                        "path": endpoint.path,
                    }],
                    "sample_id": None,
                }
                candidates.append((index, sample))

            def verify_rest(pair):
                index, sample = pair
                db = sample["dataset_name"]
                record = verify_equivalence(sample, "REST", pools[("REST", db)],
                                            db_root, Path(workdir) / f"rest_{index}")
                response = None
                if record.matched:
                    call = sample["output"][0]
                    response = pools[("REST", db)].execute(
                        call["name"], call["arguments"],
                        _scratch_env(workdir, f"rest_out_{index}"))
                return record, response

            verdicts = parallel_map(verify_rest, candidates, parallelism)
            for (index, sample), (record, response) in zip(candidates, verdicts):
                if record.matched:
                    sample["output_after_executing_api"] = json.dumps(
                        response.payload, ensure_ascii=False)
                    sample["sample_id"] = len(rows_out)
                    record.sample_id = sample["sample_id"]
                    rows_out.append(sample)
                    stat.retained += 1
                    stat.total_calls += 1
                else:
                    record.sample_id = f"corpus_{index}"
                    stat.discarded.append((index, record.discard_reason or "mismatch"))
                recs.append(record)
        else:
            raise ValueError(f"unknown formulation {formulation!r}")

        datasets[formulation] = rows_out
        records[formulation] = recs
        stats[formulation] = stat

    return BuildResult(datasets=datasets, pools=pools, records=records, stats=stats)


def _scratch_env(workdir: Path, name: str):
    from .runtime import LabelEnv
    path = Path(workdir) / name
    path.mkdir(parents=True, exist_ok=True)
    return LabelEnv(workdir=path)


def _write_jsonl(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        for row in rows:
            handle.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_build(result: BuildResult, out_dir: Path, seed: int,
                obfuscate: bool = False, shortlist_fraction: float | None = None) -> None:
    out_dir = Path(out_dir)
    for formulation, rows in result.datasets.items():
        _write_jsonl(out_dir / "datasets" / f"{formulation.lower()}.jsonl", rows)
        out_dir.joinpath("verification").mkdir(parents=True, exist_ok=True)
        with open(out_dir / "verification" / f"{formulation.lower()}.json", "w",
                  encoding="utf-8") as handle:
            json.dump([r.to_json_dict() for r in result.records[formulation]], handle,
                      indent=2, ensure_ascii=False)
            handle.write("\n")
    for (formulation, database), pool in result.pools.items():
        pool.save(out_dir / "pools" / f"{formulation.lower()}_{database}.json")
        write_spec(pool, out_dir / "specs" / f"{formulation.lower()}_{database}.json")
    with open(out_dir / "build_stats.json", "w", encoding="utf-8") as handle:
        json.dump({f: s.to_json_dict() for f, s in result.stats.items()}, handle,
                  indent=2, ensure_ascii=False)
        handle.write("\n")

    if obfuscate:
        (out_dir / "obfuscated" / "maps").mkdir(parents=True, exist_ok=True)
        for (formulation, database), pool in result.pools.items():
            renamed, mapping = obfuscate_pool(pool, seed)
            renamed.save(out_dir / "obfuscated" / "pools"
                         / f"{formulation.lower()}_{database}.json")
            with open(out_dir / "obfuscated" / "maps"
                      / f"{formulation.lower()}_{database}.json", "w",
                      encoding="utf-8") as handle:
                json.dump(mapping.to_json_dict(), handle, indent=2, ensure_ascii=False)
                handle.write("\n")
        for formulation, rows in result.datasets.items():
            renamed_rows = []
            for row in rows:
                database = row["dataset_name"]
                _, mapping = obfuscate_pool(result.pools[(formulation, database)], seed)
                calls = [ToolCall.from_json_dict(c) for c in row["output"]]
                renamed_calls = rewrite_sequence(calls, mapping)
                new_row = dict(row)
                if formulation == "REST":
                    new_row["output"] = [
                        {"name": c.name, "arguments": c.arguments,
                         "path": row["output"][i].get("path")}
                        for i, c in enumerate(renamed_calls)
                    ]
                else:
                    new_row["output"] = [c.to_json_dict() for c in renamed_calls]
                renamed_rows.append(new_row)
            _write_jsonl(out_dir / "obfuscated" / "datasets"
                         / f"{formulation.lower()}.jsonl", renamed_rows)

    if shortlist_fraction is not None:
        for formulation, rows in result.datasets.items():
            shortlists = []
            for row in rows:
                pool = result.pools[(formulation, row["dataset_name"])]
                gold = [c["name"] for c in row["output"]]
                entry = shortlist_tools(list(pool.tools), gold, shortlist_fraction,
                                        seed + row["sample_id"],
                                        instance_id=row["sample_id"])
                shortlists.append(entry.to_json_dict())
            _write_jsonl(out_dir / "shortlists" / f"{formulation.lower()}.jsonl", shortlists)


def print_build_stats(result: BuildResult) -> None:
    for formulation, stat in result.stats.items():
        print(f"[{formulation}] corpus={stat.corpus_size} compiled={stat.compiled} "
              f"retained={stat.retained} "
              f"equivalence_discards={len(stat.discarded)} "
              f"skipped_unsupported={len(stat.skipped)} "
              f"retention={stat.retention_rate:.1%} "
              f"avg_tool_calls_per_query={stat.avg_calls_per_query:.2f}")
        for index, reason in stat.skipped:
            print(f"  skipped corpus[{index}]: {reason}")
        for index, reason in stat.discarded:
            print(f"  discarded corpus[{index}]: {reason}")


# --- subcommands ---

def cmd_build(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    db_root = Path(resolve_option(args.db_root, "db_root", config, "build/db"))
    out_dir = Path(resolve_option(args.out, "out", config, "build/out"))
    seed = int(resolve_option(args.seed, "seed", config, 0))
    corpus_file = resolve_option(args.corpus, "corpus", config, None)
    formulations = tuple(
        f.upper() for f in (args.formulation or "all").split(",")
    ) if (args.formulation or "all") != "all" else FORMULATIONS

    parallelism = resolve_option(args.parallelism, "parallelism", config, None)
    corpus = bundled.load_corpus(Path(corpus_file) if corpus_file else None)
    db_root.mkdir(parents=True, exist_ok=True)
    result = build_artifacts(corpus, db_root, seed=seed, formulations=formulations,
                             parallelism=int(parallelism) if parallelism else None)
    write_build(result, out_dir, seed, obfuscate=args.obfuscate,
                shortlist_fraction=args.shortlist_fraction)
    print_build_stats(result)
    total_retained = sum(s.retained for s in result.stats.values())
    if total_retained == 0:
        print("error: zero retained instances", file=sys.stderr)
        return 1
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    pool_path = resolve_option(args.pool, "pool", config, None)
    if not pool_path or not Path(pool_path).exists():
        print(f"error: pool file not found: {pool_path}", file=sys.stderr)
        return 1
    service_config = ServiceConfig(
        bind=str(resolve_option(args.bind, "bind", config, "127.0.0.1")),
        port=int(resolve_option(args.port, "port", config, 8000)),
        database_root=Path(resolve_option(args.db_root, "db_root", config, "build/db")),
        pool_path=Path(pool_path),
        timeout_ms=int(resolve_option(args.timeout_ms, "timeout_ms", config, 10000)),
        max_concurrent=int(resolve_option(args.max_concurrent, "max_concurrent", config, 64)),
    )
    try:
        serve(service_config)
    except KeyboardInterrupt:
        pass
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _load_dataset(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows


def _load_predictions(path: Path) -> tuple[dict, list[str]]:
    predictions: dict = {}
    problems: list[str] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                problems.append(f"line {line_no}: invalid JSON ({exc})")
                continue
            if not isinstance(row, dict) or "sample_id" not in row or "text" not in row:
                problems.append(f"line {line_no}: expected keys sample_id and text")
                continue
            predictions[row["sample_id"]] = row["text"]
    return predictions, problems


def _write_instance_csv(path: Path, report: MetricsReport,
                        agent_rows: list[dict] | None = None) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    agent_by_id = {row["sample_id"]: row for row in agent_rows or []}
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        header = ["sample_id", "dataset_name", "parse_stage",
                  "intent_p", "intent_r", "intent_f1",
                  "slot_p", "slot_r", "slot_f1", "slot_zero_pairs",
                  "completed", "error_category"]
        if agent_by_id:
            header += ["turns", "oob", "stuck"]
        writer.writerow(header)
        for score in report.per_instance:
            row = [score.sample_id, score.dataset_name, score.parse_stage,
                   f"{score.intent[0]:.6f}", f"{score.intent[1]:.6f}",
                   f"{score.intent[2]:.6f}",
                   f"{score.slot.precision:.6f}", f"{score.slot.recall:.6f}",
                   f"{score.slot.f1:.6f}", int(score.slot.zero_pairs),
                   int(score.completed), score.error_category or ""]
            if agent_by_id:
                extra = agent_by_id.get(score.sample_id, {})
                row += [extra.get("turns", ""), extra.get("oob", ""),
                        extra.get("stuck", "")]
            writer.writerow(row)


def _pool_for_instances(instances: list[dict], pool_dir: Path, formulation: str,
                        db_root: Path) -> dict[str, ToolPool]:
    pools = {}
    for database in sorted({row["dataset_name"] for row in instances}):
        pool_path = Path(pool_dir) / f"{formulation.lower()}_{database}.json"
        pools[database] = load_pool(pool_path, db_root=db_root)
    return pools


def cmd_eval(args: argparse.Namespace) -> int:
    config = _load_config_file(args.config)
    db_root = Path(resolve_option(args.db_root, "db_root", config, "build/db"))
    dataset_path = Path(resolve_option(args.dataset, "dataset", config, ""))
    pool_dir = Path(resolve_option(args.pool_dir, "pool_dir", config, ""))
    formulation = str(resolve_option(args.formulation, "formulation", config, "SLOT")).upper()
    out_dir = Path(resolve_option(args.out, "out", config, "eval_out"))
    if not dataset_path.exists():
        print(f"error: dataset not found: {dataset_path}", file=sys.stderr)
        return 2
    instances = _load_dataset(dataset_path)
    db_pools = _pool_for_instances(instances, pool_dir, formulation, db_root)
    workdir = Path(tempfile.mkdtemp(prefix="sql2tool_eval_"))

    parallelism = resolve_option(args.parallelism, "parallelism", config, None)
    workers = int(parallelism) if parallelism else None

    agent_rows: list[dict] | None = None
    episodes = []
    if args.agent:

        def run_one(instance: dict):
            pool = db_pools[instance["dataset_name"]]
            if formulation == "REST" and args.service_url:
                pool = HttpRestPool(pool, args.service_url)
            if args.scripted_gold:
                client = ScriptedClient(gold_replay_responses(instance))
            else:
                client_config = ModelClientConfig(
                    endpoint=args.model_endpoint or "",
                    model=args.model or "",
                    auth_env_var=args.auth_env or "SQL2TOOL_MODEL_TOKEN",
                )
                client = HttpChatClient(client_config)
            episode_dir = workdir / f"episode_{instance['sample_id']}"
            episode_dir.mkdir(parents=True, exist_ok=True)
            episode = run_episode(instance, pool, client, workdir=episode_dir,
                                  db_root=db_root)
            completed = episode_completed(episode, instance)
            flags = classify_trace(episode, completed)
            row = {
                "sample_id": instance["sample_id"],
                "turns": flags.turns,
                "oob": int(flags.oob),
                "stuck": int(flags.stuck),
                "unclassified": int(flags.unclassified),
                "completed": int(completed),
            }
            actions = [t.action for t in episode.turns if t.action]
            gold = [ToolCall.from_json_dict(c) for c in instance["output"]]
            alignment = align_sequences(actions, gold)
            raw_actions = json.dumps([
                {"name": t.action, "arguments": t.action_input or {}}
                for t in episode.turns if t.action
            ])
            score = score_instance(instance, raw_actions, pool, db_root,
                                   workdir / f"score_{instance['sample_id']}")
            return episode, row, score, len(gold), len(actions), len(alignment.pairs)

        results = parallel_map(run_one, instances, workers)
        episodes = [r[0] for r in results]
        agent_rows = [r[1] for r in results]
        scores = [r[2] for r in results]
        gold_lengths = [r[3] for r in results]
        pred_lengths = [r[4] for r in results]
        matched_counts = [r[5] for r in results]
        n = len(agent_rows) or 1
        agent_stats = {
            "avg_loops": sum(r["turns"] for r in agent_rows) / n,
            "completion_rate": sum(r["completed"] for r in agent_rows) / n,
            "oob_rate": sum(r["oob"] for r in agent_rows) / n,
            "stuck_rate": sum(r["stuck"] for r in agent_rows) / n,
            "unclassified_rate": sum(r["unclassified"] for r in agent_rows) / n,
        }
        report = aggregate_scores(formulation, combined_pool_hash(db_pools), scores,
                                  gold_lengths, pred_lengths, matched_counts,
                                  agent_stats=agent_stats)
    else:
        predictions_path = resolve_option(args.predictions, "predictions", config, None)
        if not predictions_path or not Path(predictions_path).exists():
            print(f"error: predictions file not found: {predictions_path}", file=sys.stderr)
            return 2
        predictions, problems = _load_predictions(Path(predictions_path))
        for problem in problems:
            print(f"warning: {problem}", file=sys.stderr)
        report = score_run(instances, predictions, db_pools, db_root, workdir,
                           formulation, workers=workers)

    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    with open(report_path, "w", encoding="utf-8") as handle:
        json.dump(report.to_json_dict(), handle, indent=2, ensure_ascii=False)
        handle.write("\n")
    _write_instance_csv(out_dir / "per_instance.csv", report, agent_rows)
    if episodes:
        _write_jsonl(out_dir / "episodes.jsonl",
                     [episode.to_json_dict() for episode in episodes])
    print(f"report written to {report_path}")
    print_report(report.to_json_dict())
    return 0


def print_report(report: dict) -> None:
    intent = report["intent"]
    slot = report["slot"]
    print(f"formulation={report['formulation']} n={report['n_instances']} "
          f"pool_hash={report['pool_hash'][:12]}")
    print(f"intent  P={intent['precision']:.3f} R={intent['recall']:.3f} "
          f"F1={intent['f1']:.3f}")
    print(f"slot    P={slot['precision']:.3f} R={slot['recall']:.3f} "
          f"F1={slot['f1']:.3f} (zero-pair instances: "
          f"{report['slot_zero_pair_instances']})")
    print(f"completion rate = {report['completion_rate']:.3f}")
    histogram = report.get("error_histogram", {})
    shown = {k: v for k, v in histogram.items() if v}
    if shown:
        print("errors: " + ", ".join(f"{k}={v}" for k, v in shown.items()))
    agent = report.get("agent")
    if agent:
        print(f"agent   avg_loops={agent['avg_loops']:.2f} "
              f"completion={agent['completion_rate']:.3f} "
              f"oob={agent['oob_rate']:.3f} stuck={agent['stuck_rate']:.3f} "
              f"unclassified={agent['unclassified_rate']:.3f}")


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.report)
    if not path.exists():
        print(f"error: report not found: {path}", file=sys.stderr)
        return 2
    with open(path, encoding="utf-8") as handle:
        report = json.load(handle)
    print_report(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sql2tool",
        description="Compile SQL SELECT queries into verified tool-calling tasks, "
                    "serve them as live endpoints and score models against them.",
    )
    parser.add_argument("--config", help="JSON config file (lowest precedence)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_build = sub.add_parser("build", help="build datasets, pools, specs")
    p_build.add_argument("--corpus", help="corpus JSON (defaults to the bundled corpus)")
    p_build.add_argument("--db-root", dest="db_root", help="directory of .sqlite files")
    p_build.add_argument("--out", help="output directory")
    p_build.add_argument("--seed", type=int, help="build seed")
    p_build.add_argument("--formulation", help="all or comma list of slot,sel,rest")
    p_build.add_argument("--obfuscate", action="store_true",
                         help="also emit FUNC_N/ARG_K renamed pools and datasets")
    p_build.add_argument("--shortlist-fraction", type=float, default=None,
                         help="also emit per-instance tool shortlists")
    p_build.add_argument("--parallelism", type=int,
                         help="verification workers (default: processor count)")
    p_build.set_defaults(func=cmd_build)

    p_serve = sub.add_parser("serve", help="host a REST pool over HTTP")
    p_serve.add_argument("--pool", help="REST pool JSON file")
    p_serve.add_argument("--db-root", dest="db_root")
    p_serve.add_argument("--bind")
    p_serve.add_argument("--port", type=int)
    p_serve.add_argument("--timeout-ms", dest="timeout_ms", type=int)
    p_serve.add_argument("--max-concurrent", dest="max_concurrent", type=int)
    p_serve.set_defaults(func=cmd_serve)

    p_eval = sub.add_parser("eval", help="score predictions or run agent episodes")
    p_eval.add_argument("--dataset", help="dataset JSONL")
    p_eval.add_argument("--pool-dir", dest="pool_dir", help="directory of pool files")
    p_eval.add_argument("--formulation", help="SLOT, SEL or REST")
    p_eval.add_argument("--db-root", dest="db_root")
    p_eval.add_argument("--predictions", help="predictions JSONL (sample_id, text)")
    p_eval.add_argument("--out", help="output directory for report + CSV")
    p_eval.add_argument("--agent", action="store_true", help="run ReACT episodes")
    p_eval.add_argument("--scripted-gold", dest="scripted_gold", action="store_true",
                        help="agent mode with the gold-replay stub client")
    p_eval.add_argument("--model-endpoint", dest="model_endpoint",
                        help="chat-completions endpoint URL for agent mode")
    p_eval.add_argument("--model", help="model identifier for agent mode")
    p_eval.add_argument("--auth-env", dest="auth_env",
                        help="environment variable holding the API token")
    p_eval.add_argument("--service-url", dest="service_url",
                        help="REST service base URL for agent mode")
    p_eval.add_argument("--parallelism", type=int,
                        help="scoring workers (default: processor count)")
    p_eval.set_defaults(func=cmd_eval)

    p_report = sub.add_parser("report", help="pretty-print a report JSON")
    p_report.add_argument("report")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
