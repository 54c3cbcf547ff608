"""Command line entry point: ``oppmatch <subcommand> ...``.

Report records go to stdout as one JSON object per line; human-readable
summaries and diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import plotting
from .catalog import load_content_catalog, load_opportunity_snapshot, opportunity_from_json, write_jsonl
from .config import RunConfig, load_config, make_embedder, make_judge
from .errors import NotFound, OppMatchError
from .eval import (
    EvalQuery,
    RatingSet,
    ablation_report,
    alignment_report,
    build_eval_queries,
    build_judge_prompt,
    judge_alignment,
    judge_many,
)
from .eval.reports import read_jsonl
from .pipeline import MatchContext, benchmark_rerank, execute_parallel, prepopulate, run_daily, run_weekly_embed
from .prompts import build_content_prompt, build_opportunity_prompt
from .retrieval import measure_search_space
from .serving import RecommendationStore, lookup_payload, make_server
from .synth import SynthConfig, ablation_assignment, generate, graded_queries, mutate_day, synth_ratings
from .vector_store import EmbeddingStore

logger = logging.getLogger("oppmatch")


def _emit(record: dict[str, Any]) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def _note(text: str) -> None:
    sys.stderr.write(text.rstrip() + "\n")


def _config(args: argparse.Namespace) -> RunConfig:
    return load_config(getattr(args, "config", None), workers=getattr(args, "workers", None))


def _context(cfg: RunConfig) -> MatchContext:
    catalog = load_content_catalog(cfg.contents)
    opps = load_opportunity_snapshot(cfg.opportunities)
    if not cfg.embeddings_path.exists():
        raise OppMatchError(f"no embedding store at {cfg.embeddings_path}; run embed-contents first")
    view = EmbeddingStore.open(cfg.embeddings_path, cfg.dim).snapshot()
    return MatchContext.from_config(cfg, opps, catalog, view)


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = SynthConfig(
        seed=args.seed,
        n_contents=args.n_contents,
        n_opportunities=args.n_opportunities,
        target_pass_rate=args.pass_rate,
        delta_fraction=args.delta_fraction,
        new_fraction=args.new_fraction,
    )
    out = Path(args.out)
    corpus = generate(cfg)
    paths = corpus.write(out)
    record: dict[str, Any] = {"kind": "synth", **{k: str(v) for k, v in paths.items()}}
    rows = corpus.opportunities
    for day in range(args.days):
        mutation = mutate_day(rows, cfg, day)
        rows = mutation.opportunities
        day_path = out / f"opportunities_day{day + 1}.jsonl"
        write_jsonl(day_path, rows)
        (out / f"delta_truth_day{day + 1}.json").write_text(json.dumps(mutation.truth) + "\n", encoding="utf-8")
        record[f"day{day + 1}"] = str(day_path)
    if args.eval:
        assignments = ablation_assignment(corpus.opportunities, seed=args.seed)
        write_jsonl(out / "ablation_assignments.jsonl",
                    [{"query_id": q, "opportunityid": o, "group": g} for q, o, g in assignments])
        write_jsonl(out / "graded_queries.jsonl", graded_queries(corpus.contents, 22, seed=args.seed))
        record["assignments"] = str(out / "ablation_assignments.jsonl")
        record["graded_queries"] = str(out / "graded_queries.jsonl")
    _emit(record)
    _note(f"wrote synthetic corpus to {out} (analytic pass-rate {corpus.expected['analytic_pass_rate']:.4f})")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    cfg = _config(args)
    catalog = load_content_catalog(cfg.contents)
    report = run_weekly_embed(catalog, cfg.embeddings_path, make_embedder(cfg))
    _emit(report.to_json())
    _note(report.summary())
    return 0


def _run(args: argparse.Namespace, daily: bool) -> int:
    cfg = _config(args)
    ctx = _context(cfg)
    store = RecommendationStore(cfg.recommendations_dir, max_items=cfg.top_n)
    fn = run_daily if daily else prepopulate
    report = fn(ctx, store, cfg.watermark_path, workers=cfg.workers, retry_limit=cfg.retry_limit)
    _emit(report.to_json())
    _note(report.summary())
    return 0


def cmd_prepopulate(args: argparse.Namespace) -> int:
    return _run(args, daily=False)


def cmd_refresh(args: argparse.Namespace) -> int:
    if not args.daily:
        _note("refresh requires --daily")
        return 2
    return _run(args, daily=True)


def cmd_stats(args: argparse.Namespace) -> int:
    cfg = _config(args)
    catalog = load_content_catalog(cfg.contents)
    opps = load_opportunity_snapshot(cfg.opportunities)
    stats = measure_search_space(opps, catalog)
    _emit({"kind": "search_space", **stats.to_json()})
    _note(
        f"{stats.naive_pairs} naive pairs -> {stats.filtered_pairs} after filters "
        f"(reduction {stats.reduction_fraction:.1%})"
    )
    return 0


def cmd_render_prompt(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.kind == "content":
        prompt = build_content_prompt(load_content_catalog(cfg.contents)[args.id])
    else:
        opp = load_opportunity_snapshot(cfg.opportunities)[args.id]
        prompt = build_opportunity_prompt(opp, args.group or cfg.group)
    _emit({"source_id": prompt.source_id, "text": prompt.text, "feature_set": list(prompt.feature_set),
           "prompt_hash": prompt.prompt_hash})
    return 0


def cmd_recommend(args: argparse.Namespace) -> int:
    cfg = _config(args)
    store = RecommendationStore(cfg.recommendations_dir, max_items=cfg.top_n)
    try:
        rec = store.get(args.opportunity_id)
    except NotFound:
        _note(f"no recommendations for {args.opportunity_id}")
        return 1
    _emit(lookup_payload(rec))
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    cfg = _config(args)
    store = RecommendationStore(cfg.recommendations_dir, max_items=cfg.top_n)
    server = make_server(store, args.host, args.port)
    _note(f"serving {len(store)} recommendations on http://{args.host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ctx = _context(cfg)
    ids = ctx.opportunities.ids()
    counts = [int(c) for c in args.counts.split(",")]
    workers = [int(w) for w in args.worker_counts.split(",")]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    series: dict[str, list[float]] = {}
    rows = []
    for w in workers:
        label = f"W={w}"
        series[label] = []
        for n in counts:
            subset = ids[:n]
            stage = "rerank" if args.stage == "rerank" else "full"
            if stage == "rerank":
                result = benchmark_rerank(ctx, subset, w)
            else:
                result = execute_parallel(ctx, subset, workers=w, retry_limit=0)
            series[label].append(result.wall_time)
            rows.append({"workers": w, "opportunities": len(subset), "stage": stage,
                         "wall_time": result.wall_time, **{f"{k}_s": v for k, v in result.stage_seconds.items()}})
            _emit({"kind": "bench", **rows[-1]})
    with open(out / "throughput.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    plotting.throughput([min(n, len(ids)) for n in counts], series, out / "throughput.png")
    _note(f"wrote {out / 'throughput.csv'} and {out / 'throughput.png'}")
    return 0


# -- eval -------------------------------------------------------------------


def _load_queries(path: str) -> list[EvalQuery]:
    return [EvalQuery.from_json(obj) for obj in read_jsonl(path)]


def _load_ratings(path: str) -> list[RatingSet]:
    return [RatingSet.from_json(obj) for obj in read_jsonl(path)]


def cmd_eval_build(args: argparse.Namespace) -> int:
    cfg = _config(args)
    ctx = _context(cfg)
    specs = []
    for obj in read_jsonl(args.assignments):
        if "opportunityname" in obj:
            opp = opportunity_from_json(obj)
            specs.append((obj.get("query_id", opp.opportunity_id), opp, obj.get("group", "A")))
        else:
            specs.append((obj["query_id"], ctx.opportunities[obj["opportunityid"]], obj.get("group", "A")))
    queries = build_eval_queries(ctx, specs)
    write_jsonl(args.out, [q.to_json() for q in queries])
    if args.synth_ratings:
        write_jsonl(args.synth_ratings, [r.to_json() for r in synth_ratings(queries, seed=args.seed)])
    _emit({"kind": "eval_queries", "n": len(queries), "path": args.out})
    return 0


def cmd_eval_align(args: argparse.Namespace) -> int:
    queries = _load_queries(args.queries)
    report = alignment_report(queries, _load_ratings(args.ratings))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "align_scatter.csv")
    plotting.scatter_with_fit(
        [p[1] for p in report.points], [p[2] for p in report.points], out / "align_scatter.png",
        "mean cross score (top-5)", "mean human rating", report.pearson, report.spearman,
    )
    _emit(report.to_json())
    _note(f"pearson={report.pearson:.3f} spearman={report.spearman:.3f} over {report.n} queries")
    return 0


def cmd_eval_ablation(args: argparse.Namespace) -> int:
    report = ablation_report(_load_queries(args.queries))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.write_csv(out / "ablation.csv")
    plotting.ablation_strip(report.rows, out / "ablation.png")
    _emit({"kind": "ablation", **report.to_json()})
    for g, s in report.groups.items():
        _note(f"group {g}: n={s.n} mean={s.mean:.3f} min={s.min:.3f} max={s.max:.3f}")
    return 0


def cmd_eval_judge(args: argparse.Namespace) -> int:
    cfg = _config(args)
    queries = [q for q in _load_queries(args.queries) if len(q.doc_prompts) == 5]
    judge = make_judge(cfg)
    requests = [(q.query_id, build_judge_prompt(q.prompt, q.doc_prompts)) for q in queries]
    results = judge_many(requests, judge, max_in_flight=cfg.judge.max_in_flight)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    judge_ratings = [RatingSet(qid, judge.name, tuple(scores)) for qid, scores, _ in results]
    write_jsonl(out / "judge_ratings.jsonl", [r.to_json() for r in judge_ratings])
    write_jsonl(out / "judge_transcripts.jsonl", [t.to_json() for _, _, t in results])
    report = judge_alignment(queries, _load_ratings(args.ratings), judge_ratings)
    report.write_csv(out / "judge_scatter.csv")
    plotting.scatter_with_fit(
        [p[1] for p in report.points], [p[2] for p in report.points], out / "judge_scatter.png",
        "mean human rating", "mean judge rating", report.pearson, report.spearman,
    )
    _emit(report.to_json())
    _note(f"judge {judge.name}: pearson={report.pearson:.3f} spearman={report.spearman:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oppmatch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser, workers: bool = False) -> argparse.ArgumentParser:
        p.add_argument("--config", help="run configuration JSON file")
        if workers:
            p.add_argument("--workers", type=int, help="worker processes (overrides config)")
        return p

    p = sub.add_parser("synth", help="write a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-contents", type=int, default=2000)
    p.add_argument("--n-opportunities", type=int, default=300)
    p.add_argument("--pass-rate", type=float, default=0.175)
    p.add_argument("--delta-fraction", type=float, default=0.014)
    p.add_argument("--new-fraction", type=float, default=0.0)
    p.add_argument("--days", type=int, default=0, help="also write N mutated daily snapshots")
    p.add_argument("--eval", action="store_true", help="also write ablation assignments and graded queries")
    p.set_defaults(fn=cmd_synth)

    p = with_config(sub.add_parser("embed-contents", help="build or refresh the content embedding store"), True)
    p.add_argument("--weekly", action="store_true", help="accepted for scheduler symmetry")
    p.set_defaults(fn=cmd_embed)

    with_config(sub.add_parser("prepopulate", help="recommend for every opportunity"), True).set_defaults(
        fn=cmd_prepopulate
    )
    p = with_config(sub.add_parser("refresh", help="recompute recommendations for the delta"), True)
    p.add_argument("--daily", action="store_true")
    p.set_defaults(fn=cmd_refresh)

    with_config(sub.add_parser("stats", help="search-space statistics")).set_defaults(fn=cmd_stats)

    p = with_config(sub.add_parser("render-prompt", help="print the prompt for one record"))
    p.add_argument("--id", required=True)
    p.add_argument("--kind", choices=["opportunity", "content"], default="opportunity")
    p.add_argument("--group", choices=list("ABCD"))
    p.set_defaults(fn=cmd_render_prompt)

    p = with_config(sub.add_parser("recommend", help="look up stored recommendations"))
    p.add_argument("--opportunity-id", required=True)
    p.set_defaults(fn=cmd_recommend)

    p = with_config(sub.add_parser("serve", help="serve lookups and feedback over HTTP"))
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(fn=cmd_serve)

    p = with_config(sub.add_parser("bench", help="throughput against opportunity count"))
    p.add_argument("--counts", default="250,500,1000")
    p.add_argument("--worker-counts", default="1")
    p.add_argument("--stage", choices=["rerank", "full"], default="full")
    p.add_argument("--out", default="bench")
    p.set_defaults(fn=cmd_bench)

    ev = sub.add_parser("eval", help="evaluation reports").add_subparsers(dest="eval_command", required=True)
    p = with_config(ev.add_parser("build", help="run evaluation queries through the model"))
    p.add_argument("--assignments", required=True, help="jsonl of {query_id, opportunityid, group} or opportunity rows")
    p.add_argument("--out", required=True)
    p.add_argument("--synth-ratings", help="also write seeded synthetic expert ratings here")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_eval_build)
    p = ev.add_parser("align", help="cross score vs human ratings")
    p.add_argument("--queries", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval_align)
    p = ev.add_parser("ablation", help="per feature-group score summary")
    p.add_argument("--queries", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval_ablation)
    p = with_config(ev.add_parser("judge", help="LLM-as-judge scores vs human ratings"))
    p.add_argument("--queries", required=True)
    p.add_argument("--ratings", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval_judge)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.fn(args)
    except OppMatchError as exc:
        _note(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
