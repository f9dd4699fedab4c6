"""Command-line interface.

Exit codes: 0 on success, 1 on a domain error (bad data, unreachable backend,
corrupt workspace, ...), 2 on usage errors (argparse's own convention).
Machine-readable outputs go to the paths given by flags; logs go to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import backends, corpus, evalstats, filterpipe, selfloop, service
from .config import RunConfig, load_run_config
from .errors import ConfigError, PipelineError
from .util import atomic_write_json, atomic_write_text, json_line

log = logging.getLogger("scriptannot")

DEFAULT_SWEEP_ALPHAS = "0,0.5,0.8,0.9,0.95,0.99"


def _common(parser: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        parser.add_argument("--config", type=Path, default=None, help="path to a run-config JSON file")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--workers", type=int, default=None, help="worker pool size (default: CPUs, capped at 16)")
    parser.add_argument("--quiet", action="store_true", help="suppress informational logging")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(getattr(args, "config", None))
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig(**{**cfg.__dict__, "seed": args.seed})
    if getattr(args, "workers", None) is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be positive")
        cfg = RunConfig(**{**cfg.__dict__, "workers": args.workers})
    return cfg


def _workers(cfg: RunConfig) -> int:
    return cfg.workers if cfg.workers is not None else backends.DEFAULT_WORKERS


def _parse_temperatures(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in text.split(",") if part.strip())
    except ValueError as exc:
        raise ConfigError(f"bad temperature list {text!r}") from exc


def _parse_candidates(text: str) -> tuple[str, str]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) != 2:
        raise ConfigError("--candidates needs exactly two comma-separated names")
    return parts[0], parts[1]


# -- commands -----------------------------------------------------------------


def _cmd_ingest(args: argparse.Namespace) -> int:
    dataset = corpus.load_jsonl(args.input, name=args.name)
    split = corpus.split_stats(dataset)
    print(split.render_text())
    report: dict = {"split": split.to_json_dict()}
    if args.tokens:
        stats = corpus.corpus_stats(dataset)
        print()
        print(stats.render_text())
        report["tokens"] = stats.to_json_dict()
    if args.stats_out:
        atomic_write_json(args.stats_out, report)
        log.info("wrote stats report to %s", args.stats_out)
    return 0


def _cmd_annotate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    dataset = corpus.load_jsonl(args.input)
    temperatures = _parse_temperatures(args.temperatures) if args.temperatures else cfg.filter.temperatures
    backend = backends.make_backend(cfg.annotator, cfg.http)
    sets = backends.annotate_corpus(
        backend,
        cfg.annotator,
        dataset,
        temperatures,
        workers=_workers(cfg),
        template=cfg.annotate_template,
        prompts_dir=cfg.prompts_dir,
        max_output_tokens=cfg.max_output_tokens,
        seed=cfg.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for temp in sorted(sets):
        annset = sets[temp]
        path = out_dir / f"annotations_t{temp:g}.jsonl"
        filterpipe.save_annotation_jsonl(annset, path)
        log.info("t=%g: %d drafts, %d failures -> %s", temp, len(annset.drafts), len(annset.failures), path)
        print(f"t={temp:g} drafts={len(annset.drafts)} failures={len(annset.failures)}")
    return 0


def _load_annotation_dir(cfg: RunConfig, directory: Path) -> dict[float, filterpipe.AnnotationSet]:
    sets = {}
    for temp in cfg.filter.temperatures:
        path = directory / f"annotations_t{temp:g}.jsonl"
        if not path.is_file():
            raise ConfigError(f"missing annotation file for t={temp:g}: {path}")
        sets[temp] = filterpipe.load_annotation_jsonl(path, temp)
    return sets


def _cmd_filter(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    sets = _load_annotation_dir(cfg, Path(args.annotations_dir))
    filter_cfg = cfg.filter_with_judge()
    pseudo, report = filterpipe.run_pipeline(
        sets,
        filter_cfg,
        workers=_workers(cfg),
        iteration=args.iteration,
        prompts_dir=cfg.prompts_dir,
        seed=cfg.seed,
    )
    corpus.save_jsonl(pseudo, args.out)
    print(report.render_text())
    if args.report_out:
        atomic_write_json(args.report_out, report.to_json_dict())
    log.info("kept %d pseudo-labels -> %s", len(pseudo), args.out)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    sets = _load_annotation_dir(cfg, Path(args.annotations_dir))
    alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    rows = filterpipe.retention_sweep(sets, alphas, cfg.filter.temperatures)
    csv_text = filterpipe.render_sweep_csv(rows)
    if args.out:
        atomic_write_text(Path(args.out), csv_text)
        log.info("wrote sweep to %s", args.out)
    else:
        print(csv_text, end="")
    return 0


def _print_loop_result(result: selfloop.LoopResult) -> None:
    for state in result.states:
        kept = len(state.pseudo_labels) if state.pseudo_labels is not None else 0
        print(f"iteration {state.iteration}: model={state.model.identifier} kept={kept}")
    print(f"final model: {result.model.identifier}")


def _cmd_loop(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    result = selfloop.run_loop(cfg.loop_config())
    _print_loop_result(result)
    return 0


def _cmd_resume(args: argparse.Namespace) -> int:
    result = selfloop.resume(args.workspace)
    _print_loop_result(result)
    return 0


def _cmd_eval_accuracy(args: argparse.Namespace) -> int:
    predictions = corpus.load_jsonl(args.predictions)
    truth = corpus.load_jsonl(args.truth)
    result = evalstats.accuracy(predictions, truth, facet=args.facet)
    print(result.render_text())
    if args.json_out:
        atomic_write_json(args.json_out, result.to_json_dict())
    return 0


def _cmd_eval_mcnemar(args: argparse.Namespace) -> int:
    counts_given = args.b is not None or args.c is not None
    paths_given = args.predictions_a or args.predictions_b or args.truth
    if counts_given and paths_given:
        raise ConfigError("pass either --b/--c or the three dataset paths, not both")
    if counts_given:
        if args.b is None or args.c is None:
            raise ConfigError("--b and --c must be given together")
        result = evalstats.mcnemar_from_counts(args.b, args.c)
    else:
        if not (args.predictions_a and args.predictions_b and args.truth):
            raise ConfigError("need --predictions-a, --predictions-b and --truth (or --b/--c)")
        result = evalstats.mcnemar(
            corpus.load_jsonl(args.predictions_a),
            corpus.load_jsonl(args.predictions_b),
            corpus.load_jsonl(args.truth),
        )
    print(f"b={result.b} c={result.c} chi_square={result.chi_square:.6f} p_value={result.p_value:.3e}"
          + (" (degenerate)" if result.degenerate else ""))
    if args.json_out:
        atomic_write_json(args.json_out, result.to_json_dict())
    return 0


def _load_votes(path: Path) -> list[evalstats.PairwiseVote]:
    votes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            votes.append(
                evalstats.PairwiseVote(
                    pair_id=obj["pair_id"],
                    evaluator=obj["evaluator"],
                    choice=obj["choice"],
                    blinding=obj["blinding"],
                    rationale=obj.get("rationale"),
                )
            )
    return votes


def _cmd_eval_winrate(args: argparse.Namespace) -> int:
    votes = _load_votes(args.votes)
    candidates = _parse_candidates(args.candidates) if args.candidates else None
    result = evalstats.win_rate(votes, candidates)
    print(
        f"{result.candidate_a}: {result.wins_a} wins ({result.rate_a:.2f}%)\n"
        f"{result.candidate_b}: {result.wins_b} wins ({result.rate_b:.2f}%)\n"
        f"equal: {result.equals} (excluded from rates)"
    )
    if args.json_out:
        atomic_write_json(args.json_out, result.to_json_dict())
    return 0


def _cmd_eval_phrases(args: argparse.Namespace) -> int:
    if args.phrases_file:
        phrases = [l.rstrip("\n") for l in Path(args.phrases_file).read_text(encoding="utf-8").splitlines() if l.strip()]
    elif args.phrases:
        phrases = [p.strip() for p in args.phrases.split(",") if p.strip()]
    else:
        raise ConfigError("need --phrases or --phrases-file")
    corpora = {}
    for spec in args.corpus:
        if "=" not in spec:
            raise ConfigError(f"--corpus must look like name=path, got {spec!r}")
        name, _, path = spec.partition("=")
        corpora[name] = corpus.load_jsonl(path, name=name)
    table = evalstats.phrase_overlap(phrases, corpora)
    print(table.render_text())
    if args.json_out:
        atomic_write_json(args.json_out, table.to_json_dict())
    return 0


def _cmd_eval_pairwise(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    pairs = service.load_pair_pool(args.pairs)
    candidates = _parse_candidates(args.candidates) if args.candidates else ("model_1", "model_2")
    result = evalstats.pairwise_llm_eval(
        pairs,
        cfg.judge,
        seed=cfg.seed,
        candidates=candidates,
        workers=_workers(cfg),
        prompts_dir=cfg.prompts_dir,
    )
    lines = []
    for vote in result.votes:
        lines.append(
            json_line(
                {
                    "pair_id": vote.pair_id,
                    "evaluator": vote.evaluator,
                    "choice": vote.choice,
                    "blinding": vote.blinding,
                    "rationale": vote.rationale,
                }
            )
        )
    atomic_write_text(Path(args.out), "".join(line + "\n" for line in lines))
    log.info("judged %d pairs -> %s", len(result.votes), args.out)
    print(f"votes={len(result.votes)} skipped={result.skipped}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    pool = service.load_pair_pool(args.pool)
    candidates = _parse_candidates(args.candidates) if args.candidates else service.DEFAULT_CANDIDATES
    app = service.create_app(
        pool,
        args.vote_log,
        candidates=candidates,
        pairs_per_session=args.pairs_per_session,
        seed=args.seed if args.seed is not None else 0,
        static_dir=args.static_dir,
        filter_report_path=args.filter_report,
    )
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning" if args.quiet else "info")
    return 0


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scriptannot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a JSONL corpus and print split statistics")
    p.add_argument("--input", type=Path, required=True, help="corpus JSONL path")
    p.add_argument("--name", default=None, help="dataset name for reports")
    p.add_argument("--stats-out", type=Path, default=None, help="write a JSON stats report here")
    p.add_argument("--tokens", action="store_true", help="also compute token statistics (needs content)")
    _common(p, config=False)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("annotate", help="annotate a corpus at each sampling temperature")
    p.add_argument("--input", type=Path, required=True, help="corpus JSONL path (records need content)")
    p.add_argument("--out-dir", type=Path, required=True, help="directory for annotations_t<T>.jsonl files")
    p.add_argument("--temperatures", default=None, help="comma-separated list, e.g. 0.4,0.6,0.8")
    _common(p)
    p.set_defaults(func=_cmd_annotate)

    p = sub.add_parser("filter", help="run the four-stage filter over annotation files")
    p.add_argument("--annotations-dir", type=Path, required=True, help="directory holding annotations_t<T>.jsonl")
    p.add_argument("--out", type=Path, required=True, help="output pseudo-label JSONL path")
    p.add_argument("--report-out", type=Path, default=None, help="write the filter report JSON here")
    p.add_argument("--iteration", type=int, default=0, help="iteration number stamped on pseudo records")
    _common(p)
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("sweep", help="retention sweep over confidence thresholds")
    p.add_argument("--annotations-dir", type=Path, required=True, help="directory holding annotations_t<T>.jsonl")
    p.add_argument("--alphas", default=DEFAULT_SWEEP_ALPHAS, help="comma-separated thresholds")
    p.add_argument("--out", type=Path, default=None, help="CSV output path (default: stdout)")
    _common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("loop", help="run the full self-training loop from scratch")
    _common(p)
    p.set_defaults(func=_cmd_loop)

    p = sub.add_parser("resume", help="resume an interrupted loop workspace")
    p.add_argument("--workspace", type=Path, required=True, help="workspace directory with manifest.json")
    _common(p, config=False)
    p.set_defaults(func=_cmd_resume)

    ev = sub.add_parser("eval", help="evaluation statistics").add_subparsers(dest="eval_command", required=True)

    p = ev.add_parser("accuracy", help="accuracy against ground truth, overall and per language")
    p.add_argument("--predictions", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--facet", choices=evalstats.FACETS, default="malicious")
    p.add_argument("--json-out", type=Path, default=None)
    _common(p, config=False)
    p.set_defaults(func=_cmd_eval_accuracy)

    p = ev.add_parser("mcnemar", help="paired discordance test between two prediction sets")
    p.add_argument("--predictions-a", type=Path, default=None)
    p.add_argument("--predictions-b", type=Path, default=None)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--b", type=int, default=None, help="discordant count: A malicious, B benign")
    p.add_argument("--c", type=int, default=None, help="discordant count: B malicious, A benign")
    p.add_argument("--json-out", type=Path, default=None)
    _common(p, config=False)
    p.set_defaults(func=_cmd_eval_mcnemar)

    p = ev.add_parser("winrate", help="aggregate blind A/B votes into win rates")
    p.add_argument("--votes", type=Path, required=True, help="votes JSONL (service log or pairwise output)")
    p.add_argument("--candidates", default=None, help="two comma-separated candidate names")
    p.add_argument("--json-out", type=Path, default=None)
    _common(p, config=False)
    p.set_defaults(func=_cmd_eval_winrate)

    p = ev.add_parser("phrases", help="count template-phrase occurrences across corpora")
    p.add_argument("--phrases", default=None, help="comma-separated phrases")
    p.add_argument("--phrases-file", type=Path, default=None, help="file with one phrase per line")
    p.add_argument("--corpus", action="append", default=[], required=True, metavar="NAME=PATH")
    p.add_argument("--json-out", type=Path, default=None)
    _common(p, config=False)
    p.set_defaults(func=_cmd_eval_phrases)

    p = ev.add_parser("pairwise", help="blind LLM judging over a pair pool")
    p.add_argument("--pairs", type=Path, required=True, help="pair pool JSONL")
    p.add_argument("--out", type=Path, required=True, help="votes JSONL output path")
    p.add_argument("--candidates", default=None, help="two comma-separated candidate names")
    _common(p)
    p.set_defaults(func=_cmd_eval_pairwise)

    p = sub.add_parser("serve", help="serve the blind evaluation UI and API")
    p.add_argument("--pool", type=Path, required=True, help="pair pool JSONL")
    p.add_argument("--vote-log", type=Path, required=True, help="append-only vote log JSONL")
    p.add_argument("--candidates", default=None, help="two comma-separated candidate names")
    p.add_argument("--pairs-per-session", type=int, default=service.DEFAULT_PAIRS_PER_SESSION)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--static-dir", type=Path, default=None, help="override the bundled UI assets")
    p.add_argument("--filter-report", type=Path, default=None, help="filter report JSON served at /api/reports/filter")
    _common(p, config=False)
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING if getattr(args, "quiet", False) else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [IO]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
