"""Command-line interface: ``cknn {synth,fit,score,eval,bench,suggest-tau}``.

Settings resolve in the order built-in default < ``--config`` file < environment
variable (``CKNN_`` + upper-cased flag name, e.g. ``CKNN_TAU``) < command-line
flag. Exit codes: 0 success, 2 usage, 3 data problem, 4 computation failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .bank_search import SearchIndex, bench_throughput
from .cleanse import FeatureBank, random_compress, suggest_tau
from .core import as_training_view
from .estimator import CKNN
from .eval import MODES, build_protocol, run_protocol
from .exceptions import (
    BuildError,
    BundleError,
    ConvergenceError,
    InvalidInputError,
    MetricError,
    ParseError,
)
from .io import load_bundle, read_dataset, save_bundle, write_dataset
from .scorers import gmm_fit, gmm_score_samples, knn_pseudo_score_all
from .synth import SynthConfig, generate

logger = logging.getLogger("cknn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_COMPUTE = 0, 2, 3, 4
ENV_PREFIX = "CKNN_"


class UsageError(Exception):
    pass


def _parse_bool(value) -> bool:
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(value)


# name -> (type, default); names double as config-file keys and env suffixes
SETTINGS = {
    "k": (int, 4),
    "n_components": (int, 8),
    "tau": (float, 25.0),
    "p": (float, 1.0),
    "sigma": (float, 5.0),
    "seed": (int, 0),
    "mode": (str, "merge"),
    "scorer_app": (str, "gmm"),
    "scorer_mot": (str, "gmm"),
    "pseudo_k": (int, None),
    "coreset": (_parse_bool, False),
    "bench_duration": (float, 1.0),
}


def read_config_file(path) -> dict:
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{n}: expected key = value")
        key = key.strip().replace("-", "_")
        if key not in SETTINGS:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        out[key] = value.strip()
    return out


def resolve_settings(args, environ=None) -> tuple[dict, dict]:
    """Effective settings plus the source of each: default, file, env or flag."""
    environ = os.environ if environ is None else environ
    from_file = read_config_file(args.config) if getattr(args, "config", None) else {}
    out, sources = {}, {}
    for name, (conv, default) in SETTINGS.items():
        flag = getattr(args, name, None)
        env = environ.get(ENV_PREFIX + name.upper())
        if flag is not None:
            raw, sources[name] = flag, "flag"
        elif env is not None:
            raw, sources[name] = env, "env"
        elif name in from_file:
            raw, sources[name] = from_file[name], "file"
        else:
            out[name], sources[name] = default, "default"
            continue
        try:
            out[name] = conv(raw)
        except ValueError:
            raise UsageError(f"bad value for {name}: {raw!r}") from None
    for name in ("scorer_app", "scorer_mot"):
        if out[name] not in ("gmm", "knn"):
            raise UsageError(f"{name} must be 'gmm' or 'knn', got {out[name]!r}")
    if out["mode"] not in MODES:
        raise UsageError(f"mode must be one of {', '.join(MODES)}, got {out['mode']!r}")
    return out, sources


def estimator_from(settings, **overrides) -> CKNN:
    params = dict(k=settings["k"], n_components=settings["n_components"], tau=settings["tau"], p=settings["p"],
                  smoothing_sigma=settings["sigma"], seed=settings["seed"], app_scorer=settings["scorer_app"],
                  mot_scorer=settings["scorer_mot"], pseudo_k=settings["pseudo_k"],
                  compression="coreset" if settings["coreset"] else "random")
    params.update(overrides)
    return CKNN(**params)


class Run:
    """Resolved settings for one command invocation."""

    def __init__(self, command, settings, sources):
        self.command = command
        self.settings = settings
        self.sources = sources

    def __getitem__(self, name):
        return self.settings[name]

    def explicit(self, name) -> bool:
        return self.sources[name] != "default"

    def header(self, **extra) -> list[str]:
        cfg = {"command": self.command, **self.settings, **extra}
        given = {k: v for k, v in self.sources.items() if v != "default"}
        return ["# config " + json.dumps(cfg, sort_keys=True), "# sources " + json.dumps(given, sort_keys=True)]


def _write_lines(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# --------------------------------------------------------------------------- commands

SYNTH_FIELDS = (
    ("n_train_videos", int), ("n_test_videos", int), ("frames_per_video", int), ("objects_per_frame_mean", float),
    ("d_app", int), ("d_mot", int), ("n_normal_modes", int), ("anomaly_event_rate", float),
    ("event_duration_frames", float), ("anomaly_offset", float), ("within_event_jitter", float),
    ("mode_spread", float),
)


def cmd_synth(args, run):
    kwargs = {name: getattr(args, name) for name, _ in SYNTH_FIELDS if getattr(args, name) is not None}
    if args.anomaly_modality:
        kwargs["anomaly_modality"] = args.anomaly_modality
    train, test, truth = generate(SynthConfig(seed=run["seed"], **kwargs))
    write_dataset(train, args.train_out, args.format)
    write_dataset(test, args.test_out, args.format)
    if args.truth_out:
        truth.write(args.truth_out)
    for name, m, split, path in (("train", train, truth.train, args.train_out),
                                 ("test", test, truth.test, args.test_out)):
        share = split.abnormal.mean() if split.abnormal.size else 0.0
        print(f"{name}: {len(m.videos)} videos, {m.n_objects} objects, {share:.1%} abnormal -> {path}")
    return EXIT_OK


def cmd_fit(args, run):
    train = read_dataset(args.train)
    t0 = time.perf_counter()
    est = estimator_from(run).fit(train)
    elapsed = time.perf_counter() - t0
    b = est.bundle_
    save_bundle(b, args.out)
    print(f"training objects: {b.n_train_objects}")
    print(f"app: removed {b.removed_app}, bank size {b.app_bank.size}")
    print(f"mot: removed {b.removed_mot}, bank size {b.mot_bank.size}")
    print(f"fit time: {elapsed:.2f}s")
    print(f"bundle -> {args.out}")
    return EXIT_OK


def cmd_score(args, run):
    bundle = load_bundle(args.bundle)
    test = read_dataset(args.test)
    sigma = run["sigma"] if run.explicit("sigma") else bundle.hyperparams.smoothing_sigma
    est = CKNN.from_bundle(bundle, smoothing_sigma=sigma)
    series = est.score_videos(as_training_view(test), detail=bool(args.detail))
    header = run.header(bundle=str(args.bundle), **{f"bundle.{k}": v for k, v in bundle.hyperparams.as_dict().items()},
                        effective_sigma=sigma)
    lines = header + ["video_id\tframe_idx\traw\tsmoothed"]
    for vid, s in series.items():
        lines += [f"{vid}\t{t}\t{r!r}\t{m!r}" for t, (r, m) in enumerate(zip(s.raw.tolist(), s.smoothed.tolist()))]
    _write_lines(args.out, lines)
    if args.detail:
        detail = header + ["video_id\tframe_idx\tobject_idx\ts_app\ts_mot\tcombined"]
        for vid, s in series.items():
            d = s.detail
            for f, o, a, m, c in zip(d["frame_idx"].tolist(), d["object_idx"].tolist(), d["s_app"].tolist(),
                                     d["s_mot"].tolist(), d["combined"].tolist()):
                detail.append(f"{vid}\t{f}\t{o}\t{a!r}\t{m!r}\t{c!r}")
        _write_lines(args.detail, detail)
    print(f"scored {len(series)} videos -> {args.out}")
    return EXIT_OK


SWEEPABLE = ("k", "n_components", "tau", "p", "sigma")


def parse_sweep(items) -> dict:
    grid = {}
    for item in items or []:
        key, sep, values = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in SWEEPABLE:
            raise UsageError(f"bad --sweep {item!r}; use NAME=V1,V2,... with NAME in {', '.join(SWEEPABLE)}")
        try:
            grid[key] = [SETTINGS[key][0](v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad --sweep values in {item!r}") from None
        if not grid[key]:
            raise UsageError(f"--sweep {key} has no values")
    return grid


def _evaluate(train, test, settings):
    plan = build_protocol(train, test, settings["mode"])
    return plan, run_protocol(plan, lambda: estimator_from(settings))


def cmd_eval(args, run):
    grid = parse_sweep(args.sweep)
    train = read_dataset(args.train)
    test = read_dataset(args.test)
    if not test.has_labels:
        raise InvalidInputError(f"{args.test} has no frame labels; eval needs a labelled test split")
    records = [{"type": "config", "command": "eval", **run.settings}]
    if grid:
        keys = list(grid)
        print("\t".join(keys + ["mean_auroc", "n_videos", "skipped"]))
        for values in itertools.product(*(grid[k] for k in keys)):
            cell = dict(zip(keys, values))
            _, result = _evaluate(train, test, {**run.settings, **cell})
            print("\t".join([str(v) for v in values] + [f"{result.mean:.4f}", str(len(result.per_video)),
                                                        str(len(result.skipped))]))
            records.append({"type": "cell", **cell, "mean_auroc": result.mean, "n_videos": len(result.per_video),
                            "skipped": result.skipped})
    else:
        plan, result = _evaluate(train, test, run.settings)
        print(f"mode: {plan.mode}, fits executed: {len(result.runs)}")
        if plan.mode == "merge_plus":
            print("exclusion audit (bank rows from the evaluated video):")
            for r in result.runs:
                held = ",".join(r.run.eval_videos)
                print(f"  {held}: trained on {len(r.run.train_videos)} videos / {r.n_train_objects} objects, "
                      f"app rows {r.leaked_rows['app']}, mot rows {r.leaked_rows['mot']}")
                records.append({"type": "audit", "eval_videos": list(r.run.eval_videos),
                                "n_train_videos": len(r.run.train_videos), "n_train_objects": r.n_train_objects,
                                "leaked_rows": r.leaked_rows})
        print("video_id\tauroc")
        for vid, a in result.per_video.items():
            print(f"{vid}\t{a:.4f}")
            records.append({"type": "video", "video_id": vid, "auroc": a})
        for vid in result.skipped:
            print(f"{vid}\tskipped (single-class labels)")
        print(f"mean\t{result.mean:.4f}")
        records.append({"type": "summary", "mode": plan.mode, "mean_auroc": result.mean,
                        "n_videos": len(result.per_video), "skipped": result.skipped, "fits": len(result.runs)})
    if args.out:
        _write_lines(args.out, [json.dumps(r, sort_keys=True) for r in records])
    return EXIT_OK


def _bench_banks(args, run):
    if args.bundle:
        bundle = load_bundle(args.bundle)
        return [bundle.app_bank, bundle.mot_bank]
    if args.bank_size < 1 or args.dim < 1:
        raise UsageError("--bank-size and --dim must be positive")
    rng = np.random.default_rng(run["seed"])
    n = args.bank_size
    return [FeatureBank("app", rng.normal(size=(n, args.dim)), np.full(n, "synthetic"), np.arange(n), np.zeros(n))]


def cmd_bench(args, run):
    try:
        p_values = [float(x) for x in args.p_values.split(",")]
    except ValueError:
        raise UsageError(f"bad --p-values {args.p_values!r}") from None
    lines = run.header()
    for bank in _bench_banks(args, run):
        for p in p_values:
            sub = random_compress(bank, p, run["seed"])
            rep = bench_throughput(SearchIndex(sub.matrix), run["k"], run["bench_duration"], p=p, seed=run["seed"])
            print(f"{bank.modality} p={p:g}: bank {rep['bank_size']} x {rep['d']}, k={rep['k']}: "
                  f"streaming {rep['stream_fps']:.1f} FPS, batched {rep['batch_fps']:.1f} FPS")
            lines.append(" ".join(f"{k}={v}" for k, v in {"modality": bank.modality, **rep}.items()))
    if args.out:
        _write_lines(args.out, lines)
    return EXIT_OK


def cmd_suggest_tau(args, run):
    view = as_training_view(read_dataset(args.train))
    mod = args.modality
    X = view.app if mod == "app" else view.mot
    if run[f"scorer_{mod}"] == "gmm":
        scores = gmm_score_samples(gmm_fit(X, run["n_components"], run["seed"], purpose=f"gmm_{mod}"), X)
    else:
        k = run["pseudo_k"] or run["k"]
        scores = knn_pseudo_score_all(X, k, seed=run["seed"], purpose=f"knn_{mod}")
    sug = suggest_tau(scores)
    print(f"{mod} pseudo-scores: n={scores.size}, range [{scores.min():.4g}, {scores.max():.4g}]")
    if sug.degenerate:
        print("all pseudo-scores are equal; no tail to cut")
    print(f"suggested tau >= {sug.tau_star:.2f} (advisory)")
    if args.out:
        _write_lines(args.out, run.header(modality=mod) + [json.dumps({
            "modality": mod, "tau_star": sug.tau_star, "degenerate": sug.degenerate, "tail_bin": sug.tail_bin,
            "counts": sug.counts.tolist(), "edges": sug.edges.tolist()})])
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _add_settings(p):
    g = p.add_argument_group("model settings (override config file and CKNN_* environment variables)")
    g.add_argument("--config", help="file of 'name = value' lines, e.g. 'tau = 15'")
    g.add_argument("--k", type=int, help="neighbours averaged at inference (default 4)")
    g.add_argument("--n-components", dest="n_components", type=int, help="GMM components (default 8)")
    g.add_argument("--tau", type=float, help="percent of training objects removed (default 25)")
    g.add_argument("--p", type=float, help="percent of cleansed objects kept in each bank (default 1)")
    g.add_argument("--sigma", type=float, help="temporal smoothing std in frames (default 5)")
    g.add_argument("--seed", type=int)
    g.add_argument("--scorer-app", dest="scorer_app", choices=("knn", "gmm"))
    g.add_argument("--scorer-mot", dest="scorer_mot", choices=("knn", "gmm"))
    g.add_argument("--pseudo-k", dest="pseudo_k", type=int, help="neighbours for knn pseudo-scorers (default --k)")
    g.add_argument("--coreset", action="store_const", const="true", default=None,
                   help="compress banks by greedy coreset instead of random sampling")
    g.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cknn", description="Cleansed k-NN video anomaly detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic train/test pair and a truth sidecar")
    _add_settings(p)
    p.add_argument("train_out")
    p.add_argument("test_out")
    p.add_argument("--truth-out", dest="truth_out")
    p.add_argument("--format", choices=("binary", "jsonl"), help="default: from the file suffix")
    for name, typ in SYNTH_FIELDS:
        p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ)
    p.add_argument("--anomaly-modality", dest="anomaly_modality", choices=("both", "app", "mot", "mixed"))
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="cleanse a training set and write a model bundle")
    _add_settings(p)
    p.add_argument("train")
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("score", help="score test videos with a bundle")
    _add_settings(p)
    p.add_argument("bundle")
    p.add_argument("test")
    p.add_argument("--out", required=True, help="per-frame score file")
    p.add_argument("--detail", help="also write per-object scores here")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="run an evaluation protocol and report per-video AUROC")
    _add_settings(p)
    p.add_argument("train")
    p.add_argument("test")
    p.add_argument("--mode", choices=MODES, help="default merge")
    p.add_argument("--out", help="line-delimited JSON results")
    p.add_argument("--sweep", action="append", metavar="NAME=V1,V2",
                   help=f"repeat over a grid of {', '.join(SWEEPABLE)}; may be given several times")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="measure nearest-neighbour search throughput")
    _add_settings(p)
    p.add_argument("--bundle", help="benchmark this bundle's banks instead of a random one")
    p.add_argument("--bank-size", dest="bank_size", type=int, default=10_000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--p-values", dest="p_values", default="100,1", help="bank percentages to compare")
    p.add_argument("--bench-duration", dest="bench_duration", type=float, help="seconds per measurement")
    p.add_argument("--out", help="key=value report file")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("suggest-tau", help="recommend tau from the pseudo-score histogram")
    _add_settings(p)
    p.add_argument("train")
    p.add_argument("--modality", choices=("app", "mot"), default="app")
    p.add_argument("--out", help="histogram and suggestion as JSON")
    p.set_defaults(func=cmd_suggest_tau)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        settings, sources = resolve_settings(args)
        return args.func(args, Run(args.command, settings, sources))
    except UsageError as exc:
        print(f"cknn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, BundleError, InvalidInputError, MetricError, OSError) as exc:
        print(f"cknn: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BuildError, ConvergenceError) as exc:
        print(f"cknn: error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
