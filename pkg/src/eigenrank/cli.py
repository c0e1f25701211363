"""Command-line entry point: ``eigenrank <subcommand> ...``.

Exit status is 0 on success, 2 on usage errors and 1 on runtime errors; the
latter print a single ``error: <Kind>: <message>`` line to stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import engine, formats, synthetic
from .dicematrix import build_dice_matrix, is_psd, spectral_summary
from .external import ExternalBackend
from .masks import METRICS

__all__ = ["main", "build_parser"]


def _g(x: float) -> str:
    return f"{x:.12g}"


def synthetic_backend_from_pool(pool: engine.Pool) -> synthetic.SyntheticBackend:
    """Rebuild synthetic cases from a manifest written by ``synth-gen``."""
    cases = []
    for c in pool.cases:
        if c.difficulty is None or c.id not in pool.truths:
            raise formats.ManifestError(
                f"case {c.id!r}: the synthetic backend needs a difficulty and a truth mask"
            )
        truth = pool.truths[c.id]
        if c.image is not None and Path(c.image).suffix == ".npy":
            image = np.load(c.image)
        else:
            image = np.zeros(truth.shape)
        cases.append(synthetic.SyntheticCase(c.id, c.difficulty, image, truth))
    return synthetic.SyntheticBackend(cases)


def _backend(args, pool: engine.Pool):
    if args.backend == "synthetic":
        return synthetic_backend_from_pool(pool)
    if not args.train_cmd or not args.predict_cmd:
        raise _UsageError("--backend external requires --train-cmd and --predict-cmd")
    work = Path(args.work_dir) if args.work_dir else Path(str(args.out) + ".work")
    return ExternalBackend(args.train_cmd, args.predict_cmd, pool, work)


class _UsageError(Exception):
    pass


def cmd_dice(args) -> int:
    a, b = formats.read_mask(args.a), formats.read_mask(args.b)
    print(_g(METRICS[args.metric](a, b)))
    return 0


def cmd_matrix(args) -> int:
    masks = [formats.read_mask(p) for p in args.masks]
    m = build_dice_matrix(masks, args.metric)
    s = spectral_summary(m)
    print("matrix:")
    for row in m.entries:
        print("  " + " ".join(_g(x) for x in row))
    print("eigenvalues: " + " ".join(_g(x) for x in s.eigenvalues))
    print(f"lambda_max: {_g(s.lambda_max)}")
    print(f"entropy_raw: {_g(s.entropy_raw)}")
    print(f"entropy_normalized: {_g(s.entropy_normalized)}")
    print(f"psd: {str(is_psd(m)).lower()}")
    return 0


def cmd_select(args) -> int:
    pool = formats.load_manifest(args.manifest)
    backend = _backend(args, pool)
    report = engine.run_selection(
        pool, args.k, args.iterations, backend, args.seed,
        metric=args.metric, score_mode=args.score_mode, jobs=args.jobs,
    )
    formats.write_report(report, args.out)
    return 0


def cmd_rank(args) -> int:
    pool = formats.load_manifest(args.manifest)
    backend = _backend(args, pool)
    models = [backend.load_model(ref) for ref in args.models]
    if args.mode == "fixed":
        ranking = engine.rank_failures_fixed(models, pool, backend, metric=args.metric, jobs=args.jobs)
        doc = {
            "kind": "failure-ranking",
            "parameters": {"mode": "fixed", "backend": backend.name, "metric": args.metric},
            "models": list(args.models),
            "ranking": [{"id": cid, "lambda_max": score} for cid, score in ranking],
        }
        formats.atomic_write(args.out, formats.dumps_report(doc))
    else:
        report = engine.run_failure_elimination(
            pool, args.k, args.iterations, backend, models[0], args.seed,
            metric=args.metric, jobs=args.jobs,
        )
        formats.write_report(report, args.out, probe_model=args.models[0])
    return 0


def cmd_simulate(args) -> int:
    rows = []
    for eps in args.epsilon:
        cfg = synthetic.SimulationConfig(tuple(args.t), eps, args.trials, args.seed, args.sampler)
        rows.extend(synthetic.run_conjecture_simulation(cfg))
    text = formats.simulation_csv(rows)
    if args.out:
        formats.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_synth_gen(args) -> int:
    if args.bimodal:
        diffs = synthetic.bimodal_difficulties(n_low=args.n - args.n // 10, n_high=args.n // 10, seed=args.seed)
    else:
        diffs = None
    cases = synthetic.generate_dataset(args.n, args.width, args.height, args.seed, diffs)
    out = Path(args.out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "images").mkdir(parents=True, exist_ok=True)
    entries = []
    for c in cases:
        formats.write_mask(c.truth, out / "masks" / f"{c.id}.emsk")
        np.save(out / "images" / f"{c.id}.npy", np.asarray(c.image))
        entries.append(engine.Case(c.id, out / "images" / f"{c.id}.npy", out / "masks" / f"{c.id}.emsk", c.difficulty))
    formats.write_manifest(engine.Pool(tuple(entries), seed=args.seed), out / "manifest.json")
    return 0


def cmd_eval(args) -> int:
    pool = formats.load_manifest(args.manifest)
    backend = _backend(args, pool)
    model = backend.load_model(args.model)
    ids = [c for c in pool.ids if c in pool.truths]
    result = engine.evaluate_model(model, ids, backend, pool.truths, metric=args.metric)
    formats.write_report(result, args.out, model=args.model, backend=backend.name)
    return 0


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("synthetic", "external"), default="synthetic")
    p.add_argument("--train-cmd", help="external training command")
    p.add_argument("--predict-cmd", help="external inference command")
    p.add_argument("--work-dir", help="scratch directory for the external backend")
    p.add_argument("--jobs", type=int, default=1, help="concurrent predictions")
    p.add_argument("--metric", choices=sorted(METRICS), default="dice")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eigenrank", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dice", help="overlap score of two masks")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--metric", choices=sorted(METRICS), default="dice")
    p.set_defaults(func=cmd_dice)

    p = sub.add_parser("matrix", help="Dice matrix and spectrum of several masks")
    p.add_argument("masks", nargs="+")
    p.add_argument("--metric", choices=sorted(METRICS), default="dice")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("select", help="run Eigenrank subset selection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-mode", choices=engine.SCORE_MODES, default="lambda_max")
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("rank", help="failure prediction")
    p.add_argument("--manifest", required=True)
    p.add_argument("--models", nargs="+", required=True,
                   help="model references; in iterative mode the first is the probe model")
    p.add_argument("--mode", choices=("fixed", "iterative"), default="iterative")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--iterations", type=int, default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("simulate", help="dominance-ratio simulation on feasible Dice matrices")
    p.add_argument("--t", type=int, nargs="+", required=True)
    p.add_argument("--epsilon", type=float, nargs="+", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sampler", choices=synthetic.SAMPLERS, default="cap")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("synth-gen", help="write a synthetic dataset and manifest")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--height", type=int, default=32)
    p.add_argument("--bimodal", action="store_true", help="90%% easy / 10%% hard difficulties")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("eval", help="true Dice of one model against manifest ground truth")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
