"""``headrank`` command line.

Exit codes: 0 success, 1 computation failure (including a failed
verification), 2 input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, _backend, geometry, io, ngram, scaling, spectral, theory
from .head import FeatureDataset, TrainConfig, rank_sweep
from .linalg import ConvergenceError, frobenius_norm, svd_dense, svd_randomized

log = logging.getLogger("headrank")

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


def _int_list(text):
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {text!r}") from exc


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from exc


def _assignments(text):
    out = {}
    for part in filter(None, (t.strip() for t in text.split(","))):
        key, sep, val = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=value, got {part!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad value in {part!r}") from exc
    return out


def _names(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _manifest(args, seed=None):
    config = {k: v for k, v in vars(args).items() if k not in ("func",)}
    return io.RunManifest(args.command, config, seed, __version__, _backend.active())


def _finish(manifest, out_dir, files):
    """Write the manifest first, then every output file."""
    out_dir = Path(out_dir)
    manifest.outputs = sorted(files)
    manifest.write(out_dir / "manifest.json")
    for name, writer in files.items():
        writer(out_dir / name)


def _load_matrix(path):
    try:
        return io.read_bmat(path)
    except (OSError, io.FormatError) as exc:
        raise InputError(str(exc)) from exc


# -- spectrum ---------------------------------------------------------------

def cmd_spectrum(args):
    m = _load_matrix(args.matrix)
    manifest = _manifest(args, args.seed)
    manifest.add_input(args.matrix)
    full = min(m.shape)
    if args.topk is None:
        res = svd_dense(m, want_factors=False)
    else:
        k = args.topk
        if k > full:
            manifest.warnings.append(f"--topk {k} exceeds min(rows, cols) = {full}; clamped to {full}")
            k = full
        res = svd_randomized(m, k, oversample=args.oversample, power_iters=args.power_iters,
                             seed=args.seed)
        manifest.warnings.extend(res.warnings)
    sigma = res.singular_values
    fro = frobenius_norm(m)
    try:
        summary = spectral.summarize(sigma, fro, full)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    payload = summary.to_json()
    payload["sigma"] = sigma
    payload["shape"] = list(m.shape)
    files = {"spectrum.json": lambda p: io.write_json(p, payload)}
    norm = spectral.spectrum_normalize(sigma)
    cols = ["i", "sigma"] + (["normalized"] if args.normalized else [])
    rows = [[i + 1, s] + ([norm[i]] if args.normalized else []) for i, s in enumerate(sigma)]
    files["sigma.csv"] = lambda p: io.write_csv(p, cols, rows)
    if args.entropy:
        ent = {"singular_entropy": summary.singular_entropy, "n_singular_values": int(sigma.size),
               "full_rank": full}
        files["entropy.json"] = lambda p: io.write_json(p, ent)
    if args.werror:
        curve = summary.w_error
        files["werror.csv"] = lambda p: io.write_csv(p, ["d", "w_error", "is_lower_bound"], curve.rows())
    _finish(manifest, args.out, files)
    return EXIT_OK


# -- anisotropy -------------------------------------------------------------

def _load_dumps(manifest_path):
    base = Path(manifest_path).parent
    try:
        spec = json.loads(Path(manifest_path).read_text())
        entries = spec["dumps"] if isinstance(spec, dict) else spec
        dumps, paths = [], []
        for e in entries:
            path = base / e["file"]
            seqs = None
            if e.get("sequence_ids"):
                seq_path = base / e["sequence_ids"]
                seqs = io.read_labels(seq_path)
                paths.append(seq_path)
            dumps.append(geometry.RepresentationSet(
                io.read_bmat(path), str(e.get("layer_id", "")), str(e.get("checkpoint_id", "")), seqs))
            paths.append(path)
    except (OSError, KeyError, TypeError, json.JSONDecodeError, ValueError) as exc:
        raise InputError(f"bad dump manifest {manifest_path}: {exc}") from exc
    return dumps, paths


def cmd_anisotropy(args):
    dumps, paths = _load_dumps(args.manifest)
    manifest = _manifest(args, args.seed)
    manifest.add_input(args.manifest)
    for p in paths:
        manifest.add_input(p)
    sampled = [geometry.subsample(h, args.sample_size, args.seed + i) for i, h in enumerate(dumps)]
    try:
        table = geometry.anisotropy_sweep(sampled, exclude_same_sequence=args.exclude_same_sequence)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    rows = [[r.checkpoint_id, r.layer_id, r.n, r.anisotropy] for r in table]
    out = Path(args.out)
    manifest.outputs = [out.name]
    manifest.write(out.with_name(out.stem + ".manifest.json"))
    io.write_csv(out, ["checkpoint_id", "layer_id", "n", "anisotropy"], rows)
    return EXIT_OK


# -- ngram ------------------------------------------------------------------

def cmd_ngram(args):
    try:
        docs, vocab = io.read_tokens(args.tokens)
        ts = ngram.TokenStream(docs, vocab)
        counts = ngram.count_ngrams(ts, args.n, cross_documents=args.cross_documents)
        cdm = ngram.build_context_matrix(counts, args.min_count)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    manifest = _manifest(args, args.seed)
    manifest.add_input(args.tokens)
    full = min(cdm.matrix.shape)
    k = full if args.topk is None else args.topk
    if k > full:
        manifest.warnings.append(f"--topk {k} exceeds min(C, V) = {full}; clamped to {full}")
        k = full
    summary, res = ngram.language_rank_report(cdm, k, seed=args.seed, oversample=args.oversample,
                                              power_iters=args.power_iters)
    manifest.warnings.extend(res.warnings)
    report = summary.to_json()
    report.update({
        "n": args.n, "vocab_size": vocab, "n_tokens": ts.n_tokens, "n_documents": len(ts.documents),
        "total_contexts": cdm.total_contexts, "C": cdm.n_rows, "min_count": args.min_count,
        "nnz": cdm.matrix.nnz, "k": k, "ngram_count": counts.total_count,
    })
    files = {
        "report.json": lambda p: io.write_json(p, report),
        "sigma.csv": lambda p: io.write_csv(p, ["i", "sigma"], enumerate(summary.sigma.tolist(), 1)),
        "werror.csv": lambda p: io.write_csv(p, ["d", "w_error", "is_lower_bound"], summary.w_error.rows()),
    }
    _finish(manifest, args.out, files)
    return EXIT_OK


# -- head sweep -------------------------------------------------------------

def cmd_head_sweep(args):
    try:
        X = io.read_bmat(args.features)
        y = io.read_labels(args.labels)
        V = args.vocab_size if args.vocab_size is not None else int(y.max()) + 1
        ds = FeatureDataset(X, y, V).with_random_split(args.eval_fraction, args.split_seed)
        cfg = TrainConfig(lr=args.lrs[0], batch_size=args.batch, epochs=args.epochs,
                          warmup_frac=args.warmup, optimizer=args.optimizer)
    except (OSError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    manifest = _manifest(args, args.seeds[0])
    manifest.add_input(args.features)
    manifest.add_input(args.labels)
    cells, best = rank_sweep(ds, args.ranks, args.lrs, args.seeds, cfg)
    failed = [c for c in cells if c.error]
    for c in failed:
        manifest.warnings.append(f"cell r={c.r} lr={c.lr:g} seed={c.seed}: {c.error}")
    summary = {
        "n_train": int((~ds.is_eval).sum()), "n_eval": int(ds.is_eval.sum()),
        "vocab_size": V, "dim": ds.dim, "train_config": cfg.to_json(),
        "best": [vars(r) for r in best],
        "errors": [{"r": c.r, "lr": c.lr, "seed": c.seed, "error": c.error} for c in failed],
    }
    files = {
        "sweep.csv": lambda p: io.write_csv(
            p, ["r", "lr", "seed", "eval_ce", "eval_acc"],
            [[c.r, c.lr, c.seed, c.eval_ce, c.eval_acc] for c in cells]),
        "lr_choices.csv": lambda p: io.write_csv(
            p, ["r", "best_lr", "eval_ce", "eval_acc"],
            [[r.r, r.best_lr, r.eval_ce, r.eval_acc] for r in best]),
        "summary.json": lambda p: io.write_json(p, summary),
    }
    _finish(manifest, args.out, files)
    return EXIT_OK if len(failed) < len(cells) else EXIT_FAIL


# -- scaling fit ------------------------------------------------------------

def read_points(path):
    pts = []
    try:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                pts.append(scaling.LossPoint(float(row["N"]), float(row["T"]), float(row["L"]),
                                             row.get("tag", "")))
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad points file {path}: {exc}") from exc
    if not pts:
        raise InputError(f"{path}: no points")
    return pts


def cmd_fit_scaling(args):
    pts = read_points(args.points)
    manifest = _manifest(args, args.seed)
    manifest.add_input(args.points)
    try:
        fit = scaling.fit_scaling_law(pts, free=args.free, fixed=args.fixed, delta=args.delta,
                                      seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    gaps = scaling.extrapolation_gap(pts, fit.params)
    out = fit.to_json()
    out["points"] = [{"tag": p.tag, "N": p.N, "T": p.T, "L": p.L, "residual": r}
                     for p, r in zip(pts, fit.residuals)]
    out["delta"] = args.delta
    files = {
        "fit.json": lambda p: io.write_json(p, out),
        "gaps.csv": lambda p: io.write_csv(
            p, ["tag", "n", "observed", "predicted", "gap_pct"],
            [[g.tag, g.n_points, g.observed, g.predicted, g.gap_pct] for g in gaps]),
    }
    _finish(manifest, args.out, files)
    return EXIT_OK


# -- verify -----------------------------------------------------------------

def _verify_eym(spec, manifest):
    shapes = spec.get("shapes", [[10, 10], [40, 25], [80, 80]])
    count = int(spec.get("count", 100))
    tol = float(spec.get("tol", 1e-8))
    rng = np.random.default_rng(int(spec.get("seed", 0)))
    rows, worst = [], 0.0
    for shape in shapes:
        r, c = (int(v) for v in shape)
        for idx in range(count):
            m = rng.standard_normal((r, c))
            for d in range(min(r, c) + 1):
                res = theory.eym_verify(m, d)
                worst = max(worst, res.residual)
                rows.append([f"{r}x{c}", idx, d, res.distance, res.tail_norm, res.residual])
    summary = {"suite": "eym", "max_residual": worst, "tol": tol, "passed": worst < tol}
    files = {
        "eym.csv": lambda p: io.write_csv(p, ["shape", "index", "d", "distance", "tail_norm", "residual"], rows),
        "summary.json": lambda p: io.write_json(p, summary),
    }
    return files, summary["passed"]


def _verify_lemma1(spec, manifest):
    task = theory.make_task(spec)
    eps = spec.get("epsilons", [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    rows, ok = [], True
    details = []
    for k in range(int(spec.get("directions", 10))):
        probe = theory.PerturbationProbe.random(task.w_star.shape, int(spec.get("seed", 0)) * 1000 + k, eps)
        table = theory.lemma1_probe(task, probe)
        oracle = theory.directional_derivative(task.w_star, probe.direction, *task.dataset.train())
        last = [r.ratio for r in table[-2:]]
        spread = abs(last[0] - last[1]) / (0.5 * (last[0] + last[1]))
        small = [r.ratio for r in table if 0 < r.eps <= 1e-3]
        bounded = max(small) / min(small) if small and min(small) > 0 else float("inf")
        good = spread < 0.05 and bounded < 1.1
        ok &= good
        details.append({"direction": k, "oracle": oracle, "last_two_spread": spread,
                        "max_over_min_small_eps": bounded, "passed": good})
        rows.extend([k, r.eps, r.delta_loss, r.ratio, oracle] for r in table)
    summary = {"suite": "lemma1", "grad_norm": task.grad_norm, "directions": details, "passed": ok}
    files = {
        "lemma1.csv": lambda p: io.write_csv(p, ["direction", "eps", "delta_loss", "ratio", "oracle"], rows),
        "summary.json": lambda p: io.write_json(p, summary),
    }
    return files, ok


def _verify_theorem1(spec, manifest):
    task = theory.make_task(spec)
    full = min(task.w_star.shape)
    ranks = [int(r) for r in spec.get("ranks", sorted({1, 2, 4, 8, full // 2, full}))]
    cfg = TrainConfig(epochs=int(spec.get("epochs", 10)), batch_size=int(spec.get("batch_size", 256)))
    rows, _ = theory.theorem1_sweep(task, ranks, lrs=spec.get("lrs", (1e-2, 2e-2, 5e-2)), cfg=cfg)
    check = theory.check_theorem1(rows)
    curve = theory.gap_vs_werror_report(rows, float(spec.get("threshold", 0.05)))
    min_rho = spec.get("min_spearman")
    ok = check.passed and (min_rho is None or check.spearman > float(min_rho))
    summary = {
        "suite": "theorem1", "grad_norm": task.grad_norm, "spearman": check.spearman,
        "ordering_ok": check.ordering_ok, "lower_ok": check.lower_ok, "monotone_ok": check.monotone_ok,
        "failures": check.failures, "knee_w_error": curve.knee_w_error, "threshold": curve.threshold,
        "passed": ok,
    }
    files = {
        "theorem1.csv": lambda p: io.write_csv(
            p, ["d", "tail_norm", "gap_truncated", "gap_trained", "w_error", "loss_star",
                "loss_truncated", "loss_trained", "best_lr", "eval_ce"],
            [[r.d, r.tail_norm, r.gap_truncated, r.gap_trained, r.w_error, r.loss_star,
              r.loss_truncated, r.loss_trained, r.best_lr, r.eval_ce] for r in rows]),
        "gap_curve.csv": lambda p: io.write_csv(
            p, ["w_error", "gap_trained", "d"], zip(curve.w_error, curve.gap_trained, curve.d)),
        "summary.json": lambda p: io.write_json(p, summary),
    }
    return files, ok


_SUITES = {"eym": _verify_eym, "lemma1": _verify_lemma1, "theorem1": _verify_theorem1}


def cmd_verify(args):
    spec = {}
    if args.task is not None:
        try:
            spec = json.loads(Path(args.task).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"bad task file {args.task}: {exc}") from exc
        if not isinstance(spec, dict):
            raise InputError(f"task file {args.task} must hold a JSON object")
    elif args.suite != "eym":
        raise InputError(f"suite {args.suite} needs --task")
    manifest = _manifest(args, spec.get("seed"))
    if args.task is not None:
        manifest.add_input(args.task)
    try:
        files, ok = _SUITES[args.suite](spec, manifest)
    except (ValueError, KeyError, TypeError) as exc:
        raise InputError(f"bad task spec: {exc}") from exc
    _finish(manifest, args.out, files)
    print(f"{args.suite}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_FAIL


# -- entry point ------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="headrank", description="Spectral and rank diagnostics for language-model output heads.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--backend", choices=_backend.available(), default=None,
                   help="kernel backend (default: compiled when available)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", help="singular values, entropy and W-error of a BMAT matrix")
    s.add_argument("matrix")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--normalized", action="store_true", help="add sigma / sigma_max column")
    s.add_argument("--entropy", action="store_true", help="write entropy.json")
    s.add_argument("--werror", action="store_true", help="write werror.csv")
    s.add_argument("--topk", type=int, default=None, help="randomized top-k instead of full SVD")
    s.add_argument("--oversample", type=int, default=10)
    s.add_argument("--power-iters", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_spectrum)

    s = sub.add_parser("anisotropy", help="mean cosine similarity per representation dump")
    s.add_argument("manifest", help="JSON list of {file, layer_id, checkpoint_id[, sequence_ids]}")
    s.add_argument("--out", required=True, help="output CSV path")
    s.add_argument("--sample-size", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--exclude-same-sequence", action="store_true")
    s.set_defaults(func=cmd_anisotropy)

    s = sub.add_parser("ngram", help="n-gram context matrix spectrum and W-error curve")
    s.add_argument("tokens", help="TOKS1 file")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=5)
    s.add_argument("--min-count", type=int, default=1)
    s.add_argument("--topk", type=int, default=None)
    s.add_argument("--oversample", type=int, default=10)
    s.add_argument("--power-iters", type=int, default=4)
    s.add_argument("--cross-documents", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_ngram)

    s = sub.add_parser("head-sweep", help="rank-constrained head sweep over ranks x lrs x seeds")
    s.add_argument("features", help="BMAT feature matrix (n x d)")
    s.add_argument("labels", help="LBLS1 label file")
    s.add_argument("--out", required=True)
    s.add_argument("--ranks", type=_int_list, required=True)
    s.add_argument("--lrs", type=_float_list, default=[1e-3, 5e-3, 1e-2, 2e-2, 5e-2])
    s.add_argument("--seeds", type=_int_list, default=[0])
    s.add_argument("--batch", type=int, default=256)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--warmup", type=float, default=0.01)
    s.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    s.add_argument("--vocab-size", type=int, default=None)
    s.add_argument("--eval-fraction", type=float, default=0.1)
    s.add_argument("--split-seed", type=int, default=0)
    s.set_defaults(func=cmd_head_sweep)

    s = sub.add_parser("fit-scaling", help="fit A/N^alpha + B/T^beta + E to loss points")
    s.add_argument("points", help="CSV with columns tag,N,T,L")
    s.add_argument("--out", required=True)
    s.add_argument("--free", type=_names, default=("A", "alpha"))
    s.add_argument("--fixed", type=_assignments, default={"B": 410.7, "beta": 0.28, "E": 1.69})
    s.add_argument("--delta", type=float, default=scaling.HUBER_DELTA)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_fit_scaling)

    s = sub.add_parser("verify", help="empirical checks of the bottleneck bounds")
    s.add_argument("--suite", choices=sorted(_SUITES), required=True)
    s.add_argument("--task", default=None, help="task JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.backend:
        _backend.set_backend(args.backend)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, theory.NotConvergedError, RuntimeError, ArithmeticError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
