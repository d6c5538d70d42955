"""Command-line harness: fit, score, evaluate, ablate, synthesise, bench.

Subcommands
    fit             fit class descriptors from a labelled feature pack
    score           per-sample angles (and decisions given --theta-star)
    eval            AUROC / FPR@95TPR / detection error / F1 sweep + histograms
    ablate-layers   per-layer metrics plus the all-layer fusion row
    ablate-dims     AUROC mean and 95% CI across projection dimensionalities
    synth           generate synthetic train/test/ood feature packs
    similarity      pairwise angles between image descriptors
    bench           projection+bundle timing across channel counts

Every CSV starts with a ``# schema=...`` line and every JSON document has
a ``schema`` field. Data outputs are byte-reproducible for a fixed seed;
exit codes: 0 success, 1 usage error, 2 data/format error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from collections import Counter
from pathlib import Path
from typing import Sequence

import numpy as np

from . import metrics as M
from .algebra import generate_semi_orthogonal, splitmix64
from .errors import HdffError, UsageError
from .packio import FeaturePack, load_model, save_model
from .pipeline import FittedModel, descriptor_for_sample, descriptors_for_samples, fit
from .synth import SyntheticSpec, generate

__all__ = [
    "cmd_ablate_dims",
    "cmd_ablate_layers",
    "cmd_bench",
    "cmd_eval",
    "cmd_fit",
    "cmd_score",
    "cmd_similarity",
    "cmd_synth",
    "main",
]

_GOLDEN = 0x9E3779B97F4A7C15
_U64 = (1 << 64) - 1


def _write_csv(path: str | Path, schema: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


def _pack_thetas(model: FittedModel, pack_dir: str | Path, threads: int):
    with FeaturePack(pack_dir) as pack:
        if pack.num_samples == 0:
            raise UsageError(f"{pack_dir}: pack has no samples")
        ys = descriptors_for_samples(model, pack, threads=threads)
    thetas, nearest = M.score_batch(ys, model.class_descriptors, model.class_ids)
    return thetas, nearest


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_fit(
    train_pack: str | Path,
    model_out: str | Path,
    *,
    hd_dim: int = 10_000,
    seed: int = 0,
    pooling: str = "max",
    layer_ids: Sequence[int] | None = None,
    threads: int = 1,
) -> FittedModel:
    t0 = time.perf_counter()
    with FeaturePack(train_pack) as pack:
        if pack.class_labels is None:
            raise UsageError(f"{train_pack}: pack has no class labels; cannot fit")
        counts = Counter(pack.class_labels)
        model = fit(
            pack,
            hd_dim=hd_dim,
            master_seed=seed & _U64,
            pooling_mode=pooling,
            layer_ids=layer_ids,
            threads=threads,
        )
    save_model(model, model_out)
    elapsed = time.perf_counter() - t0
    for cid in sorted(counts):
        print(f"class {cid}: {counts[cid]} samples")
    print(
        f"fitted {len(model.class_ids)} classes over {len(model.layer_ids)} layers "
        f"at hd_dim={model.hd_dim} in {elapsed:.2f}s -> {model_out}"
    )
    return model


def cmd_score(
    pack_dir: str | Path,
    model_path: str | Path,
    out_csv: str | Path,
    *,
    theta_star: float | None = None,
    threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    model = load_model(model_path)
    thetas, nearest = _pack_thetas(model, pack_dir, threads)
    if theta_star is None:
        header = ["sample_id", "theta", "nearest_class"]
        rows = [(i, _fmt(t), int(c)) for i, (t, c) in enumerate(zip(thetas, nearest))]
    else:
        header = ["sample_id", "theta", "nearest_class", "decision"]
        rows = [
            (i, _fmt(t), int(c), M.decide(float(t), theta_star))
            for i, (t, c) in enumerate(zip(thetas, nearest))
        ]
    _write_csv(out_csv, "hdff.scores.v1", header, rows)
    print(f"scored {len(thetas)} samples -> {out_csv}")
    return thetas, nearest


def cmd_eval(
    id_pack: str | Path,
    ood_pack: str | Path,
    model_path: str | Path,
    out_dir: str | Path,
    *,
    det_err_mode: str = "min",
    f1_step: float = 0.1,
    bins: float = 1.0,
    threads: int = 1,
) -> M.MetricReport:
    model = load_model(model_path)
    id_thetas, _ = _pack_thetas(model, id_pack, threads)
    ood_thetas, _ = _pack_thetas(model, ood_pack, threads)
    report = M.evaluate(
        id_thetas,
        ood_thetas,
        det_err_mode=det_err_mode,
        f1_step_degrees=f1_step,
        bin_width_degrees=bins,
    )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_json_dict(), indent=1) + "\n")
    _write_csv(
        out_dir / "f1_curve.csv",
        "hdff.f1curve.v1",
        ["threshold", "f1"],
        [(_fmt(t), _fmt(v)) for t, v in zip(report.f1_curve.thresholds, report.f1_curve.f1)],
    )
    _write_csv(
        out_dir / "histogram.csv",
        "hdff.histogram.v1",
        ["bin_lo", "bin_hi", "count_id", "count_ood"],
        [
            (_fmt(lo), _fmt(hi), int(ci), int(co))
            for lo, hi, ci, co in zip(
                report.histogram_id.bin_lo,
                report.histogram_id.bin_hi,
                report.histogram_id.counts,
                report.histogram_ood.counts,
            )
        ],
    )
    print(
        f"auroc={report.auroc:.4f} fpr@95tpr={report.fpr_at_95tpr:.4f} "
        f"det_err={report.detection_error:.4f} max_f1={report.max_f1:.4f} -> {out_dir}"
    )
    return report


def _metric_row(id_thetas, ood_thetas, det_err_mode: str, f1_step: float):
    sweep = M.f1_sweep(id_thetas, ood_thetas, f1_step)
    return (
        M.auroc(id_thetas, ood_thetas),
        M.fpr_at_95_tpr(id_thetas, ood_thetas),
        M.detection_error(id_thetas, ood_thetas, mode=det_err_mode),
        sweep.max_f1,
    )


def cmd_ablate_layers(
    id_pack: str | Path,
    ood_pack: str | Path,
    train_pack: str | Path,
    out_csv: str | Path,
    *,
    hd_dim: int = 10_000,
    seed: int = 0,
    pooling: str = "max",
    layer_ids: Sequence[int] | None = None,
    det_err_mode: str = "min",
    f1_step: float = 0.1,
    threads: int = 1,
) -> list[tuple]:
    """Evaluate each layer alone, then all selected layers fused."""
    with FeaturePack(train_pack) as train:
        selected = list(layer_ids) if layer_ids is not None else list(train.layer_ids)
    rows = []
    selections = [(str(lid), [lid]) for lid in selected] + [("fusion", selected)]
    for label, ids in selections:
        with FeaturePack(train_pack) as train:
            model = fit(
                train,
                hd_dim=hd_dim,
                master_seed=seed & _U64,
                pooling_mode=pooling,
                layer_ids=ids,
                threads=threads,
            )
        id_thetas, _ = _pack_thetas(model, id_pack, threads)
        ood_thetas, _ = _pack_thetas(model, ood_pack, threads)
        rows.append((label,) + _metric_row(id_thetas, ood_thetas, det_err_mode, f1_step))
    _write_csv(
        out_csv,
        "hdff.layer_ablation.v1",
        ["layer", "auroc", "fpr_at_95tpr", "detection_error", "max_f1"],
        [(lab,) + tuple(_fmt(v) for v in vals) for lab, *vals in rows],
    )
    for lab, *vals in rows:
        print(f"layer {lab}: auroc={vals[0]:.4f}")
    return rows


def cmd_ablate_dims(
    train_pack: str | Path,
    id_pack: str | Path,
    ood_pack: str | Path,
    out_csv: str | Path,
    *,
    dims: Sequence[int],
    repeats: int = 10,
    seed: int = 0,
    pooling: str = "max",
    layer_ids: Sequence[int] | None = None,
    threads: int = 1,
) -> list[tuple]:
    """AUROC mean and normal-approximation 95% CI per dimensionality."""
    if len(dims) == 0:
        raise UsageError("need at least one dimensionality")
    if repeats < 1:
        raise UsageError("repeats must be >= 1")
    rows = []
    for m in dims:
        values = []
        for r in range(repeats):
            # repeat 0 reuses the master seed, so repeats=1 reproduces a
            # plain fit/eval run; later repeats get derived seeds
            run_seed = seed & _U64 if r == 0 else splitmix64((seed + r * _GOLDEN) & _U64)
            with FeaturePack(train_pack) as train:
                model = fit(
                    train,
                    hd_dim=int(m),
                    master_seed=run_seed,
                    pooling_mode=pooling,
                    layer_ids=layer_ids,
                    threads=threads,
                )
            id_thetas, _ = _pack_thetas(model, id_pack, threads)
            ood_thetas, _ = _pack_thetas(model, ood_pack, threads)
            values.append(M.auroc(id_thetas, ood_thetas))
        arr = np.asarray(values)
        mean = float(arr.mean())
        half = float(1.96 * arr.std(ddof=1) / np.sqrt(repeats)) if repeats > 1 else 0.0
        rows.append((int(m), repeats, mean, mean - half, mean + half))
        print(f"hd_dim={m}: auroc {mean:.4f} +/- {half:.4f} (95% CI, {repeats} seeds)")
    _write_csv(
        out_csv,
        "hdff.dim_ablation.v1",
        ["hd_dim", "repeats", "mean_auroc", "ci_lo", "ci_hi"],
        [(m, n, _fmt(a), _fmt(lo), _fmt(hi)) for m, n, a, lo, hi in rows],
    )
    return rows


def cmd_synth(spec: SyntheticSpec, out_dir: str | Path) -> dict[str, Path]:
    paths = generate(spec, out_dir)
    for split, p in paths.items():
        print(f"{split}: {p}")
    return paths


def cmd_similarity(
    pack_dir: str | Path,
    model_path: str | Path,
    pairs: Sequence[tuple[int, int]],
    out_csv: str | Path,
) -> list[tuple[int, int, float]]:
    if len(pairs) == 0:
        raise UsageError("no sample pairs given")
    model = load_model(model_path)
    with FeaturePack(pack_dir) as pack:
        ids = sorted({i for pair in pairs for i in pair})
        cache = {}
        for i in ids:
            if not 0 <= i < pack.num_samples:
                raise UsageError(f"sample id {i} out of range [0, {pack.num_samples})")
            cache[i] = descriptor_for_sample(model, pack.sample_maps(i, model.layer_ids))
    rows = [(a, b, M.pairwise_similarity(cache[a], cache[b])) for a, b in pairs]
    _write_csv(
        out_csv,
        "hdff.similarity.v1",
        ["sample_a", "sample_b", "angle_degrees"],
        [(a, b, _fmt(angle)) for a, b, angle in rows],
    )
    for a, b, angle in rows:
        print(f"({a}, {b}): {angle:.3f} deg")
    return rows


def cmd_bench(
    out_csv: str | Path | None = None,
    *,
    hd_dim: int = 10_000,
    channels: Sequence[int] = (64, 128, 256, 512, 1024),
    reps: int = 21,
    batch: int = 32,
    seed: int = 0,
) -> tuple[list[tuple[int, float]], float, float]:
    """Projection+bundle time per channel count, plus a linear fit.

    Returns (rows, slope_seconds_per_channel, r_squared) where rows hold
    the best-of-reps time for one batch at each channel count.
    """
    if reps < 1 or batch < 1:
        raise UsageError("reps and batch must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed & _U64))
    rows = []
    for c in channels:
        proj = generate_semi_orthogonal(splitmix64(c), hd_dim, int(c)).entries
        xs = rng.standard_normal((batch, int(c)), dtype=np.float32)
        # equalise per-rep work across channel counts so timer jitter is a
        # uniform, small fraction; report the best rep (noise is one-sided)
        inner = max(1, 512 // int(c))
        for _ in range(3):  # warm caches and BLAS threads
            (proj @ xs.T).sum(axis=1)
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            for _ in range(inner):
                (proj @ xs.T).sum(axis=1)  # project the batch, then bundle
            times.append((time.perf_counter() - t0) / inner)
        rows.append((int(c), float(np.min(times))))
    xs_fit = np.asarray([r[0] for r in rows], dtype=np.float64)
    ys_fit = np.asarray([r[1] for r in rows], dtype=np.float64)
    slope, intercept = np.polyfit(xs_fit, ys_fit, 1)
    resid = ys_fit - (slope * xs_fit + intercept)
    ss_tot = float(((ys_fit - ys_fit.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    if out_csv is not None:
        _write_csv(
            out_csv,
            "hdff.bench.v1",
            ["channels", "best_seconds"],
            [(c, _fmt(t)) for c, t in rows],
        )
    for c, t in rows:
        print(f"channels={c}: {t * 1e3:.3f} ms (best of {reps})")
    print(f"linear fit: slope={slope:.3e} s/channel, r2={r2:.4f}")
    return rows, float(slope), r2


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _pair_list(text: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            a, b = chunk.split(":")
            pairs.append((int(a), int(b)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected i:j pairs, got {chunk!r}")
    return pairs


def _build_parser() -> _Parser:
    parser = _Parser(prog="hdff", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, *, seeded=True):
        if seeded:
            p.add_argument("--hd-dim", type=int, default=10_000)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--pooling", choices=["max", "avg"], default="max")
            p.add_argument("--layers", type=_int_list, default=None, metavar="IDS")
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("fit", help="fit class descriptors from a labelled pack")
    p.add_argument("train_pack")
    p.add_argument("-o", "--out", required=True, help="output model file")
    add_common(p)

    p = sub.add_parser("score", help="write per-sample theta/nearest-class CSV")
    p.add_argument("pack")
    p.add_argument("model")
    p.add_argument("-o", "--out", required=True, help="output CSV")
    p.add_argument("--theta-star", type=float, default=None)
    add_common(p, seeded=False)

    p = sub.add_parser("eval", help="compute OOD metrics for an ID/OOD pack pair")
    p.add_argument("id_pack")
    p.add_argument("ood_pack")
    p.add_argument("model")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--det-err-mode", choices=["min", "tpr95"], default="min")
    p.add_argument("--f1-step", type=float, default=0.1)
    p.add_argument("--bins", type=float, default=1.0)
    add_common(p, seeded=False)

    p = sub.add_parser("ablate-layers", help="per-layer metrics plus fusion row")
    p.add_argument("id_pack")
    p.add_argument("ood_pack")
    p.add_argument("train_pack")
    p.add_argument("-o", "--out", required=True, help="output CSV")
    p.add_argument("--det-err-mode", choices=["min", "tpr95"], default="min")
    p.add_argument("--f1-step", type=float, default=0.1)
    add_common(p)

    p = sub.add_parser("ablate-dims", help="AUROC mean/CI across dimensionalities")
    p.add_argument("train_pack")
    p.add_argument("id_pack")
    p.add_argument("ood_pack")
    p.add_argument("-o", "--out", required=True, help="output CSV")
    p.add_argument("--dims", type=_int_list, required=True)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pooling", choices=["max", "avg"], default="max")
    p.add_argument("--layers", type=_int_list, default=None, metavar="IDS")
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("synth", help="generate synthetic feature packs")
    p.add_argument("out_dir")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--train-per-class", type=int, default=200)
    p.add_argument("--test-per-class", type=int, default=100)
    p.add_argument("--channels", type=_int_list, default=[16, 32, 64, 128, 256])
    p.add_argument("--spatial", type=int, default=4)
    p.add_argument("--proto-scale", type=float, default=1.0)
    p.add_argument("--noise-scale", type=float, default=0.25)
    p.add_argument(
        "--ood-shift", type=_float_list, default=[1.0],
        help="one value, or one per layer",
    )
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("similarity", help="angles between image descriptor pairs")
    p.add_argument("pack")
    p.add_argument("model")
    p.add_argument("-o", "--out", required=True, help="output CSV")
    p.add_argument("--pairs", type=_pair_list, required=True, metavar="I:J,K:L")

    p = sub.add_parser("bench", help="projection+bundle timing vs channel count")
    p.add_argument("-o", "--out", default=None, help="output CSV")
    p.add_argument("--hd-dim", type=int, default=10_000)
    p.add_argument("--channels", type=_int_list, default=[64, 128, 256, 512, 1024])
    p.add_argument("--reps", type=int, default=21)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "fit":
        cmd_fit(
            args.train_pack,
            args.out,
            hd_dim=args.hd_dim,
            seed=args.seed,
            pooling=args.pooling,
            layer_ids=args.layers,
            threads=args.threads,
        )
    elif args.command == "score":
        cmd_score(
            args.pack, args.model, args.out, theta_star=args.theta_star, threads=args.threads
        )
    elif args.command == "eval":
        cmd_eval(
            args.id_pack,
            args.ood_pack,
            args.model,
            args.out,
            det_err_mode=args.det_err_mode,
            f1_step=args.f1_step,
            bins=args.bins,
            threads=args.threads,
        )
    elif args.command == "ablate-layers":
        cmd_ablate_layers(
            args.id_pack,
            args.ood_pack,
            args.train_pack,
            args.out,
            hd_dim=args.hd_dim,
            seed=args.seed,
            pooling=args.pooling,
            layer_ids=args.layers,
            det_err_mode=args.det_err_mode,
            f1_step=args.f1_step,
            threads=args.threads,
        )
    elif args.command == "ablate-dims":
        cmd_ablate_dims(
            args.train_pack,
            args.id_pack,
            args.ood_pack,
            args.out,
            dims=args.dims,
            repeats=args.repeats,
            seed=args.seed,
            pooling=args.pooling,
            layer_ids=args.layers,
            threads=args.threads,
        )
    elif args.command == "synth":
        shift = args.ood_shift[0] if len(args.ood_shift) == 1 else tuple(args.ood_shift)
        spec = SyntheticSpec(
            num_classes=args.classes,
            train_per_class=args.train_per_class,
            test_per_class=args.test_per_class,
            channels=tuple(args.channels),
            spatial=args.spatial,
            proto_scale=args.proto_scale,
            noise_scale=args.noise_scale,
            ood_shift=shift,
            seed=args.seed,
        )
        cmd_synth(spec, args.out_dir)
    elif args.command == "similarity":
        cmd_similarity(args.pack, args.model, args.pairs, args.out)
    elif args.command == "bench":
        cmd_bench(
            args.out,
            hd_dim=args.hd_dim,
            channels=args.channels,
            reps=args.reps,
            batch=args.batch,
            seed=args.seed,
        )
    else:  # pragma: no cover
        raise UsageError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except HdffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
