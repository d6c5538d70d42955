"""Acceptance suite: one test per release criterion, at fixed tolerances.

Each test prints a [PASS]/[FAIL] line (run with ``pytest -s`` to see them
live). Stated runtime budgets are asserted inside the criteria.
"""

import functools
import time

import numpy as np
import pytest

from hdff import (
    FeaturePack,
    angle_degrees,
    auroc,
    bind,
    bundle,
    cosine,
    detection_error,
    f1_sweep,
    fpr_at_95_tpr,
    generate_semi_orthogonal,
    load_model,
    random_rademacher,
    read_tensor_file,
    save_model,
    write_feature_pack,
    write_tensor_file,
)
from hdff.cli import cmd_ablate_dims, cmd_ablate_layers, cmd_bench, cmd_eval, cmd_fit
from hdff.synth import SyntheticSpec, generate
from oracles import (
    auroc_bruteforce,
    detection_error_bruteforce,
    fpr95_bruteforce,
    max_f1_bruteforce,
)

THREADS = 4


def criterion(name, budget_seconds=None):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            t0 = time.perf_counter()
            ok = False
            try:
                fn(*args, **kwargs)
                elapsed = time.perf_counter() - t0
                if budget_seconds is not None:
                    assert elapsed < budget_seconds, (
                        f"{name}: {elapsed:.1f}s exceeds the {budget_seconds}s budget"
                    )
                ok = True
            finally:
                elapsed = time.perf_counter() - t0
                print(f"[{'PASS' if ok else 'FAIL'}] {name} ({elapsed:.1f}s)")

        return wrapper

    return deco


@criterion("semi-orthogonality (50 random sizes, both precisions)", budget_seconds=10.0)
def test_semi_orthogonality():
    rng = np.random.default_rng(2024)
    pairs = [(1, 1), (2048, 2048), (2048, 1)]
    while len(pairs) < 50:
        # log-uniform sizes: spans the full range at a fraction of the QR cost
        m = int(np.exp(rng.uniform(0.0, np.log(2048.0))))
        c = int(np.exp(rng.uniform(0.0, np.log(m) if m > 1 else 0.0)))
        pairs.append((m, c))
    for k, (m, c) in enumerate(pairs):
        p32 = generate_semi_orthogonal(k, m, c, dtype=np.float32).entries.astype(np.float64)
        assert np.abs(p32.T @ p32 - np.eye(c)).max() <= 1e-5, f"(m={m}, c={c}) float32"
        p64 = generate_semi_orthogonal(k, m, c, dtype=np.float64).entries
        assert np.abs(p64.T @ p64 - np.eye(c)).max() <= 1e-10, f"(m={m}, c={c}) float64"


@criterion("inner-product preservation (1000 pairs, 32-bit accumulation)", budget_seconds=5.0)
def test_inner_product_preservation():
    m, c, n = 4096, 256, 1000
    proj = generate_semi_orthogonal(11, m, c).entries  # float32
    rng = np.random.default_rng(1)
    a = rng.standard_normal((n, c)).astype(np.float32)
    b = rng.standard_normal((n, c)).astype(np.float32)
    pa = a @ proj.T
    pb = b @ proj.T
    lhs = np.einsum("ij,ij->i", pa, pb)  # stays float32
    rhs = np.einsum("ij,ij->i", a, b)
    bound = 1e-4 * np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    assert np.all(np.abs(lhs - rhs) <= bound)


@criterion("quasi-orthogonality at m=10^4 (>=99% within 5 degrees)", budget_seconds=5.0)
def test_quasi_orthogonality():
    rng = np.random.default_rng(2)
    m, n = 10_000, 1000
    a = rng.standard_normal((n, m))
    b = rng.standard_normal((n, m))
    cos = np.einsum("ij,ij->i", a, b) / (
        np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    )
    angles = np.degrees(np.arccos(np.clip(cos, -1, 1)))
    assert np.mean((angles >= 85.0) & (angles <= 95.0)) >= 0.99


@criterion("binding exactness and quasi-orthogonality of bound vectors")
def test_binding():
    rng = np.random.default_rng(3)
    m = 10_000
    self_hits = 0
    for t in range(1000):
        a = rng.standard_normal(m).astype(np.float32)
        b = rng.standard_normal(m).astype(np.float32)
        z = random_rademacher(t, m)
        assert abs(cosine(a, b) - cosine(bind(a, z), bind(b, z))) <= 1e-6
        if abs(cosine(a, bind(a, z))) <= 0.05:
            self_hits += 1
    assert self_hits >= 990


@criterion("bundle geometry (45-degree pair, 1/sqrt(k) similarity law)")
def test_bundle_geometry():
    a = np.zeros(16)
    b = np.zeros(16)
    a[0] = 1.0
    b[1] = 1.0
    assert abs(angle_degrees(a, bundle([a, b])) - 45.0) <= 1e-4
    rng = np.random.default_rng(4)
    m = 10_000
    for k in (2, 4, 9, 16):
        coses = []
        for _ in range(100):
            vs = rng.standard_normal((k, m)).astype(np.float32)
            vs /= np.linalg.norm(vs, axis=1, keepdims=True)
            coses.append(cosine(vs[0], bundle(list(vs))))
        assert abs(np.mean(coses) - 1.0 / np.sqrt(k)) <= 0.05, f"k={k}"


@criterion("metric oracle equivalence (200 tied instances + fixed examples)")
def test_metric_oracle_equivalence():
    assert auroc([1, 3], [2, 4]) == 0.75
    assert fpr_at_95_tpr([10, 20, 30, 40], [25, 35, 45, 55]) == 0.5
    rng = np.random.default_rng(5)
    for trial in range(200):
        n_id = int(rng.integers(1, 51))
        n_ood = int(rng.integers(1, 51))
        ids = list(rng.integers(0, 12, n_id).astype(float) * 7.5)
        oods = list(rng.integers(0, 12, n_ood).astype(float) * 7.5)
        assert auroc(ids, oods) == auroc_bruteforce(ids, oods), trial
        assert fpr_at_95_tpr(ids, oods) == fpr95_bruteforce(ids, oods), trial
        for mode in ("min", "tpr95"):
            assert detection_error(ids, oods, mode=mode) == detection_error_bruteforce(
                ids, oods, mode=mode
            ), (trial, mode)
        sweep = f1_sweep(ids, oods, 4.5)
        assert sweep.max_f1 == max_f1_bruteforce(ids, oods, sweep.thresholds), trial


@criterion("end-to-end synthetic detection (shifted and null)", budget_seconds=60.0)
def test_end_to_end_synthetic(tmp_path):
    base = dict(
        num_classes=4,
        train_per_class=200,
        test_per_class=100,
        channels=(16, 32, 64, 128, 256),
        spatial=4,
        proto_scale=1.0,
        noise_scale=0.25,
        seed=7,
    )
    paths = generate(SyntheticSpec(ood_shift=1.0, **base), tmp_path / "shift")
    cmd_fit(paths["train"], tmp_path / "m.hdff", hd_dim=10_000, seed=3, threads=THREADS)
    report = cmd_eval(
        paths["test"], paths["ood"], tmp_path / "m.hdff", tmp_path / "ev", threads=THREADS
    )
    assert report.auroc >= 0.95

    null_paths = generate(SyntheticSpec(ood_shift=0.0, **base), tmp_path / "null")
    cmd_fit(null_paths["train"], tmp_path / "m0.hdff", hd_dim=10_000, seed=3, threads=THREADS)
    null_report = cmd_eval(
        null_paths["test"], null_paths["ood"], tmp_path / "m0.hdff", tmp_path / "ev0",
        threads=THREADS,
    )
    assert 0.4 <= null_report.auroc <= 0.6


@criterion("layer fusion tracks the best single layer per pack", budget_seconds=120.0)
def test_layer_fusion_property(tmp_path):
    base = dict(
        num_classes=4,
        train_per_class=40,
        test_per_class=25,
        channels=(12, 16, 20),
        spatial=3,
        proto_scale=1.0,
        noise_scale=0.1,
        seed=29,
    )
    best_layers = []
    for j in range(3):
        shifts = [0.0, 0.0, 0.0]
        shifts[j] = 3.0
        paths = generate(SyntheticSpec(ood_shift=tuple(shifts), **base), tmp_path / f"pack{j}")
        rows = cmd_ablate_layers(
            paths["test"], paths["ood"], paths["train"], tmp_path / f"abl{j}.csv",
            hd_dim=2048, seed=17, threads=THREADS,
        )
        by_label = {r[0]: r[1] for r in rows}
        singles = {lab: v for lab, v in by_label.items() if lab != "fusion"}
        best = max(singles, key=singles.get)
        best_layers.append(best)
        assert by_label["fusion"] >= singles[best] - 0.05, f"pack {j}: {by_label}"
    assert len(set(best_layers)) >= 2, f"one layer dominated every pack: {best_layers}"


@criterion("dimensionality ablation: CI width shrinks by m=10^4", budget_seconds=300.0)
def test_dimensionality_ablation(tmp_path):
    spec = SyntheticSpec(
        num_classes=4,
        train_per_class=25,
        test_per_class=15,
        channels=(5, 8, 10),
        spatial=3,
        proto_scale=1.0,
        noise_scale=0.6,
        ood_shift=0.6,
        seed=19,
    )
    paths = generate(spec, tmp_path)
    rows = cmd_ablate_dims(
        paths["train"], paths["test"], paths["ood"], tmp_path / "dims.csv",
        dims=[10, 100, 1000, 10_000], repeats=10, seed=5, threads=THREADS,
    )
    widths = {m: hi - lo for m, _, _, lo, hi in rows}
    assert widths[10_000] <= widths[100], widths


@criterion("linear scaling of projection+bundle time in channels")
def test_linear_scaling(tmp_path):
    rows, slope, r2 = cmd_bench(
        tmp_path / "bench.csv",
        hd_dim=10_000,
        channels=[64, 128, 256, 512, 1024],
        reps=15,
        batch=64,
        seed=1,
    )
    assert r2 >= 0.95, f"r2={r2:.4f}, rows={rows}"
    assert slope > 0
    times = dict(rows)
    assert list(times.values()) == sorted(times.values()), f"not monotone: {rows}"
    ratio = times[1024] / times[512]
    assert 1.4 <= ratio <= 2.6, f"doubling channels changed time by {ratio:.2f}x"


@criterion("persistence: bit-exact round trips, projections regenerate")
def test_persistence(tmp_path):
    rng = np.random.default_rng(6)
    # tensor file round trip
    arr = rng.standard_normal((7, 3, 4, 5)).astype(np.float32)
    write_tensor_file(tmp_path / "t.npy", arr)
    assert read_tensor_file(tmp_path / "t.npy").tobytes() == arr.tobytes()
    # feature pack round trip
    pack_dir = write_feature_pack(
        tmp_path / "pack",
        [(1, "a", arr)],
        dataset_name="rt",
        split="train",
        class_labels=list(rng.integers(0, 2, 7)),
    )
    with FeaturePack(pack_dir) as pack:
        for i in range(7):
            assert pack.read_map(i, 1).tobytes() == arr[i].tobytes()
    # model pack: save -> load -> save byte-identical, projections bit-equal
    spec = SyntheticSpec(
        num_classes=3, train_per_class=10, test_per_class=5,
        channels=(6, 9), spatial=2, seed=23,
    )
    paths = generate(spec, tmp_path / "synth")
    model = cmd_fit(paths["train"], tmp_path / "m1.hdff", hd_dim=256, seed=13)
    loaded = load_model(tmp_path / "m1.hdff")
    save_model(loaded, tmp_path / "m2.hdff")
    assert (tmp_path / "m1.hdff").read_bytes() == (tmp_path / "m2.hdff").read_bytes()
    for a, b in zip(model.projections().matrices, loaded.projections().matrices):
        assert a.entries.tobytes() == b.entries.tobytes()
