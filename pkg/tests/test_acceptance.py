"""End-to-end acceptance checks, one per criterion, each printing a PASS/FAIL line.

The slow ones build the desk PICCG dataset (about a minute in total).
"""
import json
import time
import warnings

import numpy as np
import pytest

from oracles import exact_matmul_rounded, shapley_permutations
from xtune import cli
from xtune import data as D
from xtune.forest import TrainConfig, evaluate, fit, train
from xtune.kernels import EXECUTABLE, BlockConfig, run_variant
from xtune.matrices import dense_to_crs, gen_identity_mix, gen_random_scaled
from xtune.ozaki import COL_SPLIT, ROW_SPLIT, accurate_matmul, split_matrix
from xtune.piccg import UNBOUNDED, IcParams, ic_factorize, p3d_generate, piccg_solve
from xtune.shapley import BackgroundSet, global_summary, shapley_exact

# reported held-out MAPE per grid size, kept for comparison only
REPORTED_PICCG_MAPE = {16: 0.0273, 32: 0.0264, 64: 0.0372}


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def _random_pairs(count=25, seed=2024):
    rng = np.random.default_rng(seed)
    for i in range(count):
        n = int(rng.integers(2, 51))
        k = int(rng.integers(1, 51))
        s = float(rng.choice([0.0, 0.3, 0.6, 0.9]))
        if i % 2 == 0:
            phi = int(rng.integers(1, 31))
            a = gen_random_scaled(n, s, phi, seed=int(rng.integers(2**32)), cols=k)
            b = gen_random_scaled(k, s, phi, seed=int(rng.integers(2**32)), cols=n)
        else:
            a = gen_identity_mix(n, 0.9 + s / 10, seed=int(rng.integers(2**32)), cols=k)
            b = gen_identity_mix(k, 0.9 + s / 10, seed=int(rng.integers(2**32)), cols=n)
        yield a, b


def test_criterion_01_accurate_matmul_is_correctly_rounded(report):
    t0 = time.perf_counter()
    bad = 0
    for a, b in _random_pairs():
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            c = accurate_matmul(a, b)
        bad += int(not np.array_equal(c, exact_matmul_rounded(a, b)))
    elapsed = time.perf_counter() - t0
    report(1, bad == 0 and elapsed < 60, f"{25 - bad}/25 pairs bitwise equal to the rational oracle "
                                         f"in {elapsed:.1f} s (limit 60 s)")


def test_criterion_02_splits_sum_to_source(report):
    checked = ok = 0
    for a, b in _random_pairs():
        for m, side, k in ((a, ROW_SPLIT, a.shape[1]), (b, COL_SPLIT, a.shape[1])):
            s = split_matrix(m, side, inner_dim=k)
            if not s.remainder_zero:
                continue
            total = np.zeros_like(m)
            for piece in s.splits:
                total = total + piece
            checked += 1
            ok += int(np.array_equal(total, m))
    report(2, checked > 0 and ok == checked, f"{ok}/{checked} split sets sum bitwise to their source")


def test_criterion_03_variants_agree(report):
    rng = np.random.default_rng(7)
    mismatches = []
    for case in range(10):
        n = int(rng.integers(8, 80))
        if case % 2:
            a = gen_identity_mix(n, 0.95, seed=case)
            b = gen_identity_mix(n, 0.95, seed=case + 100)
        else:
            a = gen_random_scaled(n, float(rng.choice([0.0, 0.5, 0.9])), 30, seed=case)
            b = gen_random_scaled(n, 0.5, 30, seed=case + 100)
        sa = split_matrix(a, ROW_SPLIT)
        sb = split_matrix(b, COL_SPLIT, inner_dim=n)
        ref = run_variant(1, sa, sb).result
        for v in EXECUTABLE:
            for w in sorted({1, max(1, n // 4), n}):
                if not np.array_equal(run_variant(v, sa, sb, BlockConfig(w)).result, ref):
                    mismatches.append((case, v, w))
    report(3, not mismatches, f"10 cases x {len(EXECUTABLE)} variants x widths {{1, n/4, n}}: "
                              f"{len(mismatches)} mismatches")


def test_criterion_04_incomplete_cholesky(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    patterns_ok = True
    for i in range(10):
        n = int(rng.integers(5, 201))
        m = rng.standard_normal((n, n)) * (rng.random((n, n)) < 0.05)
        a = m + m.T
        a += np.diag(np.abs(a).sum(axis=1) + 1.0)
        crs = dense_to_crs(a)
        full = ic_factorize(crs, IcParams(UNBOUNDED, 0.0))
        worst = max(worst, np.linalg.norm(full.product() - a) / np.linalg.norm(a))
        f0 = ic_factorize(crs, IcParams(0, 0.0))
        p = np.zeros((n, n), dtype=bool)
        for r in range(n):
            p[r, f0.u.col_idx[f0.u.row_ptr[r]:f0.u.row_ptr[r + 1]]] = True
        patterns_ok &= bool(np.array_equal(p, np.triu(a != 0, 1)))
    report(4, worst <= 1e-12 and patterns_ok,
           f"max relative reconstruction error {worst:.2e} (limit 1e-12); IC(0) pattern "
           f"{'equals' if patterns_ok else 'differs from'} the upper pattern of A")


def test_criterion_05_piccg_converges(report):
    rows = []
    ok = True
    for lam in (1.0, 1e-3, 1e-6):
        p = p3d_generate(16, 1.0, lam)
        its = {}
        for m in (0, 2):
            _, rep = piccg_solve(p.a, p.b, IcParams(m, 0.0), tol=1e-8)
            ok &= rep.converged and rep.relative_residual <= 1e-8
            its[m] = rep.iterations
        ok &= its[2] <= its[0]
        rows.append(f"lambda2={lam:g}: m0 {its[0]} it, m2 {its[2]} it")
    report(5, ok, "; ".join(rows))


@pytest.mark.slow
def test_criterion_06_fill_level_degeneracy(report):
    same = total = 0
    first_diff = None
    for lam in D.desk_lambda2():
        a = p3d_generate(16, 1.0, lam).a
        for t in D.full_threshold_grid():
            n0 = ic_factorize(a, IcParams(0, t), check=False).nnz
            n1 = ic_factorize(a, IcParams(1, t), check=False).nnz
            total += 1
            same += int(n0 == n1)
            if n0 != n1 and first_diff is None:
                first_diff = (lam, t, n0, n1)
    detail = f"nnz(U) equal for m=0 and m=1 in {same}/{total} cells of the 16^3 sweep"
    if first_diff:
        detail += (f" (e.g. lambda2={first_diff[0]:.3g}, t={first_diff[1]}: "
                   f"{first_diff[2]} vs {first_diff[3]})")
    report(6, same == total, detail)


def test_criterion_07_shapley_axioms(report):
    rng = np.random.default_rng(99)
    worst_eff = worst_perm = 0.0
    dummy_ok = True
    n_dummies = 0
    for trial in range(50):
        d = int(rng.integers(2, 8))
        X = rng.random((40, d))
        task = "classify" if trial % 2 else "regress"
        live = rng.choice(d, size=max(1, d - 1), replace=False)
        signal = X[:, live].sum(axis=1)
        y = (signal > np.median(signal)).astype(int) + 1 if task == "classify" else signal + 0.1
        X[:, np.setdiff1d(np.arange(d), live)] = 0.25     # constant column: never split on
        model = fit(X, y, [f"f{j}" for j in range(d)], task,
                    TrainConfig(n_trees=5, seed=trial, features_per_split=d))
        bg = BackgroundSet.from_rows(X[rng.choice(40, 6, replace=False)], model.features)
        x = rng.random(d)
        ex = shapley_exact(model, x, bg)
        worst_eff = max(worst_eff, ex.efficiency_gap)
        f = model.score_function(ex.target_output)
        worst_perm = max(worst_perm, float(np.max(np.abs(ex.phi - shapley_permutations(f, x, bg.rows)))))
        for j in range(d):
            if j not in model.used_features():
                n_dummies += 1
                dummy_ok &= ex.phi[j] == 0.0
    ok = worst_eff <= 1e-9 and dummy_ok and worst_perm <= 1e-12
    report(7, ok, f"50 triples: efficiency gap {worst_eff:.1e} (limit 1e-9); {n_dummies} dummy features "
                  f"{'all exactly 0' if dummy_ok else 'NOT all 0'}; subset vs permutation {worst_perm:.1e} "
                  "(limit 1e-12)")


def test_criterion_08_sparsity_separates_schemes(report):
    d = D.engineered_selection_dataset()
    model = train(d, TrainConfig(seed=0))
    acc = evaluate(model, d).accuracy
    g = global_summary(model, d, BackgroundSet.from_dataset(d), split=D.TEST, target_class=1)
    top = g.ranking[0]
    report(8, acc >= 0.9 and top == "sparsity_A",
           f"test accuracy {acc:.3f} (limit 0.9); top feature for the dense-scheme score: {top}")


@pytest.fixture(scope="module")
def piccg_desk():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return D.build_piccg_dataset(D.plan_piccg(D.PiccgSweep(), seed=0))


@pytest.mark.slow
def test_criterion_09_piccg_regression(report, piccg_desk):
    d = piccg_desk
    cfg = TrainConfig(seed=0)
    plain = evaluate(train(d, cfg), d)
    enc = D.one_hot_encode(d, "fill_level", prefix="m")
    hot = train(enc, cfg)
    hot_eval = evaluate(hot, enc)
    g = global_summary(hot, enc, BackgroundSet.from_dataset(enc), split=D.TEST)
    imp = g.importance()
    ratio = max(imp["m0"], imp["m1"]) / imp["threshold"]
    reported = ", ".join(f"{k}^3 {v:.2%}" for k, v in REPORTED_PICCG_MAPE.items())
    ok = plain.mape < 0.05 and ratio < 0.1
    report(9, ok, f"held-out MAPE {plain.mape:.2%} (one-hot model {hot_eval.mape:.2%}; limit 5%); "
                  f"mean|phi| m0 {imp['m0']:.2e}, m1 {imp['m1']:.2e}, threshold {imp['threshold']:.2e}, "
                  f"max(m0, m1)/threshold = {ratio:.3f} (limit 0.1); reported full-scale MAPE: {reported}")


def _pipeline(tmp, capsys):
    def run(*argv):
        assert cli.main([str(a) for a in argv]) == 0
        capsys.readouterr()
    tmp.mkdir()
    run("gen", "--experiment", "matmul-engineered", "--seed", 3, "--out", tmp / "d.csv")
    run("train", "--data", tmp / "d.csv", "--out", tmp / "m.json", "--trees", 40, "--seed", 3)
    run("explain", "--model", tmp / "m.json", "--data", tmp / "d.csv", "--out-dir", tmp / "x")
    sweep = D.PiccgSweep(grids=(8,), lambda2=(1.0, 1e-3), thresholds=(0.001, 0.01), repeats=1, warmup=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        timed = D.build_piccg_dataset(D.plan_piccg(sweep, seed=3))
    return {
        "dataset": (tmp / "d.csv").read_bytes(),
        "model": (tmp / "m.json").read_bytes(),
        "beeswarm": (tmp / "x" / "beeswarm.csv").read_bytes(),
        "svg": (tmp / "x" / "beeswarm.svg").read_bytes(),
        "timed_features": timed.X.tobytes() + timed.extra["nnz_u"].tobytes()
                          + timed.extra["iterations"].tobytes() + json.dumps(timed.manifest).encode(),
    }


def test_criterion_10_determinism(report, tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("XTUNE_THREADS", raising=False)
    a = _pipeline(tmp_path / "a", capsys)
    b = _pipeline(tmp_path / "b", capsys)
    differ = [k for k in a if a[k] != b[k]]
    report(10, not differ, f"two seeded gen -> train -> explain runs: {len(a) - len(differ)}/{len(a)} "
                           f"artifacts bitwise identical{' (differ: ' + ', '.join(differ) + ')' if differ else ''}")


def test_criterion_11_paper_grid_arithmetic(report):
    mm = D.plan_matmul(D.paper_matmul_grid(), scale="paper").split_counts()
    bw = D.plan_blockwidth(1500, D.paper_blockwidths(), scale="paper").n_rows
    pc = D.plan_piccg(D.PiccgSweep.paper(), scale="paper").manifest
    warned = any("41073" in w and str(pc["rows_per_grid"]) in w for w in pc["warnings"])
    ok = mm == {D.TRAIN: 68, D.TEST: 13} and bw == 384 and warned
    report(11, ok, f"matmul {mm[D.TRAIN]}/{mm[D.TEST]}, block width {bw} rows, PICCG sweep "
                   f"{pc['rows_per_grid']} rows per grid vs reported 41073 "
                   f"{'flagged in manifest warnings' if warned else 'NOT flagged'}")
