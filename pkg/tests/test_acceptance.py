"""Acceptance suite: one test per release criterion.

Each test prints a single summary line with its measured margin. The trend
criteria share one Monte-Carlo sweep fixture (12 grid points, 20 channel
realizations each) so the whole suite stays inside the runtime budgets.
"""

import json
import os
import time

import numpy as np
import pytest

from airfc import (AirFcParams, AoConfig, BlockFold, GridPoint, NoiseModel,
                   PowerBudget, SweepSettings, chain_rank_bound,
                   effective_channel, fold_chain, make_synthetic_task,
                   monte_carlo_sweep, noise_covariance,
                   noise_aware_regularizer, residual_target, run_ao,
                   simulate_forward, solve_relay_gains, train_digital_fc,
                   update_f1, update_f2)
from airfc.cli import main
from conftest import cn, khatri_rao_columns, random_channels, random_params

BASE_SEED = 20250819
TREND_L = (1, 2, 3)
TREND_K = (4, 8, 16)
POWER_SWEEP = (1.0, 0.1, 0.01)


# ---------------------------------------------------------------- fixtures

@pytest.fixture(scope="module")
def ao_traces():
    """Criterion-3 instances: 50 unconstrained-clean plus 50 projected."""
    start = time.perf_counter()
    clean = []
    rng = np.random.default_rng(301)
    config = AoConfig(max_iters=30, rel_tolerance=1e-14,
                      regularizer_mode="off")
    for _ in range(50):
        sizes = [int(rng.integers(4, 7))] * int(rng.integers(1, 4))
        channels = random_channels(rng, 4, 4, sizes)
        w = cn(rng, 4, 4)
        _, trace = run_ao(channels, w, NoiseModel.uniform(0.0, len(sizes)),
                          PowerBudget.uniform(1e9, 1e9, tuple(sizes)), config)
        clean.append(trace)

    projected = []
    rng = np.random.default_rng(302)
    for _ in range(50):
        sizes = [int(rng.integers(4, 7))] * int(rng.integers(1, 4))
        channels = random_channels(rng, 4, 4, sizes)
        w = cn(rng, 4, 4)
        _, trace = run_ao(channels, w, NoiseModel.uniform(1e-3, len(sizes)),
                          PowerBudget.uniform(4.0, 0.25, tuple(sizes)),
                          AoConfig(max_iters=25))
        projected.append(trace)
    return {"clean": clean, "projected": projected,
            "elapsed": time.perf_counter() - start}


@pytest.fixture(scope="module")
def trend_sweep():
    """Shared desk-scale sweep: trend grid, direct-link pair, power ladder."""
    start = time.perf_counter()
    task = make_synthetic_task(8, 4, 2000, 0.3, 7)
    baseline = train_digital_fc(task)
    settings = SweepSettings(n_tx=8, n_rx=8)

    points = [GridPoint(l, k, 1.0, 200.0, False)
              for l in TREND_L for k in TREND_K]
    points.append(GridPoint(2, 16, 1.0, 200.0, True))
    points += [GridPoint(3, 16, p, 200.0, False) for p in POWER_SWEEP[1:]]

    workers = min(8, os.cpu_count() or 1)
    results = monte_carlo_sweep(points, 20, BASE_SEED, task, baseline,
                                settings, workers=workers)
    by_point = {(r.point.n_groups, r.point.relays_per_group,
                 r.point.p_relay_w, r.point.direct_link): r for r in results}
    return {"results": results, "by_point": by_point, "baseline": baseline,
            "elapsed": time.perf_counter() - start}


# ---------------------------------------------------------------- criteria

def test_criterion_1_khatri_rao_identities():
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 7))
        m = int(rng.integers(1, 9))
        u = cn(rng, n, k)
        v = cn(rng, k, m)
        a = cn(rng, k, 1)[:, 0]
        e = cn(rng, n, m)
        b = khatri_rao_columns(v, u)

        vec = (u @ (a[:, None] * v)).flatten(order="F")
        err_vec = np.linalg.norm(b @ a - vec) / max(np.linalg.norm(vec), 1e-300)

        gram = (v @ v.conj().T).conj() * (u.conj().T @ u)
        err_gram = (np.linalg.norm(b.conj().T @ b - gram)
                    / max(np.linalg.norm(gram), 1e-300))

        eta = np.einsum("ik,ij,kj->k", u.conj(), e, v.conj())
        ref = b.conj().T @ e.flatten(order="F")
        err_eta = np.linalg.norm(eta - ref) / max(np.linalg.norm(ref), 1e-300)

        worst = max(worst, err_vec, err_gram, err_eta)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-12, f"identity relative error {worst:.3e}"
    assert elapsed < 10.0
    print(f"criterion 1 PASS: identities hold, worst rel err {worst:.2e}")


def _f1_oracle(xi, w, p_max):
    """High-precision materialized secular-equation solve."""
    n = xi.shape[1]
    gram = xi.conj().T @ xi
    rhs = xi.conj().T @ w
    unconstrained, *_ = np.linalg.lstsq(xi, w, rcond=None)
    if np.linalg.norm(unconstrained, "fro") ** 2 <= p_max:
        return unconstrained

    def ridge(lam):
        return np.linalg.solve(gram + lam * np.eye(n), rhs)

    lo, hi = 0.0, 1.0
    while np.linalg.norm(ridge(hi), "fro") ** 2 > p_max:
        hi *= 4.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if np.linalg.norm(ridge(mid), "fro") ** 2 > p_max:
            lo = mid
        else:
            hi = mid
    return ridge(hi)


def _f2_oracle(u, r_n, w):
    """Stacked least squares over [u, R^(1/2)] against [w, 0]."""
    evals, basis = np.linalg.eigh(0.5 * (r_n + r_n.conj().T))
    root = basis @ np.diag(np.sqrt(np.maximum(evals, 0.0))) @ basis.conj().T
    stacked = np.hstack([u, root])
    target = np.hstack([w, np.zeros((w.shape[0], r_n.shape[0]))])
    sol, *_ = np.linalg.lstsq(stacked.conj().T, target.conj().T, rcond=None)
    return sol.conj().T


def _gains_oracle(fold, e, d):
    b = khatri_rao_columns(fold.v, fold.u)
    rhs = e.flatten(order="F")
    if d is not None:
        b = np.vstack([b, np.diag(np.sqrt(d)).astype(complex)])
        rhs = np.concatenate([rhs, np.zeros(len(d), dtype=complex)])
    sol, *_ = np.linalg.lstsq(b, rhs, rcond=None)
    return sol


def _rel_gap(got, ref):
    return abs(got - ref) / max(ref, 1e-300)


def test_criterion_2_block_oracles():
    start = time.perf_counter()
    rng = np.random.default_rng(102)
    tight = AoConfig(bisection_tolerance=1e-13, bisection_max_steps=200)
    worst = {"f1": 0.0, "f2": 0.0, "gains": 0.0}
    for trial in range(50):
        channels = random_channels(rng, 4, 4, [3, 3])
        params = random_params(rng, channels, 4)
        w = cn(rng, 4, 4)
        h_eff = effective_channel(channels, params.gains)

        xi = params.f2 @ h_eff
        p_max = 0.25 if trial % 2 == 0 else 4.0
        f1, _ = update_f1(xi, w, p_max, tight)
        ref_f1 = _f1_oracle(xi, w, p_max)

        def f1_obj(f):
            return float(np.linalg.norm(xi @ f - w, "fro") ** 2)

        worst["f1"] = max(worst["f1"], _rel_gap(f1_obj(f1), f1_obj(ref_f1)))

        u = h_eff @ params.f1
        noise = NoiseModel.uniform(0.01, 2)
        r_n = noise_covariance(channels, params.gains, noise)
        f2 = update_f2(u, r_n, w)
        ref_f2 = _f2_oracle(u, r_n, w)

        def f2_obj(f):
            pen = float(np.real(np.trace(f @ r_n @ f.conj().T)))
            return float(np.linalg.norm(f @ u - w, "fro") ** 2) + pen

        worst["f2"] = max(worst["f2"], _rel_gap(f2_obj(f2), f2_obj(ref_f2)))

        g = trial % 2
        fold = fold_chain(channels, params, g)
        realized = params.f2 @ h_eff @ params.f1
        e = residual_target(w, realized, fold, params.gains[g])
        d = None if trial % 3 == 0 else noise_aware_regularizer(fold.u, 0.01)
        a = solve_relay_gains(fold, e, d)
        ref_a = _gains_oracle(fold, e, d)

        def gains_obj(vec):
            fit = np.linalg.norm(fold.u @ (vec[:, None] * fold.v) - e,
                                 "fro") ** 2
            if d is not None:
                fit = fit + np.sum(d * np.abs(vec) ** 2)
            return float(fit)

        worst["gains"] = max(worst["gains"],
                             _rel_gap(gains_obj(a), gains_obj(ref_a)))
    elapsed = time.perf_counter() - start
    for name, gap in worst.items():
        assert gap <= 1e-9, f"{name} objective gap {gap:.3e}"
    assert elapsed < 60.0
    print("criterion 2 PASS: block objective gaps "
          f"f1={worst['f1']:.2e} f2={worst['f2']:.2e} "
          f"gains={worst['gains']:.2e}")


def test_criterion_3_monotone_convergence(ao_traces):
    worst_step = -np.inf
    for trace in ao_traces["clean"]:
        totals = np.array(trace.totals)
        steps = np.diff(totals) / max(totals[0], 1.0)
        worst_step = max(worst_step, float(np.max(steps)))
    assert worst_step <= 1e-12, f"objective increased by {worst_step:.3e}"

    regressions = sum(1 for trace in ao_traces["projected"]
                      if trace.totals[-1] > trace.totals[0])
    assert regressions == 0, f"{regressions} projected instances regressed"
    assert ao_traces["elapsed"] < 120.0
    print("criterion 3 PASS: clean traces monotone "
          f"(worst step {worst_step:.2e}), projected 50/50 improved")


def test_criterion_4_feasibility_everywhere(ao_traces, trend_sweep):
    worst = 0.0
    for group in ("clean", "projected"):
        for trace in ao_traces[group]:
            worst = max(worst, max(trace.max_violations))
    checked = 0
    for result in trend_sweep["results"]:
        for record in result.records:
            if record.error is None:
                worst = max(worst, record.max_power_ratio)
                checked += 1
    assert checked > 0
    assert worst <= 1.0 + 1e-9, f"power ratio {worst!r}"
    print(f"criterion 4 PASS: worst consumed/allowed ratio {worst!r} "
          f"over {checked} sweep records plus 100 solver traces")


def test_criterion_5_noise_covariance_montecarlo():
    start = time.perf_counter()
    rng = np.random.default_rng(305)
    n_samples = 100_000
    worst = 0.0
    for _ in range(5):
        channels = random_channels(rng, 3, 4, [3, 4])
        gains = [2.0 * cn(rng, k, 1)[:, 0] for k in (3, 4)]
        noise = NoiseModel(
            sigma_u_sq=tuple(rng.uniform(0.05, 0.5, size=2)),
            sigma_c_sq=float(rng.uniform(0.05, 0.5)))
        analytic = noise_covariance(channels, gains, noise)

        params = AirFcParams(f1=np.zeros((3, 4), dtype=complex),
                             f2=np.eye(4, dtype=complex), gains=gains)
        y = simulate_forward(params, channels, noise,
                             np.zeros((4, n_samples), dtype=complex), rng)
        sampled = y @ y.conj().T / n_samples
        rel = (np.linalg.norm(sampled - analytic, "fro")
               / np.linalg.norm(analytic, "fro"))
        worst = max(worst, float(rel))
    elapsed = time.perf_counter() - start
    assert worst <= 0.05, f"covariance mismatch {worst:.3%}"
    assert elapsed < 120.0
    print(f"criterion 5 PASS: worst sample-covariance error {worst:.2%} "
          f"over 5x{n_samples} propagations")


def test_criterion_6_rank_bound():
    start = time.perf_counter()
    rng = np.random.default_rng(106)
    checked_narrow = checked_wide = 0
    for trial in range(100):
        n = int(rng.integers(4, 9))
        if trial % 2 == 0:
            sizes = [int(rng.integers(1, n)) for _ in range(rng.integers(1, 4))]
        else:
            sizes = [int(rng.integers(n, 11)) for _ in range(rng.integers(1, 4))]
        channels = random_channels(rng, n, n, sizes)
        params = random_params(rng, channels, n)
        realized = (params.f2 @ effective_channel(channels, params.gains)
                    @ params.f1)
        bound = chain_rank_bound(
            channels.n_tx, channels.n_rx, channels.group_sizes,
            [min(h.shape) for h in channels.h_hops])
        singulars = np.linalg.svd(realized, compute_uv=False)
        num_rank = int(np.sum(singulars > 1e-10 * singulars[0]))
        assert num_rank <= bound, (
            f"rank {num_rank} exceeds bound {bound} for sizes {sizes}")
        if min(sizes) < n:
            checked_narrow += 1
        else:
            checked_wide += 1
    elapsed = time.perf_counter() - start
    assert checked_narrow > 0 and checked_wide > 0
    assert elapsed < 30.0
    print(f"criterion 6 PASS: rank bound held on {checked_narrow} bottleneck "
          f"and {checked_wide} wide instances")


def test_criterion_7_trend_reproduction(trend_sweep):
    by_point = trend_sweep["by_point"]

    # (a) accuracy non-decreasing in K per L, one inversion within 1 std
    for l in TREND_L:
        series = [by_point[(l, k, 1.0, False)] for k in TREND_K]
        means = [r.mean_accuracy for r in series]
        stds = [r.std_accuracy for r in series]
        inversions = []
        for i in range(len(means) - 1):
            if means[i + 1] < means[i]:
                inversions.append((means[i] - means[i + 1],
                                   max(stds[i], stds[i + 1])))
        assert len(inversions) <= 1, f"L={l}: means {means} not monotone"
        for drop, std in inversions:
            assert drop <= std, (
                f"L={l}: inversion {drop:.4f} exceeds 1 std {std:.4f}")

    # (b) a second relay group strictly helps at the largest K
    acc_l1 = by_point[(1, 16, 1.0, False)].mean_accuracy
    acc_l2 = by_point[(2, 16, 1.0, False)].mean_accuracy
    assert acc_l2 > acc_l1, f"L=2 ({acc_l2:.4f}) not above L=1 ({acc_l1:.4f})"

    # (c) direct link at 0 dB Rician factor moves accuracy within [-1, +5] pts
    blocked = by_point[(2, 16, 1.0, False)].mean_accuracy
    open_ = by_point[(2, 16, 1.0, True)].mean_accuracy
    delta = open_ - blocked
    assert -0.01 <= delta <= 0.05, f"direct-link delta {delta:+.4f}"

    assert trend_sweep["elapsed"] < 900.0
    print("criterion 7 PASS: K-trend monotone per L, "
          f"L2-L1 gap {acc_l2 - acc_l1:+.4f} at K=16, "
          f"direct-link delta {delta:+.4f}")


def test_criterion_8_power_sensitivity(trend_sweep):
    by_point = trend_sweep["by_point"]
    series = [by_point[(3, 16, p, False)] for p in POWER_SWEEP]
    means = [r.mean_accuracy for r in series]
    stds = [r.std_accuracy for r in series]
    for i in range(len(POWER_SWEEP) - 1):
        assert means[i + 1] <= means[i] + 1e-12, (
            f"mean accuracy rose when power dropped: {means}")
        assert stds[i + 1] >= stds[i] - 1e-12, (
            f"accuracy spread shrank when power dropped: {stds}")
    assert trend_sweep["elapsed"] < 900.0
    print(f"criterion 8 PASS: means {[round(m, 4) for m in means]} "
          f"non-increasing, stds {[round(s, 4) for s in stds]} non-decreasing")


def test_criterion_9_byte_identical_rerun(tmp_path):
    start = time.perf_counter()
    config = {
        "system": {"n_streams": 4},
        "task": {"n_classes": 2, "samples": 120},
        "ao": {"max_iters": 6},
        "sweep": {"n_groups": [1, 2], "relays_per_group": [3], "trials": 2},
        "output_dir": str(tmp_path / "unused"),
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))

    payloads = []
    for name in ("first", "second"):
        out = tmp_path / name
        code = main(["sweep", "--config", str(cfg_path), "--out", str(out),
                     "--no-plots"])
        assert code == 0
        with open(out / "results.csv", "rb") as fh:
            payloads.append(fh.read())
    assert payloads[0] == payloads[1], "rerun produced different CSV bytes"
    n_rows = len(payloads[0].decode().splitlines()) - 1
    elapsed = time.perf_counter() - start
    print(f"criterion 9 PASS: {n_rows} trial rows byte-identical across "
          f"reruns ({elapsed:.1f}s)")
