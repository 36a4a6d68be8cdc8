"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one ``CRITERION n: PASS|FAIL`` line; the lines are echoed
in pytest's terminal summary and printed when this file is run directly
(``python3 tests/test_acceptance.py``).
"""
import itertools
import json
import math
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from mrxcs import cli
from mrxcs.analysis import evaluate, l_curve, singular_spectrum
from mrxcs.model import (Coil, assemble_lead_field, build_geometry, coil_field, desk_config,
                         loop_center_field, simulate_data)
from mrxcs.phantom import make_phantom
from mrxcs.sensing import compose_operator, compress_data, make_activation
from mrxcs.solvers import (GradientOperator, SolverConfig, douglas_rachford_solve,
                           quadratic_tikhonov, tv_box_prox)

RESULTS: dict[int, str] = {}

PAPER_DR = SolverConfig(mu=4e-13, alpha=1e-14, s=1.0, n_max=1.0, n_iter=50, inner_iter=30)
TIKHONOV_MU = 1e-12
NOISE_SEED = 1


def report(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


# --- shared desk-scale problem ---------------------------------------------

_cache: dict = {}


def desk():
    if not _cache:
        lead = assemble_lead_field(build_geometry(desk_config()))
        tumor = make_phantom("tumor", lead.grid)
        full = simulate_data(lead, tumor, 80.0, seed=NOISE_SEED)
        _cache.update(lead=lead, tumor=tumor, full=full)
    return _cache


def desk_dr(m: int, scheme: str = "deterministic", config: SolverConfig = PAPER_DR):
    d = desk()
    act = make_activation(scheme, m, d["lead"].n_coils, seed=2)
    op = compose_operator(d["lead"], act)
    y = op.normalize_data(compress_data(d["full"], act))
    return douglas_rachford_solve(op, y, config)


# --- criteria ---------------------------------------------------------------


def test_criterion_01_coil_field():
    t0 = time.perf_counter()
    a = desk_config().coil_radius
    exact = loop_center_field(a)
    dev = {}
    for n in (36, 45):
        h = coil_field(Coil(np.zeros(3), (0, 1, 0), a, n), np.zeros(3))
        dev[n] = abs(np.linalg.norm(h) - exact) / exact
    elapsed = time.perf_counter() - t0
    ok = dev[36] < 0.01 and dev[45] < dev[36] and elapsed < 1.0
    report(1, ok, f"deviation 36 seg {dev[36]:.3e}, 45 seg {dev[45]:.3e}, {elapsed:.3f} s")


def test_criterion_02_adjoint():
    rng = np.random.default_rng(2)
    g = GradientOperator(25, 25)
    worst = 0.0
    for _ in range(100):
        x, v = rng.standard_normal(g.n), rng.standard_normal(2 * g.n)
        lhs, rhs = g.apply(x) @ v, x @ g.adjoint(v)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    report(2, worst <= 1e-12, f"max relative error {worst:.2e} over 100 pairs")


def test_criterion_03_solver_oracles():
    rng = np.random.default_rng(3)
    tik_err = 0.0
    for _ in range(20):
        m, b = rng.standard_normal((6, 4)), rng.standard_normal(6)
        ref = np.linalg.solve(m.T @ m + 0.1 * np.eye(4), m.T @ b)
        tik_err = max(tik_err, np.linalg.norm(quadratic_tikhonov(m, b, 0.1) - ref) / np.linalg.norm(ref))

    m, y = rng.standard_normal((15, 9)), rng.standard_normal(15)
    one = douglas_rachford_solve(m, y, SolverConfig(mu=0.3, alpha=0.0, beta_active=False, n_iter=1),
                                 shape=(3, 3))
    one_step_exact = bool(np.array_equal(one.n_last, quadratic_tikhonov(m, y, 0.3)))

    q1, _ = np.linalg.qr(rng.standard_normal((8, 5)))
    q2, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    mat = q1 @ np.diag(np.linspace(1.0, 0.5, 5)) @ q2
    y = rng.standard_normal(8)
    long = douglas_rachford_solve(mat, y, SolverConfig(mu=0.5, alpha=0.0, beta_active=False,
                                                       n_iter=500), shape=(1, 5))
    grad_norm = np.linalg.norm(mat.T @ (mat @ long.values - y))
    ok = tik_err <= 1e-10 and one_step_exact and grad_norm <= 1e-8
    report(3, ok, f"tikhonov rel err {tik_err:.1e}; one-step DR == tikhonov: {one_step_exact}; "
                  f"|M^T(Mn-y)| = {grad_norm:.1e} after 500 its")


def _grid_min(v, w, n_max, step=0.005):
    grid = np.arange(0.0, n_max + step / 2, step)
    best = np.inf
    for a in grid:
        b, c = grid[:, None], grid[None, :]
        obj = 0.5 * ((a - v[0]) ** 2 + (b - v[1]) ** 2 + (c - v[2]) ** 2) \
            + w * (np.abs(b - a) + np.abs(c - b))
        best = min(best, float(obj.min()))
    return best


def test_criterion_04_prox_optimality():
    rng = np.random.default_rng(4)
    cases = [(np.array([0.0, 10.0, 0.0]), 1.0, 1.0)]
    cases += [(rng.uniform(-1, 2, 3), rng.uniform(0.05, 1.5), 1.0) for _ in range(8)]
    worst_gap, in_box = -np.inf, True
    for v, w, n_max in cases:
        z = tv_box_prox(v, w, n_max, shape=(1, 3))
        obj = 0.5 * np.sum((z - v) ** 2) + w * np.abs(np.diff(z)).sum()
        worst_gap = max(worst_gap, obj - _grid_min(v, w, n_max))
        in_box &= bool(np.all((z >= 0) & (z <= n_max)))
    for _ in range(50):
        z = tv_box_prox(rng.uniform(-5, 5, 625) * 10 ** rng.uniform(-3, 3), rng.uniform(0, 5),
                        1.0, shape=(25, 25))
        in_box &= bool(np.all((z >= 0) & (z <= 1.0)))
    report(4, worst_gap <= 1e-3 and in_box,
           f"max objective gap to grid search {worst_gap:.2e}; outputs in box: {in_box}")


def test_criterion_05_dr_vs_tikhonov():
    t0 = time.perf_counter()
    d = desk()
    tik = quadratic_tikhonov(d["lead"], d["full"], TIKHONOV_MU)
    r_tik = evaluate(d["tumor"], tik).relative_rmse
    res = desk_dr(20)
    r_dr = evaluate(d["tumor"], res.values).relative_rmse
    _cache["dr20"] = res
    elapsed = time.perf_counter() - t0
    ratio = r_dr / r_tik
    report(5, ratio <= 0.6 and elapsed <= 120,
           f"DR(m=20) rmse {r_dr:.4f} / Tikhonov(full) rmse {r_tik:.4f} = {ratio:.3f} (<= 0.6), "
           f"{elapsed:.1f} s")


def test_criterion_06_stagnation():
    res = _cache.get("dr20") or desk_dr(20)
    change = res.trace[49].rel_change
    report(6, change < 1e-3, f"relative iterate change at iteration 50 = {change:.3e} (< 1e-3)")


def test_criterion_07_ill_conditioning():
    mat = desk()["lead"].matrix
    sv = singular_spectrum(mat)
    cond = sv[0] / sv[-1] if sv[-1] > 0 else math.inf
    monotone = bool(np.all(np.diff(sv) <= 0))
    gram = np.sqrt(np.clip(np.linalg.eigvalsh(mat.T @ mat)[::-1][:20], 0, None))
    top_err = float(np.max(np.abs(sv[:20] - gram) / sv[:20]))
    report(7, cond > 1e6 and monotone and top_err <= 1e-8,
           f"cond {cond:.2e}; monotone {monotone}; top-20 vs Gram eig rel err {top_err:.1e}")


def test_criterion_08_l_curve(tmp_path):
    d = desk()
    mus = np.logspace(-15, -6, 10)
    pts = l_curve(d["lead"], d["full"], mus)
    ok_pts = all(p.ok for p in pts)
    res_mono = all(b.log_residual >= a.log_residual for a, b in zip(pts, pts[1:]))
    norm_mono = all(b.log_solution_norm <= a.log_solution_norm for a, b in zip(pts, pts[1:]))
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"geometry": {"n_per_side": 25, "sensors_per_layer": 20, "n_coils": 60},
                               "sweep": {"m_values": [20], "mu_grid": list(mus)},
                               "cache_dir": str(tmp_path / "cache")}))
    code = cli.main(["lcurve", str(cfg), "--out", str(tmp_path / "lc"), "--quiet"])
    lines = (tmp_path / "lc" / "lcurve.csv").read_text().splitlines() if code == 0 else []
    csv_ok = code == 0 and len(lines) == 11 and lines[0].startswith("mu,")
    report(8, ok_pts and res_mono and norm_mono and csv_ok,
           f"residual nondecreasing {res_mono}; norm nonincreasing {norm_mono}; "
           f"CSV rows {max(len(lines) - 1, 0)}")


def test_criterion_09_sweep_plateau():
    d = desk()
    r40 = evaluate(d["tumor"], desk_dr(40).values).relative_rmse
    r60 = evaluate(d["tumor"], desk_dr(60).values).relative_rmse
    rel = abs(r40 - r60) / r60
    report(9, rel <= 0.05,
           f"rmse m=40 {r40:.4f}, m=60 {r60:.4f}; relative gap {rel:.1%} (<= 5%); "
           f"absolute gap {abs(r40 - r60):.4f}")


def test_criterion_10_determinism(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"geometry": {"n_per_side": 25, "sensors_per_layer": 20, "n_coils": 60},
                               "sensing": {"scheme": "gaussian", "m": 20},
                               "output_dir": str(tmp_path / "run"),
                               "cache_dir": str(tmp_path / "cache")}))
    snapshots = []
    for _ in range(2):
        assert cli.main(["run", str(cfg), "--quiet"]) == 0
        out = tmp_path / "run"
        man = json.loads((out / "manifest.json").read_text())
        files = {name: (out / name).read_bytes() for name in list(man["artifacts"]) + ["manifest.json"]}
        snapshots.append(files)
    same = snapshots[0] == snapshots[1]
    report(10, same, f"{len(snapshots[0])} files bitwise identical across two runs: {same}")


if __name__ == "__main__":
    import sys

    tests = [(name, fn) for name, fn in sorted(globals().items()) if name.startswith("test_criterion")]
    for name, fn in tests:
        try:
            if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                with tempfile.TemporaryDirectory() as tmp:
                    fn(Path(tmp))
            else:
                fn()
        except AssertionError:
            pass
    sys.exit(0 if all("PASS" in line for line in RESULTS.values()) else 1)
