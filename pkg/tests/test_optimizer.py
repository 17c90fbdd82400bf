import io

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from fieldkit import optimizer as opt
from fieldkit.initialize import init_two_echo
from fieldkit.likelihood import curvatures
from fieldkit.optimizer import IterationLog, NumericalError, Problem, SolverConfig, line_search, ncg_mls, solve
from fieldkit.regularizer import DifferenceOperator
from fieldkit.signal import build_gamma, flatten, forward_model, precompute_cache
from helpers import random_problem

METHODS = ("qm", "ncg", "ncg-d", "ncg-ic0", "ncg-ic")


def _nonincreasing(costs):
    costs = np.asarray(costs)
    tol = 1e-12 * np.abs(costs[0])
    return np.all(np.diff(costs) <= tol)


def _zero_data_problem(dims=(5, 4, 3), beta=0.8):
    mask = np.ones(dims, bool)
    nv = mask.size
    t = np.array([0.0, 2e-3])
    cache = precompute_cache(np.zeros((1, 2, nv), complex), np.ones((1, nv)), build_gamma("fieldmap", t),
                             flatten(mask), t)
    return Problem(cache, DifferenceOperator(mask), beta)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(preconditioner="ilu")
    with pytest.raises(ValueError):
        SolverConfig(n_outer=0)
    with pytest.raises(ValueError):
        SolverConfig(n_inner=0)
    with pytest.raises(ValueError):
        SolverConfig(ict_scale=0.0)


def test_line_search_quadratic_one_step():
    pr = _zero_data_problem()
    rng = np.random.default_rng(0)
    om = rng.standard_normal(pr.cache.n_voxels)
    z = rng.standard_normal(pr.cache.n_voxels)
    alpha, flat = line_search(pr, om, z, 1)
    cz = pr.op.apply(z)
    df = pr.beta * float(cz @ pr.op.apply(om))
    assert not flat
    assert alpha == pytest.approx(-df / (pr.beta * float(cz @ cz)), rel=1e-12)
    # exact minimizer of the quadratic along z
    h = 1e-3
    assert pr.cost(om + alpha * z) <= min(pr.cost(om + (alpha + h) * z), pr.cost(om + (alpha - h) * z))


def test_line_search_flat_direction():
    pr = _zero_data_problem()
    z = np.ones(pr.cache.n_voxels)  # constants: no curvature
    alpha, flat = line_search(pr, np.zeros_like(z), z, 5)
    assert flat and alpha == 0.0


def test_line_search_scalar_toy_grid_oracle():
    t = np.array([0.0, 2e-3])
    basis = build_gamma("fieldmap", t)
    y = np.array([[[1.3 + 0.2j], [0.4 - 1.1j]]])
    mask = np.ones((1, 1, 1), bool)
    cache = precompute_cache(y, np.ones((1, 1)), basis, np.ones(1, bool), t)
    pr = Problem(cache, DifferenceOperator(mask), 0.0)
    om = np.array([37.0])
    z = np.array([1.0])
    alpha, _ = line_search(pr, om, z, 10)

    period = 2 * np.pi / abs(t[1] - t[0])
    grid = np.linspace(-period / 2, period / 2, 100_001)
    f = np.array([pr.cost(om + a * z) for a in grid])
    k = int(np.argmin(f))
    res = minimize_scalar(lambda a: pr.cost(om + a * z), bounds=(grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]),
                          method="bounded", options={"xatol": 1e-9})
    assert abs(alpha - res.x) < 1e-4


def test_line_search_inner_monotone():
    rng = np.random.default_rng(1)
    for seed in range(5):
        pr = random_problem(np.random.default_rng(seed), (4, 3, 2), nc=2, L=3, beta=0.2)
        om = rng.uniform(-200, 200, pr.cache.n_voxels)
        z = -pr.grad(om)
        hist = []
        line_search(pr, om, z, 10, history=hist)
        assert _nonincreasing(hist)


def test_exact_preconditioner_quadratic_one_iteration(monkeypatch):
    pr = _zero_data_problem()
    H = pr.reg.toarray()
    pinv = np.linalg.pinv(H)
    monkeypatch.setattr(opt, "_make_precond", lambda problem, kind, d, scale, log: ((lambda g: pinv @ g), None))
    rng = np.random.default_rng(2)
    om0 = rng.standard_normal(pr.cache.n_voxels)
    _, log = ncg_mls(pr, om0, SolverConfig("ict", n_outer=1, n_inner=1))
    g0, g1 = log.column("grad_norm")
    assert g1 < 1e-10 * g0


def test_identity_preconditioner_path():
    pr = random_problem(np.random.default_rng(3), (4, 3, 2))
    om0 = np.random.default_rng(4).uniform(-100, 100, pr.cache.n_voxels)
    om1, _ = ncg_mls(pr, om0, SolverConfig("none", n_outer=1, n_inner=10))
    z = -pr.grad(om0)
    alpha, _ = line_search(pr, om0, z, 10, d0=curvatures(pr.cache, om0))
    assert np.allclose(om1, om0 + alpha * z, rtol=0, atol=1e-10)


@pytest.mark.parametrize("method", METHODS)
def test_monotone_every_method(method):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        mode = ["fieldmap", "waterfat"][seed % 2]
        pr = random_problem(rng, (5, 4, 3), nc=[1, 2, 4][seed % 3], L=[2, 3, 4][seed % 3], mode=mode,
                            beta=[0.05, 0.5, 5.0][seed % 3])
        om0 = rng.uniform(-150, 150, pr.cache.n_voxels)
        _, log = solve(pr, om0, method, 15)
        assert _nonincreasing(log.costs), (method, seed)


def test_preconditioned_variants_agree_and_ic_is_faster():
    rng = np.random.default_rng(12)
    dims = (12, 10, 6)
    mask = np.ones(dims, bool)
    t = np.array([0.0, 2e-3, 10e-3])
    basis = build_gamma("fieldmap", t)
    gx, gy, gz = np.meshgrid(*[np.linspace(-1, 1, n) for n in dims], indexing="ij")
    truth = 2 * np.pi * flatten(40 * gx - 30 * gy + 20 * gx * gz)
    s = np.stack([flatten(np.exp(-((gx - c) ** 2 + gy**2) / 1.5) * np.exp(0.3j * c * gy)) for c in (-1, 1)])
    y = forward_model(np.full((1, mask.size), 10.0), truth, s, t, basis)
    y = y + 0.5 * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    cache = precompute_cache(y, s, basis, flatten(mask), t)
    pr = Problem(cache, DifferenceOperator(mask), 2.0**-4)
    om0 = init_two_echo(y, s, t)
    ref = solve(pr, om0, "ncg-ic", 100)[0]
    final, hits = {}, {}
    for m in ("ncg", "ncg-d", "ncg-ic0", "ncg-ic"):
        _, log = solve(pr, om0, m, 60, reference=ref)
        final[m] = log.costs[-1]
        rmsd = log.column("rmsd_hz")
        hits[m] = int(np.argmax(rmsd < 0.5)) if np.any(rmsd < 0.5) else 10**6
    best = min(final.values())
    for m, v in final.items():
        assert (v - best) / best < 1e-3, m
    assert hits["ncg-ic"] < hits["ncg"]
    assert hits["ncg-ic0"] < hits["ncg"]


def test_qm_fixed_point_at_truth():
    rng = np.random.default_rng(5)
    dims = (4, 4, 2)
    mask = np.ones(dims, bool)
    t = np.array([0.0, 2e-3, 10e-3])
    basis = build_gamma("fieldmap", t)
    truth = np.full(mask.size, 2 * np.pi * 17.0)  # constant: no penalty gradient
    s = rng.standard_normal((2, mask.size)) + 1j * rng.standard_normal((2, mask.size))
    y = forward_model(rng.standard_normal((1, mask.size)) + 0j, truth, s, t, basis)
    pr = Problem(precompute_cache(y, s, basis, flatten(mask), t), DifferenceOperator(mask), 0.1)
    om, _ = solve(pr, truth, "qm", 3)
    assert np.max(np.abs(om - truth)) <= 1e-10


def test_diag_precond():
    rng = np.random.default_rng(6)
    d = rng.uniform(0.5, 2, 8)
    g = rng.standard_normal(8)
    # diagonal H: exact Newton direction
    p = opt.diag_precond(d, np.zeros(8))
    assert np.allclose(g / p, np.linalg.solve(np.diag(d), g))
    # all-equal diagonal: parallel to g
    q = g / opt.diag_precond(np.full(8, 3.0), np.zeros(8))
    assert np.isclose(abs(q @ g), np.linalg.norm(q) * np.linalg.norm(g))
    # random sparse H: dense diagonal extraction
    pr = random_problem(rng, (4, 3, 2), beta=0.7)
    dd = rng.uniform(0, 1, pr.cache.n_voxels)
    H = np.diag(dd) + pr.reg.toarray()
    assert np.allclose(opt.diag_precond(dd, pr.reg_diag), np.diag(H))


@pytest.mark.parametrize("phase", [0.3, 2.0])
def test_unit_modulus_scaling_invariance(phase):
    rng = np.random.default_rng(7)
    dims = (5, 4, 2)
    mask = np.ones(dims, bool)
    t = np.array([0.0, 2e-3, 5e-3])
    basis = build_gamma("fieldmap", t)
    y = rng.standard_normal((2, 3, mask.size)) + 1j * rng.standard_normal((2, 3, mask.size))
    s = rng.standard_normal((2, mask.size)) + 1j * rng.standard_normal((2, mask.size))
    om0 = rng.uniform(-50, 50, mask.size)
    out = []
    for scale in (1.0, np.exp(1j * phase)):
        cache = precompute_cache(scale * y, s, basis, flatten(mask), t)
        pr = Problem(cache, DifferenceOperator(mask), 0.3)
        out.append(solve(pr, om0, "ncg-ic", 6)[0])
    assert np.allclose(out[0], out[1], rtol=0, atol=1e-8)


def test_nonfinite_start_rejected_and_numerical_error():
    pr = random_problem(np.random.default_rng(8), (3, 3, 2))
    om = np.zeros(pr.cache.n_voxels)
    om[0] = np.nan
    with pytest.raises(ValueError):
        solve(pr, om, "ncg", 2)
    rec = opt._Recorder(pr, None, None)
    with pytest.raises(NumericalError):
        rec.record(0, np.zeros(pr.cache.n_voxels), np.inf, np.zeros(pr.cache.n_voxels), 0.0)


def test_gtol_early_exit():
    pr = _zero_data_problem()
    om0 = np.full(pr.cache.n_voxels, 5.0)
    _, log = ncg_mls(pr, om0, SolverConfig("ict", n_outer=10, gtol=1e-8))
    assert len(log.rows) == 1


def test_log_csv_format():
    log = IterationLog()
    log.append(iter=0, time_s=0.1, cost=1 / 3, grad_norm=2.0, step=0.0, rmse_hz=None, rmsd_hz=None, factor_nnz=None)
    log.append(iter=1, time_s=0.2, cost=0.25, grad_norm=1.0, step=0.5, rmse_hz=None, rmsd_hz=None, factor_nnz=42)
    buf = io.StringIO()
    log.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "iter,time_s,cost,grad_norm,step,factor_nnz"
    assert lines[1].split(",")[2] == "0.33333333333333331"
    assert lines[2].endswith(",42")
