import numpy as np
import pytest

from curereg.baselines import AcsConfig, acs_path, default_rrr_ridge, fit_rrr
from curereg.core import (
    NormMode,
    ProblemData,
    p_orthogonal_svd,
    renormalize_factor,
    residual,
)
from curereg.deflation import (
    DeflationConfig,
    LassoInitializer,
    RrrInitializer,
    deflate,
    orthogonality_diagnostics,
    parallel_pursuit,
    sequential_pursuit,
)
from curereg.metrics import estimation_errors
from curereg.stagewise import StagewiseConfig, run_path, select_on_path
from curereg.tuning import CriterionInput, information_criterion

EXACT_ACS = AcsConfig(lambda_grid=np.array([0.0]), mu=0.0, tol=1e-12, max_iters=2000)


def lowrank_instance(rng, n, p, q, r, noise=0.0, scale=1.0):
    X = rng.standard_normal((n, p))
    C0 = scale * rng.standard_normal((p, r)) @ rng.standard_normal((r, q))
    Y = X @ C0 + noise * rng.standard_normal((n, q))
    return ProblemData(X, Y), C0


def models_bitwise_equal(a, b):
    assert a.rank == b.rank
    for la, lb in zip(a.layers, b.layers):
        assert la.d == lb.d
        assert np.array_equal(la.u, lb.u)
        assert np.array_equal(la.v, lb.v)


# ---------------------------------------------------------------------------
# sequential pursuit


def test_sequential_rank_one_equals_single_fit():
    rng = np.random.default_rng(0)
    prob, _ = lowrank_instance(rng, 20, 6, 5, 1, noise=0.3)
    sw = StagewiseConfig(epsilon=0.2)
    model = sequential_pursuit(
        prob, DeflationConfig(strategy="sequential", rank=1, solver=sw)
    )
    direct = select_on_path(run_path(prob, sw)).factor
    assert model.rank == 1
    want = renormalize_factor(direct, NormMode.PORTH, prob.X)
    models_bitwise_equal(model, type(model)((want,)))


def test_sequential_unpenalized_acs_recovers_svd_layers():
    rng = np.random.default_rng(1)
    prob, C0 = lowrank_instance(rng, 30, 8, 6, 3)
    ols = np.linalg.lstsq(prob.X, prob.Y, rcond=None)[0]
    oracle = p_orthogonal_svd(prob.X, ols, 3)
    cfg = DeflationConfig(strategy="sequential", rank=3, solver=EXACT_ACS)
    model = sequential_pursuit(prob, cfg)
    assert model.rank == 3
    for got, want in zip(model.layers, oracle.layers):
        assert np.linalg.norm(got.to_matrix() - want.to_matrix()) <= 1e-5


def test_sequential_beats_rrr_on_fit_error():
    from curereg.simgen import SimSpec, gen_dataset

    truth = gen_dataset(SimSpec(model="II", n=60, p=100, q=60, r_star=3, seed=5))
    prob = ProblemData(truth.X, truth.Y)
    cfg = DeflationConfig(
        strategy="sequential", rank=3, solver=StagewiseConfig(epsilon=1.0)
    )
    model = sequential_pursuit(prob, cfg)
    _, er_seq = estimation_errors(model.to_matrix((100, 60)), truth.c_star, truth.X)
    rrr = fit_rrr(truth.X, truth.Y, 3, ridge=default_rrr_ridge(truth.X))
    _, er_rrr = estimation_errors(rrr, truth.c_star, truth.X)
    assert er_seq < er_rrr


def test_sequential_residual_norms_decrease():
    rng = np.random.default_rng(2)
    prob, _ = lowrank_instance(rng, 25, 7, 6, 3, noise=0.4)
    cfg = DeflationConfig(
        strategy="sequential", rank=3, solver=StagewiseConfig(epsilon=0.2)
    )
    model = sequential_pursuit(prob, cfg)
    Yk = prob.Y.copy()
    norms = [np.linalg.norm(Yk)]
    for lay in model.layers:
        Yk = Yk - prob.X @ lay.to_matrix()
        norms.append(np.linalg.norm(Yk))
    assert all(b <= a + 1e-9 for a, b in zip(norms, norms[1:]))


def test_sequential_stops_on_zero_layer():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((12, 4))
    prob = ProblemData(X, np.zeros((12, 3)))
    cfg = DeflationConfig(
        strategy="sequential", rank=3, solver=StagewiseConfig(criterion="none")
    )
    with pytest.warns(RuntimeWarning, match="layer 1 is zero"):
        model = sequential_pursuit(prob, cfg)
    assert model.rank == 0


def test_porth_resum_reproduces_total():
    rng = np.random.default_rng(4)
    prob, _ = lowrank_instance(rng, 24, 6, 5, 2, noise=0.3)
    cfg = DeflationConfig(
        strategy="sequential", rank=2, solver=StagewiseConfig(epsilon=0.25)
    )
    model = deflate(prob, cfg)
    total = model.to_matrix((6, 5))
    again = sum(
        renormalize_factor(
            renormalize_factor(lay, NormMode.L1), NormMode.PORTH, prob.X
        ).to_matrix()
        for lay in model.layers
    )
    np.testing.assert_allclose(again, total, atol=1e-10)


# ---------------------------------------------------------------------------
# parallel pursuit


def test_parallel_rank_one_with_zero_pilot_equals_single_fit():
    rng = np.random.default_rng(5)
    prob, _ = lowrank_instance(rng, 20, 6, 5, 1, noise=0.3)
    sw = StagewiseConfig(epsilon=0.2)
    cfg = DeflationConfig(
        strategy="parallel",
        rank=1,
        solver=sw,
        initializer=LassoInitializer(lam0=1e6),  # fully shrunk pilot
    )
    with pytest.warns(RuntimeWarning) as rec:
        model = parallel_pursuit(prob, cfg)
    assert any("pilot estimate is zero" in str(w.message) for w in rec)
    direct = renormalize_factor(
        select_on_path(run_path(prob, sw)).factor, NormMode.PORTH, prob.X
    )
    assert model.rank == 1
    models_bitwise_equal(model, type(model)((direct,)))


def test_parallel_unpenalized_recovers_noiseless_truth():
    rng = np.random.default_rng(6)
    prob, C0 = lowrank_instance(rng, 30, 8, 6, 2)
    cfg = DeflationConfig(
        strategy="parallel", rank=2, solver=EXACT_ACS, initializer=RrrInitializer()
    )
    model = parallel_pursuit(prob, cfg)
    assert model.rank == 2
    fit_gap = np.linalg.norm(prob.X @ (model.to_matrix((8, 6)) - C0))
    assert fit_gap <= 1e-5 * np.linalg.norm(prob.X @ C0)


def test_parallel_concurrent_matches_serial_bitwise():
    rng = np.random.default_rng(7)
    prob, _ = lowrank_instance(rng, 24, 7, 6, 2, noise=0.4)
    base = dict(
        strategy="parallel",
        rank=2,
        solver=StagewiseConfig(epsilon=0.25),
        initializer=RrrInitializer(),
    )
    serial = parallel_pursuit(prob, DeflationConfig(**base))
    threaded = parallel_pursuit(
        prob, DeflationConfig(**base, parallel_layers_concurrent=True)
    )
    models_bitwise_equal(serial, threaded)


def test_parallel_pilot_rank_below_target_warns_and_shrinks():
    rng = np.random.default_rng(8)
    prob, _ = lowrank_instance(rng, 25, 6, 5, 1)  # exactly rank one
    cfg = DeflationConfig(
        strategy="parallel", rank=2, solver=EXACT_ACS, initializer=RrrInitializer()
    )
    with pytest.warns(RuntimeWarning) as rec:
        model = parallel_pursuit(prob, cfg)
    assert any("below the target" in str(w.message) for w in rec)
    assert model.rank == 1


def test_parallel_threshold_noop_when_loose():
    rng = np.random.default_rng(9)
    prob, _ = lowrank_instance(rng, 22, 6, 5, 2, noise=0.3)
    base = dict(
        strategy="parallel",
        rank=2,
        solver=StagewiseConfig(epsilon=0.25),
        initializer=RrrInitializer(),
    )
    plain = parallel_pursuit(prob, DeflationConfig(**base))
    loose = parallel_pursuit(prob, DeflationConfig(**base, s_threshold=30))
    models_bitwise_equal(plain, loose)


def test_parallel_threshold_sparsifies_pilot():
    rng = np.random.default_rng(10)
    prob, C0 = lowrank_instance(rng, 30, 8, 6, 2)
    cfg = DeflationConfig(
        strategy="parallel",
        rank=2,
        solver=EXACT_ACS,
        initializer=RrrInitializer(),
        s_threshold=12,
    )
    model = parallel_pursuit(prob, cfg)
    assert model.rank == 2  # refit survives a heavily thresholded pilot


# ---------------------------------------------------------------------------
# tuning plumbing shared by both strategies


def test_acs_layer_selection_matches_manual_gic_scan():
    rng = np.random.default_rng(11)
    prob, _ = lowrank_instance(rng, 26, 7, 5, 1, noise=0.5)
    grid = np.geomspace(0.5, 0.01, 12)
    solver = AcsConfig(lambda_grid=grid)
    cfg = DeflationConfig(strategy="sequential", rank=1, solver=solver)
    model = sequential_pursuit(prob, cfg)
    best = None
    for lam, fac in acs_path(prob, grid, mu=solver.mu, config=solver):
        R = residual(prob, fac)
        rss = float(np.vdot(R, R))
        df = 0 if fac.is_zero else np.count_nonzero(fac.u) + np.count_nonzero(fac.v) - 1
        val = (
            -np.inf
            if rss <= 0
            else information_criterion("gic", CriterionInput(rss, 26, 7, 5, int(df)))
        )
        if best is None or val < best[0]:
            best = (val, fac)
    want = renormalize_factor(best[1], NormMode.PORTH, prob.X)
    models_bitwise_equal(model, type(model)((want,)))


def test_cv_layer_selection_is_deterministic():
    rng = np.random.default_rng(12)
    prob, _ = lowrank_instance(rng, 30, 6, 5, 1, noise=0.5)
    for solver in (StagewiseConfig(epsilon=0.25), AcsConfig()):
        cfg = DeflationConfig(
            strategy="sequential",
            rank=1,
            solver=solver,
            criterion="cv",
            cv_folds=3,
            cv_seed=7,
        )
        a = deflate(prob, cfg)
        b = deflate(prob, cfg)
        assert a.rank == b.rank == 1
        models_bitwise_equal(a, b)


def test_masked_deflation_recovers_structure():
    rng = np.random.default_rng(13)
    X = rng.standard_normal((40, 8))
    C0 = rng.standard_normal((8, 2)) @ rng.standard_normal((2, 6))
    Y = X @ C0 + 0.1 * rng.standard_normal((40, 6))
    mask = rng.uniform(size=(40, 6)) > 0.2
    prob = ProblemData(X, Y, mask)
    cfg = DeflationConfig(
        strategy="sequential", rank=2, solver=StagewiseConfig(epsilon=0.5)
    )
    model = sequential_pursuit(prob, cfg)
    assert model.rank >= 1
    gap = np.linalg.norm(X @ (model.to_matrix((8, 6)) - C0))
    assert gap <= 0.5 * np.linalg.norm(X @ C0)


def test_orthogonality_diagnostics_near_identity_for_exact_layers():
    rng = np.random.default_rng(14)
    prob, _ = lowrank_instance(rng, 28, 7, 6, 2)
    cfg = DeflationConfig(strategy="sequential", rank=2, solver=EXACT_ACS)
    model = sequential_pursuit(prob, cfg)
    Gu, Gv = orthogonality_diagnostics(model, prob.X)
    assert Gu.shape == Gv.shape == (2, 2)
    np.testing.assert_allclose(np.diag(Gu), 1.0, atol=1e-6)
    assert abs(Gu[0, 1]) <= 1e-5
    np.testing.assert_allclose(np.diag(Gv), 1.0, atol=1e-6)


# ---------------------------------------------------------------------------
# configuration validation


def test_deflation_config_validation():
    sw = StagewiseConfig()
    with pytest.raises(ValueError):
        DeflationConfig(strategy="greedy", rank=1, solver=sw)
    with pytest.raises(ValueError):
        DeflationConfig(strategy="sequential", rank=0, solver=sw)
    with pytest.raises(TypeError):
        DeflationConfig(strategy="sequential", rank=1, solver="stagewise")
    with pytest.raises(ValueError):
        DeflationConfig(strategy="parallel", rank=1, solver=sw)
    with pytest.raises(ValueError):
        DeflationConfig(
            strategy="parallel",
            rank=3,
            solver=sw,
            initializer=RrrInitializer(),
            s_threshold=2,
        )
    with pytest.raises(ValueError):
        DeflationConfig(strategy="sequential", rank=1, solver=sw, criterion="none")


def test_strategy_mismatch_is_rejected():
    rng = np.random.default_rng(15)
    prob, _ = lowrank_instance(rng, 10, 4, 3, 1, noise=0.2)
    seq = DeflationConfig(strategy="sequential", rank=1, solver=StagewiseConfig())
    par = DeflationConfig(
        strategy="parallel", rank=1, solver=StagewiseConfig(), initializer=RrrInitializer()
    )
    with pytest.raises(ValueError):
        parallel_pursuit(prob, seq)
    with pytest.raises(ValueError):
        sequential_pursuit(prob, par)


def test_resolved_criterion_precedence():
    sw_bic = StagewiseConfig(criterion="bic")
    assert (
        DeflationConfig(strategy="sequential", rank=1, solver=sw_bic).resolved_criterion()
        == "bic"
    )
    assert (
        DeflationConfig(
            strategy="sequential", rank=1, solver=sw_bic, criterion="aic"
        ).resolved_criterion()
        == "aic"
    )
    none_cfg = DeflationConfig(
        strategy="sequential", rank=1, solver=StagewiseConfig(criterion="none")
    )
    assert none_cfg.resolved_criterion() == "gic"
    assert (
        DeflationConfig(strategy="sequential", rank=1, solver=AcsConfig()).resolved_criterion()
        == "gic"
    )
