"""Multi-layer estimation by deflation: sequential and parallel pursuit.

Sequential pursuit peels unit-rank layers off the response one at a time:
layer k is fitted to ``Y - X (C_1 + ... + C_{k-1})``.  Parallel pursuit
instead starts from a pilot estimate of the full coefficient matrix (lasso
or reduced-rank regression), splits it into predictor-metric orthogonal
layers, and refits layer k against ``Y - X * (pilot minus its own layer)``;
the layer subproblems are independent, so they can run concurrently and in
any order with identical results.

Each unit-rank subproblem is solved either by the stagewise path solver
(selecting a path point by an information criterion or CV) or by the
alternating solver on a decreasing penalty grid.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baselines import (
    AcsConfig,
    acs_path,
    default_lambda_grid,
    default_rrr_ridge,
    fit_rrr,
    lasso_gic_path,
)
from .core import (
    FactorModel,
    NormMode,
    ProblemData,
    hard_threshold_layer,
    p_orthogonal_svd,
    renormalize_factor,
    residual,
)
from .stagewise import StagewiseConfig, run_path, select_on_path
from .tuning import CriterionInput, information_criterion, kfold_cv_select

__all__ = [
    "LassoInitializer",
    "RrrInitializer",
    "DeflationConfig",
    "deflate",
    "sequential_pursuit",
    "parallel_pursuit",
    "orthogonality_diagnostics",
]

STRATEGIES = ("sequential", "parallel")
SELECTIONS = ("gic", "aic", "bic", "cv")
CV_GRID_MAX = 50


@dataclass(frozen=True)
class LassoInitializer:
    """Pilot estimate via the entrywise lasso; lam0 None means GIC over a grid."""

    lam0: float | None = None


@dataclass(frozen=True)
class RrrInitializer:
    """Pilot estimate via reduced-rank regression; ridge None picks a default
    (0 for tall designs, ``default_rrr_ridge`` when p >= n)."""

    ridge: float | None = None


@dataclass
class DeflationConfig:
    """How to build a rank-``rank`` model out of unit-rank solves.

    ``criterion`` picks the per-layer tuning rule; None defers to the
    stagewise config's criterion (or gic for the alternating solver).
    ``initializer`` and ``s_threshold`` only apply to the parallel strategy.
    """

    strategy: str
    rank: int
    solver: object  # StagewiseConfig | AcsConfig
    initializer: object | None = None
    s_threshold: int | None = None
    parallel_layers_concurrent: bool = False
    criterion: str | None = None
    cv_folds: int = 5
    cv_seed: int = 0
    max_workers: int | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")
        if self.rank < 1:
            raise ValueError("rank must be at least 1")
        if not isinstance(self.solver, (StagewiseConfig, AcsConfig)):
            raise TypeError("solver must be a StagewiseConfig or an AcsConfig")
        if self.criterion is not None and self.criterion not in SELECTIONS:
            raise ValueError(f"criterion must be one of {SELECTIONS}")
        if self.strategy == "parallel" and self.initializer is None:
            raise ValueError("parallel pursuit needs an initializer (lasso or rrr)")
        if self.s_threshold is not None and self.s_threshold < self.rank:
            raise ValueError("s_threshold must be at least the target rank")

    def resolved_criterion(self):
        if self.criterion is not None:
            return self.criterion
        if isinstance(self.solver, StagewiseConfig) and self.solver.criterion != "none":
            return self.solver.criterion
        return "gic"


def _stagewise_grid_points(path, max_points=CV_GRID_MAX):
    """Thin a path to one snapshot per lambda level, capped at ``max_points``."""
    points = []
    for i, step in enumerate(path.steps):
        nxt = path.steps[i + 1].lam if i + 1 < len(path.steps) else None
        if nxt is None or nxt < step.lam:
            points.append((step.lam, step.factor))
    if len(points) > max_points:
        idx = np.linspace(0, len(points) - 1, max_points).round().astype(int)
        points = [points[i] for i in sorted(set(idx.tolist()))]
    return points


def _acs_select_ic(problem, pairs, criterion):
    """Information-criterion selection over (lam, factor) candidates."""
    observed = None if problem.mask is None else problem.n_observed
    best = None
    for idx, (_, fac) in enumerate(pairs):
        R = residual(problem, fac)
        rss = float(np.vdot(R, R))
        if fac.is_zero:
            df = 0
        else:
            df = int(np.count_nonzero(fac.u)) + int(np.count_nonzero(fac.v)) - 1
        if rss <= 0.0:
            val = -np.inf
        else:
            val = information_criterion(
                criterion, CriterionInput(rss, problem.n, problem.p, problem.q, df, observed)
            )
        if best is None or val < best[0]:
            best = (val, idx)
    return pairs[best[1]][1]


def _fit_unit_rank(problem, cfg):
    """One unit-rank solve with per-layer tuning; returns an L1-mode factor."""
    solver = cfg.solver
    criterion = cfg.resolved_criterion()
    if isinstance(solver, StagewiseConfig):
        if criterion == "cv":
            def fit_fn(pb):
                path = run_path(pb, solver)
                return [
                    (lam, fac.to_matrix())
                    for lam, fac in _stagewise_grid_points(path)
                ]

            sel = kfold_cv_select(problem, fit_fn, cfg.cv_folds, cfg.cv_seed)
            full = _stagewise_grid_points(run_path(problem, solver))
            lams = np.array([lam for lam, _ in full])
            return full[int(np.argmin(np.abs(lams - sel.lam)))][1]
        path = run_path(problem, solver)
        if len(path.steps) == 1 and path.steps[0].factor.is_zero:
            return path.steps[0].factor
        return select_on_path(path, criterion).factor
    grid = solver.lambda_grid
    if grid is None:
        grid = default_lambda_grid(problem)
    pairs = acs_path(problem, grid, mu=solver.mu, config=solver)
    if len(pairs) == 1:
        return pairs[0][1]
    if criterion == "cv":
        def fit_fn(pb):
            return [
                (lam, fac.to_matrix())
                for lam, fac in acs_path(pb, grid, mu=solver.mu, config=solver)
            ]

        sel = kfold_cv_select(problem, fit_fn, cfg.cv_folds, cfg.cv_seed)
        return pairs[sel.index][1]
    return _acs_select_ic(problem, pairs, criterion)


def deflate(problem, cfg):
    if cfg.strategy == "sequential":
        return sequential_pursuit(problem, cfg)
    return parallel_pursuit(problem, cfg)


def sequential_pursuit(problem, cfg):
    """Fit layers one at a time on successively deflated responses.

    Stops early (with a warning) when a layer comes back zero; the returned
    model's layers are in extraction order, re-expressed in the predictor
    metric (PORTH).
    """
    if cfg.strategy != "sequential":
        raise ValueError("config strategy is not 'sequential'")
    X = problem.X
    Yk = problem.Y.copy()
    layers = []
    for k in range(cfg.rank):
        pk = ProblemData(X, Yk, problem.mask)
        fac = _fit_unit_rank(pk, cfg)
        if fac.is_zero:
            warnings.warn(
                f"layer {k + 1} is zero; stopping at effective rank {len(layers)}",
                RuntimeWarning,
                stacklevel=2,
            )
            break
        layer = renormalize_factor(fac, NormMode.PORTH, X)
        layers.append(layer)
        Yk = Yk - X @ layer.to_matrix()
    return FactorModel(tuple(layers))


def _pilot_matrix(problem, cfg):
    init = cfg.initializer
    if isinstance(init, LassoInitializer):
        if init.lam0 is not None:
            from .baselines import lasso_cd

            return lasso_cd(problem, init.lam0)
        C, _, _ = lasso_gic_path(problem)
        return C
    if isinstance(init, RrrInitializer):
        ridge = init.ridge
        if ridge is None:
            ridge = 0.0 if problem.n > problem.p else default_rrr_ridge(problem.X)
        return fit_rrr(problem.X, problem.observed_response(), cfg.rank, ridge)
    raise TypeError("initializer must be a LassoInitializer or RrrInitializer")


def parallel_pursuit(problem, cfg):
    """Refit each pilot layer against the response minus the other layers.

    The pilot coefficient matrix is split by the predictor-metric SVD; a
    pilot of lower rank shrinks the target rank with a warning.  Layer
    subproblems are independent; ``parallel_layers_concurrent`` runs them in
    a thread pool with results identical to the serial order.
    """
    if cfg.strategy != "parallel":
        raise ValueError("config strategy is not 'parallel'")
    X = problem.X
    C_pilot = _pilot_matrix(problem, cfg)
    pilot = p_orthogonal_svd(X, C_pilot, cfg.rank)
    if pilot.rank == 0:
        # Nothing to remove from any subproblem; every layer sees the raw Y.
        warnings.warn("pilot estimate is zero; all layers fit the full response",
                      RuntimeWarning, stacklevel=2)
        mats = [np.zeros((problem.p, problem.q)) for _ in range(cfg.rank)]
    else:
        if pilot.rank < cfg.rank:
            warnings.warn(
                f"pilot rank {pilot.rank} is below the target {cfg.rank};"
                " fitting only the pilot layers",
                RuntimeWarning, stacklevel=2,
            )
        mats = [lay.to_matrix() for lay in pilot.layers]
    if cfg.s_threshold is not None:
        mats = [hard_threshold_layer(M, cfg.s_threshold) for M in mats]
    total = np.zeros((problem.p, problem.q))
    for M in mats:
        total += M
    def solve_layer(k):
        Yk = problem.Y - X @ (total - mats[k])
        return _fit_unit_rank(ProblemData(X, Yk, problem.mask), cfg)

    order = range(len(mats))
    if cfg.parallel_layers_concurrent and len(mats) > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers or len(mats)) as pool:
            fits = list(pool.map(solve_layer, order))
    else:
        fits = [solve_layer(k) for k in order]
    layers = []
    for k, fac in enumerate(fits):
        if fac.is_zero:
            warnings.warn(f"parallel layer {k + 1} refit to zero; dropping it",
                          RuntimeWarning, stacklevel=2)
            continue
        layers.append(renormalize_factor(fac, NormMode.PORTH, X))
    return FactorModel(tuple(layers))


def orthogonality_diagnostics(model, X):
    """Gram matrices of the fitted loadings in the predictor metric.

    Returns ``((XU)^T XU / n, V^T V)``; both are the identity for an exact
    predictor-metric SVD, and their off-diagonal mass measures how far a
    deflated fit drifts from orthogonality.
    """
    U = model.stacked_u()
    V = model.stacked_v()
    XU = X @ U
    return XU.T @ XU / X.shape[0], V.T @ V
