"""Model selection utilities: information criteria, early stopping, CV.

The default criterion trades fit against a degrees-of-freedom count
``df = ||u||_0 + ||v||_0 - 1`` for a unit-rank layer:

    gic = log(rss) + loglog(N) * log(p*q) / N * df

with ``N`` the number of observed response entries (``n*q`` when fully
observed).  AIC and BIC use the usual Gaussian profile forms on the same
``N``.  All logs are natural.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .core import ProblemData

__all__ = [
    "CriterionInput",
    "information_criterion",
    "early_stop_check",
    "kfold_cv_select",
    "CvSelection",
]

CRITERIA = ("gic", "aic", "bic")


@dataclass(frozen=True)
class CriterionInput:
    """Inputs for an information criterion.

    ``observed`` is the count of observed response entries; None means the
    fully observed ``n * q``.  For partially observed problems pass
    ``mask.sum()`` -- the criterion substitutes it for ``n * q``.
    """

    rss: float
    n: int
    p: int
    q: int
    df: int
    observed: int | None = None

    @property
    def n_effective(self):
        return self.n * self.q if self.observed is None else self.observed


def information_criterion(kind, inp):
    """Evaluate gic / aic / bic for one candidate model."""
    kind = kind.lower()
    if kind not in CRITERIA:
        raise ValueError(f"unknown criterion {kind!r}; expected one of {CRITERIA}")
    if inp.rss <= 0.0:
        raise ValueError("rss must be positive; the criterion is undefined at a perfect fit")
    if inp.df < 0:
        raise ValueError("df must be nonnegative")
    N = inp.n_effective
    if kind == "gic":
        if N < 3:
            raise ValueError("gic needs at least 3 observed entries (loglog)")
        return math.log(inp.rss) + math.log(math.log(N)) * math.log(inp.p * inp.q) / N * inp.df
    if kind == "aic":
        return N * math.log(inp.rss / N) + 2.0 * inp.df
    return N * math.log(inp.rss / N) + math.log(N) * inp.df


def early_stop_check(history, window):
    """True when the running minimum has not improved in the last ``window`` entries.

    ``history`` is the criterion value per step, in step order.  Entries that
    are None or non-finite never count as improvements.
    """
    if window < 1:
        raise ValueError("window must be a positive integer")
    best = math.inf
    last_improve = 0
    count = 0
    for idx, val in enumerate(history):
        count = idx + 1
        if val is None:
            continue
        val = float(val)
        if math.isfinite(val) and val < best:
            best = val
            last_improve = idx
    if count == 0:
        return False
    return (count - 1) - last_improve >= window


class CvSelection(NamedTuple):
    index: int
    lam: float
    cv_errors: np.ndarray


def _fold_indices(n, folds, seed):
    if folds < 2 or folds > n:
        raise ValueError(f"folds must be in [2, n]; got {folds} with n={n}")
    order = np.random.default_rng(seed).permutation(n)
    parts = np.array_split(order, folds)
    for part in parts:
        if part.size == 0:
            raise ValueError("a fold came out empty; reduce the number of folds")
    return parts


def kfold_cv_select(problem, fit_fn, folds=5, seed=0):
    """Pick a path point by row-wise K-fold cross-validation.

    ``fit_fn(problem)`` must return a list of ``(lam, C)`` pairs with ``lam``
    nonincreasing -- a solution path.  The full-data path fixes the lambda
    grid; each fold's path is aligned to it by nearest lambda (earlier point
    on ties).  Held-out error for a candidate C is
    ``||P(Y_test - X_test C)||_F^2 / (2 * n_test)`` summed over observed
    entries, averaged across folds.  Returns the argmin grid point (first on
    ties) with the per-point mean errors.
    """
    full_path = list(fit_fn(problem))
    if not full_path:
        raise ValueError("fit_fn returned an empty path")
    grid = np.array([lam for lam, _ in full_path], dtype=float)
    parts = _fold_indices(problem.n, folds, seed)
    all_rows = np.arange(problem.n)
    errors = np.zeros((len(parts), grid.size))
    for f, test_rows in enumerate(parts):
        train_rows = np.setdiff1d(all_rows, test_rows)
        tr_mask = None if problem.mask is None else problem.mask[train_rows]
        te_mask = None if problem.mask is None else problem.mask[test_rows]
        train = ProblemData(problem.X[train_rows], problem.Y[train_rows], tr_mask)
        fold_path = list(fit_fn(train))
        if not fold_path:
            raise ValueError("fit_fn returned an empty path on a training fold")
        fold_lams = np.array([lam for lam, _ in fold_path], dtype=float)
        Xte = problem.X[test_rows]
        Yte = problem.Y[test_rows]
        if te_mask is not None:
            Yte = np.where(te_mask, Yte, 0.0)
        n_te = test_rows.size
        for g, lam in enumerate(grid):
            j = int(np.argmin(np.abs(fold_lams - lam)))
            C = fold_path[j][1]
            R = Yte - Xte @ C
            if te_mask is not None:
                R = np.where(te_mask, R, 0.0)
            errors[f, g] = float(np.vdot(R, R)) / (2.0 * n_te)
    mean_err = errors.mean(axis=0)
    best = int(np.argmin(mean_err))
    return CvSelection(best, float(grid[best]), mean_err)
