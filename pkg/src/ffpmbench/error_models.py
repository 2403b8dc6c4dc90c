"""Discretization error by Richardson extrapolation and error-budget aggregation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

VELOCITY = "velocity"
PRESSURE = "pressure"
KINDS = (VELOCITY, PRESSURE)


@dataclass(frozen=True)
class RichardsonFit:
    """Least-squares fit of ``f_k = f_bar + e_p * h_k**p_hat``.

    ``f_bar`` and ``e_p`` are scalars for a single output or arrays with
    one entry per output.
    """

    f_bar: np.ndarray
    e_p: np.ndarray
    p_hat: float
    h: np.ndarray
    errors: np.ndarray
    residual: np.ndarray

    @property
    def numerical_variance(self) -> np.ndarray:
        """``(f_finest - f_bar)**2`` per output."""
        return self.errors[int(np.argmin(self.h))] ** 2


def richardson_fit(h, f, p_hat: float) -> RichardsonFit:
    """Extrapolate mesh-dependent values ``f`` (levels x outputs) to ``h -> 0``."""
    h = np.asarray(h, dtype=float).ravel()
    f = np.asarray(f, dtype=float)
    scalar = f.ndim == 1
    f2 = f.reshape(h.size, -1)
    if h.size < 3:
        raise ValueError(f"need at least 3 mesh levels, got {h.size}")
    if not p_hat >= 1:
        raise ValueError(f"assumed order must be >= 1, got {p_hat}")
    if np.any(h <= 0):
        raise ValueError("mesh spacings must be positive")
    if np.unique(h).size < 3:
        raise ValueError("rank-deficient Richardson system: fewer than 3 distinct spacings")
    if not np.all(np.isfinite(f2)):
        raise ValueError("solution values must be finite")
    # scaled column keeps the 2x2 normal system well conditioned for tiny h
    hs = h / h.max()
    a = np.column_stack([np.ones_like(hs), hs**p_hat])
    coef, *_ = np.linalg.lstsq(a, f2, rcond=None)
    f_bar = coef[0]
    e_p = coef[1] / h.max() ** p_hat
    res = np.linalg.norm(f2 - a @ coef, axis=0)
    errors = np.abs(f2 - f_bar)
    if scalar:
        return RichardsonFit(f_bar[0], e_p[0], float(p_hat), h, errors[:, 0], res[0])
    return RichardsonFit(f_bar, e_p, float(p_hat), h, errors, res)


def observed_order(h, f, bounds=(0.25, 8.0)) -> tuple[float, RichardsonFit]:
    """Order ``p`` minimizing the Richardson least-squares residual.

    For three levels with a constant refinement ratio ``r`` this is the
    classical ``ln((f1-f2)/(f2-f3)) / ln r``; otherwise a bounded scalar
    search over ``p``.
    """
    h = np.asarray(h, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    order = np.argsort(h)[::-1]
    h, f = h[order], f[order]
    if h.size == 3:
        r1, r2 = h[0] / h[1], h[1] / h[2]
        d1, d2 = f[0] - f[1], f[1] - f[2]
        if np.isclose(r1, r2, rtol=1e-12) and d1 * d2 > 0:
            p = float(np.log(d1 / d2) / np.log(r1))
            return p, richardson_fit(h, f, max(p, 1.0))
    obj = lambda p: float(richardson_fit(h, f, p).residual)
    res = optimize.minimize_scalar(obj, bounds=(max(bounds[0], 1.0), bounds[1]), method="bounded",
                                   options={"xatol": 1e-10})
    return float(res.x), richardson_fit(h, f, float(res.x))


@dataclass
class ErrorBudget:
    """All error sources entering the diagonal likelihood covariance.

    ``kinds`` labels each output as velocity or pressure; ``discrepancy``
    maps a kind to its model-discrepancy variance.
    """

    kinds: list[str]
    discrepancy: dict = field(default_factory=lambda: {VELOCITY: 0.0, PRESSURE: 0.0})
    numerical: np.ndarray | float = 0.0
    mse: np.ndarray | float = 0.0

    def to_dict(self) -> dict:
        return {
            "kinds": list(self.kinds),
            "discrepancy": {k: float(v) for k, v in self.discrepancy.items()},
            "numerical": np.broadcast_to(self.numerical, len(self.kinds)).tolist(),
            "mse": np.broadcast_to(self.mse, len(self.kinds)).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ErrorBudget":
        return cls(list(d["kinds"]), dict(d["discrepancy"]), np.array(d["numerical"]), np.array(d["mse"]))


def _vector(value, n, name):
    v = np.asarray(value, dtype=float)
    if v.ndim == 0:
        v = np.full(n, float(v))
    if v.shape != (n,):
        raise ValueError(f"{name} has shape {v.shape}, layout has {n} outputs")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} entries must be finite and non-negative")
    return v


def discrepancy_vector(kinds, discrepancy: dict) -> np.ndarray:
    kinds = list(kinds)
    for k in set(kinds):
        if k not in discrepancy:
            raise ValueError(f"no discrepancy variance for output kind {k!r}")
    out = np.array([float(discrepancy[k]) for k in kinds])
    if np.any(out < 0) or not np.all(np.isfinite(out)):
        raise ValueError("discrepancy variances must be finite and non-negative")
    return out


def aggregate_covariance(budget: ErrorBudget, kinds=None) -> np.ndarray:
    """Diagonal of the residual covariance: discrepancy + numerical + surrogate MSE."""
    kinds = list(budget.kinds if kinds is None else kinds)
    n = len(kinds)
    if n != len(budget.kinds) or list(budget.kinds) != kinds:
        raise ValueError("budget layout does not match the requested output layout")
    return (discrepancy_vector(kinds, budget.discrepancy)
            + _vector(budget.numerical, n, "numerical error variance")
            + _vector(budget.mse, n, "surrogate MSE"))
