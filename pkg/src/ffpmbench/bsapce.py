"""Bayesian sparse aPCE: sparse Bayesian learning on a polynomial chaos basis.

Terms are selected by the fast sequential marginal-likelihood algorithm
(add / re-estimate / delete one basis function per step) with the noise
precision re-estimated after every action.  Each output coordinate gets
its own independent fit.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .apce import TensorBasis
from .params import ParameterSpace, SampleMatrix, sample

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class SparseFitError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SparseFit:
    """Posterior ``N(mean, cov)`` over the active expansion coefficients."""

    active: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    beta: float
    alphas: np.ndarray
    log_ml_trace: np.ndarray
    n_terms: int
    intercept_only: bool = False
    excluded: tuple[int, ...] = ()

    def coefficients(self) -> np.ndarray:
        """Posterior mean over the full candidate set (zeros for pruned terms)."""
        c = np.zeros(self.n_terms)
        c[self.active] = self.mean
        return c

    def predict(self, psi) -> tuple[np.ndarray, np.ndarray]:
        """Predictive mean and variance for design rows ``psi``."""
        psi_a = np.atleast_2d(psi)[:, self.active]
        mean = psi_a @ self.mean
        var = 1.0 / self.beta + np.einsum("ij,jk,ik->i", psi_a, self.cov, psi_a)
        return mean, var

    def to_dict(self) -> dict:
        return {
            "active": self.active.tolist(),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "beta": float(self.beta),
            "alphas": self.alphas.tolist(),
            "log_ml_trace": self.log_ml_trace.tolist(),
            "n_terms": int(self.n_terms),
            "intercept_only": bool(self.intercept_only),
            "excluded": list(self.excluded),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparseFit":
        m = len(d["active"])
        return cls(
            np.array(d["active"], dtype=np.int64),
            np.array(d["mean"], dtype=float),
            np.array(d["cov"], dtype=float).reshape(m, m),
            float(d["beta"]),
            np.array(d["alphas"], dtype=float),
            np.array(d["log_ml_trace"], dtype=float),
            int(d["n_terms"]),
            bool(d["intercept_only"]),
            tuple(d["excluded"]),
        )


def _posterior(phi_a, t, alphas, beta):
    """Cholesky factor of Sigma^-1, posterior mean, residual and log evidence."""
    e = phi_a.shape[0]
    sinv = beta * (phi_a.T @ phi_a)
    sinv[np.diag_indices_from(sinv)] += alphas
    try:
        chol = linalg.cholesky(sinv, lower=True)
    except linalg.LinAlgError as err:
        raise SparseFitError(f"posterior precision is not positive definite: {err}") from None
    mu = linalg.cho_solve((chol, True), beta * (phi_a.T @ t))
    r = t - phi_a @ mu
    logdet_sinv = 2.0 * np.sum(np.log(np.diag(chol)))
    log_ml = -0.5 * (
        e * LOG_2PI - e * math.log(beta) - np.sum(np.log(alphas)) + logdet_sinv
        + beta * (r @ r) + np.sum(alphas * mu**2)
    )
    return chol, mu, r, log_ml


def _ell(alpha, s, q):
    """Per-term marginal-likelihood contribution (zero for a pruned term)."""
    return 0.5 * (np.log(alpha) - np.log(alpha + s) + q**2 / (alpha + s))


def fit_sparse(design, y, *, tol: float = 1e-6, max_actions: int = 1000,
               noise_floor: float = 1e-12) -> SparseFit:
    """Sparse Bayesian regression of ``y`` on the columns of ``design``.

    Parameters
    ----------
    design : (E, P) array
        Design matrix; column 0 is taken as the intercept when it is constant.
    y : (E,) array
        Responses.
    tol : float
        Stop when the best single action improves the log evidence by less
        than ``tol * max(1, |L - L_start|)``.
    max_actions : int
        Cap on the number of add/re-estimate/delete actions.
    noise_floor : float
        Lower bound on the noise variance relative to the response scale;
        keeps exactly-representable data well posed.
    """
    phi = np.asarray(design, dtype=float)
    t = np.asarray(y, dtype=float).ravel()
    if phi.ndim != 2 or phi.shape[0] != t.size:
        raise ValueError(f"design {phi.shape} does not match {t.size} responses")
    e, p = phi.shape
    if e < 3:
        raise ValueError(f"need at least 3 evaluations, got {e}")
    if not np.all(np.isfinite(t)) or not np.all(np.isfinite(phi)):
        raise ValueError("design and responses must be finite")

    norms = np.einsum("ij,ij->j", phi, phi)
    excluded = tuple(int(i) for i in np.flatnonzero(norms == 0.0))
    if len(excluded) == p:
        raise ValueError("all design columns are zero")
    if excluded:
        log.info("excluding zero-norm design columns %s", excluded)
    usable = norms > 0.0

    ref = float(np.var(t))
    if ref == 0.0:
        ref = float(np.mean(t**2)) or 1.0
    beta_max = 1.0 / (noise_floor * ref)
    intercept = 0 if usable[0] and np.ptp(phi[:, 0]) == 0.0 else None

    if np.ptp(t) == 0.0 and intercept is not None:
        return _constant_fit(phi, t, intercept, beta_max, p, excluded)

    beta = min(1.0 / (0.1 * ref), beta_max)
    # start from the intercept when it beats the initial noise level,
    # otherwise from the best single column
    proj = np.where(usable, (phi.T @ t) ** 2 / np.where(usable, norms, 1.0), -np.inf)
    if intercept is not None and proj[intercept] > 1.0 / beta:
        first = intercept
    else:
        first = int(np.argmax(proj))
    gain0 = proj[first] - 1.0 / beta
    if not gain0 > 0.0:
        warnings.warn("no basis term improves the marginal likelihood; returning intercept-only fit")
        col = intercept if intercept is not None else first
        return _flagged_fit(phi, t, col, beta, beta_max, p, excluded)

    active = [first]
    alphas = np.array([norms[first] / gain0])
    chol, mu, r, log_ml = _posterior(phi[:, active], t, alphas, beta)
    trace = [log_ml]
    start = log_ml

    for _ in range(max_actions):
        # sparsity / quality factors
        a_idx = np.array(active)
        phi_a = phi[:, a_idx]
        w = linalg.solve_triangular(chol, beta * (phi_a.T @ phi), lower=True)
        S = beta * norms - np.einsum("ij,ij->j", w, w)
        Q = beta * (phi.T @ r)
        s, q = S.copy(), Q.copy()
        sigma_diag = np.einsum("ij,ij->j", *(2 * [linalg.solve_triangular(chol, np.eye(len(active)), lower=True)]))
        s[a_idx] = 1.0 / sigma_diag - alphas
        q[a_idx] = mu / sigma_diag
        theta = q**2 - s

        is_active = np.zeros(p, dtype=bool)
        is_active[a_idx] = True
        pos = {j: k for k, j in enumerate(active)}
        gain = np.full(p, -np.inf)
        new_alpha = np.full(p, np.inf)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = usable & (theta > 0) & (s > 0)
            new_alpha[cand] = s[cand] ** 2 / theta[cand]
            add = cand & ~is_active
            gain[add] = _ell(new_alpha[add], s[add], q[add])
            rest = cand & is_active
            old = np.array([alphas[pos[j]] for j in np.flatnonzero(rest)])
            if old.size:
                gain[rest] = _ell(new_alpha[rest], s[rest], q[rest]) - _ell(old, s[rest], q[rest])
            drop = is_active & ~cand
            if len(active) > 1 and drop.any():
                old = np.array([alphas[pos[j]] for j in np.flatnonzero(drop)])
                gain[drop] = -_ell(old, s[drop], q[drop])
        gain[~np.isfinite(gain)] = -np.inf

        best = int(np.argmax(gain))
        threshold = tol * max(1.0, abs(log_ml - start))
        acted = False
        if gain[best] > threshold:
            trial_active = list(active)
            trial_alphas = alphas.copy()
            if is_active[best] and not cand[best]:
                k = pos[best]
                del trial_active[k]
                trial_alphas = np.delete(trial_alphas, k)
            elif is_active[best]:
                trial_alphas[pos[best]] = new_alpha[best]
            else:
                trial_active.append(best)
                trial_alphas = np.append(trial_alphas, new_alpha[best])
            t_chol, t_mu, t_r, t_ml = _posterior(phi[:, trial_active], t, trial_alphas, beta)
            if t_ml >= log_ml - 1e-12 * max(1.0, abs(log_ml)):
                active, alphas = trial_active, trial_alphas
                chol, mu, r, log_ml = t_chol, t_mu, t_r, max(t_ml, log_ml)
                trace.append(log_ml)
                acted = True

        # noise precision, kept only when the evidence does not drop
        sigma_diag = np.einsum("ij,ij->j", *(2 * [linalg.solve_triangular(chol, np.eye(len(active)), lower=True)]))
        gamma = 1.0 - alphas * sigma_diag
        rr = r @ r
        beta_new = beta_max if rr == 0.0 else min((e - gamma.sum()) / rr, beta_max)
        beta_moved = False
        if beta_new > 0 and beta_new != beta:
            b_chol, b_mu, b_r, b_ml = _posterior(phi[:, active], t, alphas, beta_new)
            if b_ml > log_ml:
                moved = b_ml - log_ml
                beta, chol, mu, r, log_ml = beta_new, b_chol, b_mu, b_r, b_ml
                trace.append(log_ml)
                beta_moved = moved > threshold
        if not acted and not beta_moved:
            break
    else:
        log.info("fit_sparse stopped at the action cap (%d)", max_actions)

    order = np.argsort(active)
    active_arr = np.array(active, dtype=np.int64)[order]
    cov = linalg.cho_solve((chol, True), np.eye(len(active)))
    cov = 0.5 * (cov + cov.T)
    return SparseFit(
        active_arr, mu[order], cov[np.ix_(order, order)], float(beta), alphas[order],
        np.array(trace), p, False, excluded,
    )


def _constant_fit(phi, t, col, beta, p, excluded):
    c = t[0] / phi[0, col]
    alpha = 1.0 / max(c * c, 1e-300)
    cov = np.array([[1.0 / (alpha + beta * phi[:, col] @ phi[:, col])]])
    return SparseFit(np.array([col]), np.array([c]), cov, float(beta), np.array([alpha]),
                     np.array([np.nan]), p, True, excluded)


def _flagged_fit(phi, t, col, beta, beta_max, p, excluded):
    alpha = np.array([1.0 / max(float(np.var(t)), 1e-300)])
    phi_a = phi[:, [col]]
    for _ in range(100):
        chol, mu, r, log_ml = _posterior(phi_a, t, alpha, beta)
        sigma = 1.0 / chol[0, 0] ** 2
        gamma = 1.0 - alpha[0] * sigma
        new = min((t.size - gamma) / max(r @ r, 1e-300), beta_max)
        if abs(new - beta) <= 1e-12 * beta:
            break
        beta = new
    chol, mu, r, log_ml = _posterior(phi_a, t, alpha, beta)
    cov = np.array([[1.0 / chol[0, 0] ** 2]])
    return SparseFit(np.array([col]), mu, cov, float(beta), alpha, np.array([log_ml]), p, True, excluded)


# ---------------------------------------------------------------------------
# surrogate model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class SurrogateModel:
    """Per-output sparse PCE surrogate of a forward model."""

    space: ParameterSpace
    basis: TensorBasis
    fits: list[SparseFit]
    output_names: list[str] = field(default_factory=list)
    mse: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n_outputs(self) -> int:
        return len(self.fits)

    def predict(self, theta) -> tuple[np.ndarray, np.ndarray]:
        """Mean and variance per output; shapes ``(n, n_outputs)``."""
        return predict(self, theta)

    def __call__(self, theta) -> tuple[np.ndarray, np.ndarray]:
        return predict(self, theta)

    def to_dict(self) -> dict:
        return {
            "format": "ffpmbench.surrogate/1",
            "space": self.space.to_list(),
            "basis": self.basis.to_dict(),
            "fits": [f.to_dict() for f in self.fits],
            "output_names": list(self.output_names),
            "mse": None if self.mse is None else [float(v) for v in self.mse],
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        if d.get("format") != "ffpmbench.surrogate/1":
            raise ValueError(f"unknown surrogate format {d.get('format')!r}")
        return cls(
            ParameterSpace.from_list(d["space"]),
            TensorBasis.from_dict(d["basis"]),
            [SparseFit.from_dict(f) for f in d["fits"]],
            list(d["output_names"]),
            None if d["mse"] is None else np.array(d["mse"], dtype=float),
            dict(d.get("provenance", {})),
        )

    def content_hash(self) -> str:
        body = self.to_dict()
        body["provenance"] = {k: v for k, v in body["provenance"].items() if k != "content_hash"}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> str:
        self.provenance["content_hash"] = self.content_hash()
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, sort_keys=True)
        return self.provenance["content_hash"]

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def predict(model: SurrogateModel, theta) -> tuple[np.ndarray, np.ndarray]:
    x = np.atleast_2d(np.asarray(theta, dtype=float))
    if x.shape[1] != model.space.dim:
        raise ValueError(f"expected {model.space.dim} parameters, got {x.shape[1]}")
    psi = model.basis.design(x)
    mean = np.empty((x.shape[0], model.n_outputs))
    var = np.empty_like(mean)
    for k, fit in enumerate(model.fits):
        mean[:, k], var[:, k] = fit.predict(psi)
    return mean, var


def fit_outputs(basis: TensorBasis, x, y, jobs: int = 1, **kw) -> list[SparseFit]:
    """One independent sparse fit per column of ``y``."""
    psi = basis.design(x)
    y = np.asarray(y, dtype=float).reshape(psi.shape[0], -1)
    if jobs > 1 and y.shape[1] > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(jobs) as pool:
            return list(pool.map(_fit_column, [(psi, y[:, k], kw) for k in range(y.shape[1])]))
    return [fit_sparse(psi, y[:, k], **kw) for k in range(y.shape[1])]


def _fit_column(args):
    psi, col, kw = args
    return fit_sparse(psi, col, **kw)


def train_surrogate(space: ParameterSpace, x, y, degree: int = 5, output_names=None,
                    jobs: int = 1, **kw) -> SurrogateModel:
    seed = getattr(x, "seed", None)
    x = np.asarray(x, dtype=float)
    basis = TensorBasis.build(space, degree)
    if x.shape[0] < len(basis):
        warnings.warn(
            f"{x.shape[0]} training runs for {len(basis)} candidate terms; relying on sparsity"
        )
    fits = fit_outputs(basis, x, y, jobs=jobs, **kw)
    names = list(output_names) if output_names is not None else [f"y{k}" for k in range(len(fits))]
    prov = {"train_seed": seed, "n_train": int(x.shape[0]), "degree": degree}
    return SurrogateModel(space, basis, fits, names, None, prov)


@dataclass(frozen=True)
class ValidationResult:
    mse: np.ndarray
    rel_l2: np.ndarray


def validate(model: SurrogateModel, test_x, test_y) -> ValidationResult:
    """Test-set MSE and relative L2 error per output; MSE is stored on the model."""
    test_seed = getattr(test_x, "seed", None)
    test_x = np.atleast_2d(np.asarray(test_x, dtype=float))
    test_y = np.asarray(test_y, dtype=float).reshape(test_x.shape[0], -1)
    if test_x.shape[0] == 0:
        raise ValueError("empty test set")
    train_seed = model.provenance.get("train_seed")
    if train_seed is not None and test_seed is not None and train_seed == test_seed:
        raise ValueError("test samples share the training seed")
    mean, _ = predict(model, test_x)
    err = mean - test_y
    mse = np.mean(err**2, axis=0)
    norm = np.sqrt(np.sum(test_y**2, axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(norm > 0, np.sqrt(np.sum(err**2, axis=0)) / norm, np.sqrt(mse))
    model.mse = mse
    if test_seed is not None:
        model.provenance["test_seed"] = test_seed
    model.provenance["n_test"] = int(test_x.shape[0])
    return ValidationResult(mse, rel)


def build_surrogate(space: ParameterSpace, forward: Callable, n_train: int = 300,
                    n_test: int = 150, degree: int = 5, seed: int = 0, output_names=None,
                    jobs: int = 1, **kw) -> tuple[SurrogateModel, ValidationResult]:
    """Sample, evaluate ``forward`` (batch ``(n, dim) -> (n, n_out)``), fit and test."""
    x_train = sample(space, n_train, seed)
    x_test = sample(space, n_test, seed + 1)
    y_train = np.asarray(forward(np.asarray(x_train)), dtype=float)
    y_test = np.asarray(forward(np.asarray(x_test)), dtype=float)
    model = train_surrogate(space, x_train, y_train, degree, output_names, jobs=jobs, **kw)
    return model, validate(model, x_test, y_test)
