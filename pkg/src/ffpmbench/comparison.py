"""Bayesian model evidence, posterior model weights and Bayes factors.

Evidence is estimated by plain Monte Carlo over prior draws and carried in
log space throughout.  Jeffreys grades use closed upper boundaries:
``[1, 3]`` anecdotal, ``(3, 10]`` substantial, ``(10, 100]`` strong and
``> 100`` decisive; a factor below one is graded by its reciprocal in
favour of the other model.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .inference import LOG_2PI
from .params import ParameterSpace, make_rng, sample

EXP_UNDERFLOW = math.log(np.finfo(float).tiny)


class EvidenceUnderflow(FloatingPointError):
    def __init__(self, max_loglike):
        super().__init__(f"all likelihoods underflow (max log-likelihood {max_loglike})")
        self.max_loglike = max_loglike


@dataclass(frozen=True)
class EvidenceEstimate:
    log_bme: float
    std_error: float
    n: int
    max_loglike: float
    underflow: bool = False

    @property
    def bme(self) -> float:
        return math.exp(self.log_bme) if self.log_bme > EXP_UNDERFLOW else 0.0


def evidence_from_loglike(loglike) -> EvidenceEstimate:
    """Log-mean-exp of per-draw log-likelihoods with a delta-method error.

    The standard error of log-BME is ``std(w) / (sqrt(n) * mean(w))`` with
    ``w = exp(ll - max ll)``.
    """
    ll = np.asarray(loglike, dtype=float).ravel()
    n = ll.size
    if n < 1:
        raise ValueError("need at least one likelihood value")
    if np.any(np.isnan(ll)):
        raise ValueError("log-likelihood values contain NaN")
    top = float(ll.max())
    if not np.isfinite(top):
        raise EvidenceUnderflow(top)
    w = np.exp(ll - top)
    mw = float(w.mean())
    log_bme = top + math.log(mw)
    se = float(w.std() / (math.sqrt(n) * mw))
    return EvidenceEstimate(log_bme, se, n, top, log_bme < EXP_UNDERFLOW)


def _draws(prior, n: int, seed: int) -> np.ndarray:
    if isinstance(prior, ParameterSpace):
        return np.asarray(sample(prior, n, seed))
    pool = np.atleast_2d(np.asarray(prior, dtype=float))
    if pool.shape[0] == n:
        return pool
    idx = make_rng(seed, 3).integers(0, pool.shape[0], size=n)
    return pool[idx]


def estimate_bme(predictor: Callable, prior, obs, variance, n: int = 100_000,
                 seed: int = 0, batch: int = 20_000) -> EvidenceEstimate:
    """Monte-Carlo BME of observations ``obs`` under ``predictor``.

    ``prior`` is a ``ParameterSpace`` (sampled with ``seed``) or an array of
    draws (used as is when it has ``n`` rows, resampled otherwise).
    ``variance`` is the diagonal error covariance.
    """
    if n < 100:
        raise ValueError(f"need at least 100 prior draws, got {n}")
    theta = _draws(prior, n, seed)
    y = np.asarray(obs, dtype=float)
    var = np.asarray(variance, dtype=float)
    ll = np.empty(theta.shape[0])
    for s in range(0, theta.shape[0], batch):
        out = predictor(theta[s:s + batch])
        mean = out[0] if isinstance(out, tuple) else out
        r = np.atleast_2d(mean) - y
        ll[s:s + batch] = -0.5 * (y.size * LOG_2PI + np.sum(np.log(np.broadcast_to(var, y.shape)))
                                  + np.sum(r * r / var, axis=1))
    return evidence_from_loglike(ll)


def _log_values(evidences) -> np.ndarray:
    return np.array([e.log_bme if isinstance(e, EvidenceEstimate) else float(e) for e in evidences])


def model_weights(evidences: Sequence, priors=None) -> np.ndarray:
    """Posterior model probabilities from log-BMEs (or EvidenceEstimates)."""
    logz = _log_values(evidences)
    k = logz.size
    if k == 0:
        raise ValueError("no models")
    p = np.full(k, 1.0 / k) if priors is None else np.asarray(priors, dtype=float)
    if p.shape != (k,):
        raise ValueError("priors and evidences differ in length")
    if np.any(p < 0) or not math.isclose(p.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError("model priors must be non-negative and sum to one")
    with np.errstate(divide="ignore"):
        a = logz + np.log(p)
    if not np.any(np.isfinite(a)):
        raise ValueError("all evidence x prior products are zero")
    w = np.exp(a - logsumexp(a))
    return w / w.sum()


class BayesFactor(float):
    """Float carrying a flag raised when an input evidence underflowed."""

    flagged: bool = False

    def __new__(cls, value, flagged=False):
        obj = super().__new__(cls, value)
        obj.flagged = flagged
        return obj


def log_bayes_factor(ek, el) -> float:
    return float(_log_values([ek])[0] - _log_values([el])[0])


def bayes_factor(ek, el) -> BayesFactor:
    """``BME_k / BME_l`` computed from log-BMEs."""
    d = log_bayes_factor(ek, el)
    if not np.isfinite(d) and not np.isinf(d):
        raise ValueError("Bayes factor is undefined for these evidences")
    flagged = any(isinstance(e, EvidenceEstimate) and e.underflow for e in (ek, el))
    try:
        val = math.exp(d)
    except OverflowError:
        val = math.inf
    return BayesFactor(val, flagged)


def bayes_factor_matrix(evidences: Sequence) -> np.ndarray:
    """``B[k, l] = BME_k / BME_l``; exactly 1 on the diagonal."""
    logz = _log_values(evidences)
    with np.errstate(over="ignore"):
        b = np.exp(logz[:, None] - logz[None, :])
    np.fill_diagonal(b, 1.0)
    return b


GRADES = ("anecdotal", "substantial", "strong", "decisive")


@dataclass(frozen=True)
class EvidenceGrade:
    label: str
    favours_first: bool

    def __str__(self):
        return self.label if self.favours_first else f"{self.label} (for the other model)"


def classify_evidence(bf: float) -> EvidenceGrade:
    """Jeffreys grade of a Bayes factor; boundaries belong to the lower grade."""
    bf = float(bf)
    if not bf > 0:
        raise ValueError(f"Bayes factor must be positive, got {bf}")
    first = bf >= 1.0
    r = bf if first else 1.0 / bf
    if r <= 3.0:
        label = GRADES[0]
    elif r <= 10.0:
        label = GRADES[1]
    elif r <= 100.0:
        label = GRADES[2]
    else:
        label = GRADES[3]
    return EvidenceGrade(label, first)


# ---------------------------------------------------------------------------
# perturbation study
# ---------------------------------------------------------------------------


@dataclass
class ComparisonReport:
    names: list[str]
    evidences: list[EvidenceEstimate]
    weights: np.ndarray
    bayes_factors: np.ndarray
    grades: list[list[str]]
    replicate_log_bme: np.ndarray          # (M, K)
    replicate_weights: np.ndarray          # (M, K)
    degenerate: bool = False
    quantile_levels: tuple = (0.25, 0.5, 0.75)
    meta: dict = field(default_factory=dict)

    @property
    def weight_quantiles(self) -> np.ndarray:
        return np.quantile(self.replicate_weights, self.quantile_levels, axis=0)

    @property
    def replicate_log10_bf(self) -> np.ndarray:
        """(M, K, K) array of log10 Bayes factors per replicate."""
        z = self.replicate_log_bme
        return (z[:, :, None] - z[:, None, :]) / math.log(10.0)

    def median_weights(self) -> np.ndarray:
        return np.median(self.replicate_weights, axis=0)

    def write_weights_csv(self, path):
        q = self.weight_quantiles
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "log_bme", "log_bme_se", "weight", "q25", "median", "q75"])
            for k, name in enumerate(self.names):
                e = self.evidences[k]
                w.writerow([name, repr(e.log_bme), repr(e.std_error), repr(float(self.weights[k])),
                            repr(float(q[0, k])), repr(float(q[1, k])), repr(float(q[2, k]))])

    def write_bayes_factor_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model_k", "model_l", "bayes_factor", "log10_bf", "grade"])
            for k, a in enumerate(self.names):
                for l, b in enumerate(self.names):
                    bf = self.bayes_factors[k, l]
                    w.writerow([a, b, repr(float(bf)), repr(float(np.log10(bf))), self.grades[k][l]])

    def write_bf_histograms(self, path, bins: int = 40):
        """Histogram rows (model_k, model_l, bin_lo, bin_hi, count) of log10 BF."""
        lbf = self.replicate_log10_bf
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["model_k", "model_l", "bin_lo", "bin_hi", "count"])
            for k, a in enumerate(self.names):
                for l, b in enumerate(self.names):
                    if k == l:
                        continue
                    vals = lbf[:, k, l]
                    lo, hi = float(vals.min()), float(vals.max())
                    if hi == lo:
                        lo, hi = lo - 0.5, hi + 0.5
                    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
                    for c, e0, e1 in zip(counts, edges[:-1], edges[1:]):
                        w.writerow([a, b, repr(float(e0)), repr(float(e1)), int(c)])

    def to_dict(self) -> dict:
        return {
            "names": self.names,
            "log_bme": [e.log_bme for e in self.evidences],
            "log_bme_se": [e.std_error for e in self.evidences],
            "weights": self.weights.tolist(),
            "weight_quantiles": self.weight_quantiles.tolist(),
            "median_weights": self.median_weights().tolist(),
            "degenerate": self.degenerate,
            "replicates": int(self.replicate_weights.shape[0]),
            **self.meta,
        }


def _replicate_loglike(pred, var, y_reps):
    """Log-likelihoods of every prior draw against every replicate, (M, n)."""
    inv = 1.0 / var
    const = -0.5 * (pred.shape[1] * LOG_2PI + np.sum(np.log(var)))
    quad_p = np.einsum("ij,ij->i", pred * inv, pred)
    cross = y_reps @ (pred * inv).T
    quad_y = np.einsum("mj,mj->m", y_reps * inv, y_reps)
    return const - 0.5 * (quad_p[None, :] - 2.0 * cross + quad_y[:, None])


def perturb_and_compare(predictions: Sequence, obs, variances: Sequence, noise_scale,
                        replicates: int = 1000, seed: int = 0, names=None, priors=None,
                        chunk: int = 50) -> ComparisonReport:
    """Evidence comparison over ``replicates`` noisy copies of the observations.

    ``predictions[k]`` is an ``(n_k, N)`` array of prior-predictive outputs
    for model ``k`` (the same draws are reused for every replicate);
    ``variances[k]`` its diagonal covariance.  ``noise_scale`` is the
    standard deviation of the additive perturbation per output.  ``obs``
    may be a single vector or one row per model (models compared against
    differently averaged data); each replicate adds the same noise draw to
    every row.
    """
    k = len(predictions)
    obs = np.asarray(obs, dtype=float)
    if obs.ndim == 2:
        if obs.shape[0] != k:
            raise ValueError(f"{obs.shape[0]} observation rows for {k} models")
        rows = obs
    else:
        rows = np.broadcast_to(obs, (k, obs.size))
    y = rows[0]
    names = list(names) if names is not None else [f"model{i}" for i in range(k)]
    if replicates < 1:
        raise ValueError("need at least one replicate")
    scale = np.broadcast_to(np.asarray(noise_scale, dtype=float), y.shape)
    if np.any(scale < 0):
        raise ValueError("noise scales must be non-negative")
    degenerate = bool(np.all(scale == 0) and replicates > 1)
    if degenerate:
        warnings.warn("zero perturbation noise with several replicates: all replicates are identical")
    preds = [np.atleast_2d(np.asarray(p, dtype=float)) for p in predictions]
    vars_ = [np.broadcast_to(np.asarray(v, dtype=float), y.shape) for v in variances]
    for p, v in zip(preds, vars_):
        if p.shape[1] != y.size:
            raise ValueError(f"prediction layout {p.shape} does not match {y.size} observations")
        if np.any(~(v > 0)):
            raise ValueError("covariance diagonal must be strictly positive")

    evid = [evidence_from_loglike(_replicate_loglike(p, v, r[None, :])[0])
            for p, v, r in zip(preds, vars_, rows)]
    weights = model_weights(evid, priors)
    bf = bayes_factor_matrix(evid)
    grades = [[str(classify_evidence(bf[i, j])) if np.isfinite(bf[i, j]) and bf[i, j] > 0 else "decisive"
               for j in range(k)] for i in range(k)]

    if replicates == 1 and np.all(scale == 0):
        noise = np.zeros((1, y.size))
    else:
        noise = scale * make_rng(seed, 4).standard_normal((replicates, y.size))
    rep_logz = np.empty((noise.shape[0], k))
    for j, (p, v, r) in enumerate(zip(preds, vars_, rows)):
        y_reps = r + noise
        for s in range(0, y_reps.shape[0], chunk):
            ll = _replicate_loglike(p, v, y_reps[s:s + chunk])
            top = ll.max(axis=1, keepdims=True)
            rep_logz[s:s + chunk, j] = top[:, 0] + np.log(np.mean(np.exp(ll - top), axis=1))
    rep_w = np.array([model_weights(z, priors) for z in rep_logz])
    return ComparisonReport(names, evid, weights, bf, grades, rep_logz, rep_w, degenerate)
