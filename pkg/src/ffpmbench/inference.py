"""Gaussian likelihood, affine-invariant ensemble MCMC and posterior predictives.

The joint parameter vector is ``(model parameters..., sigma2_vel, sigma2_p)``:
the two trailing entries are per-SRQ-kind model-discrepancy variances added
to the diagonal error covariance.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .error_models import PRESSURE, VELOCITY, ErrorBudget
from .params import MarginalDistribution, ParameterSpace, make_rng, sample

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
CALIBRATION = "calibration"
VALIDATION = "validation"
DISCREPANCY_NAMES = ("sigma2_vel", "sigma2_p")


class SamplerError(RuntimeError):
    pass


class AutocorrError(ValueError):
    pass


# ---------------------------------------------------------------------------
# observations and likelihood
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Reference SRQ values at tagged extraction points."""

    ids: tuple[str, ...]
    positions: np.ndarray
    kinds: tuple[str, ...]
    groups: tuple[str, ...]
    values: np.ndarray
    noise_scale: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "positions", np.asarray(self.positions, dtype=float).reshape(n, -1))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(n))
        if len(self.kinds) != n or len(self.groups) != n:
            raise ValueError("ids, kinds and groups must have equal length")
        if len(set(self.ids)) != n:
            raise ValueError("observation ids must be unique")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("observation values must be finite")
        bad = [k for k in self.kinds if k not in (VELOCITY, PRESSURE)]
        if bad:
            raise ValueError(f"unknown SRQ kind {bad[0]!r}")
        bad = [g for g in self.groups if g not in (CALIBRATION, VALIDATION)]
        if bad:
            raise ValueError(f"unknown observation group {bad[0]!r}")
        if self.noise_scale is not None:
            object.__setattr__(self, "noise_scale", np.asarray(self.noise_scale, dtype=float).reshape(n))

    def __len__(self):
        return len(self.ids)

    def mask(self, group: str | None = None, kind: str | None = None) -> np.ndarray:
        m = np.ones(len(self), dtype=bool)
        if group is not None:
            m &= np.array([g == group for g in self.groups])
        if kind is not None:
            m &= np.array([k == kind for k in self.kinds])
        return m

    def subset(self, group: str | None = None, kind: str | None = None) -> "ObservationSet":
        m = self.mask(group, kind)
        idx = np.flatnonzero(m)
        return ObservationSet(
            tuple(self.ids[i] for i in idx), self.positions[m], tuple(self.kinds[i] for i in idx),
            tuple(self.groups[i] for i in idx), self.values[m],
            None if self.noise_scale is None else self.noise_scale[m],
        )

    def with_values(self, values) -> "ObservationSet":
        return ObservationSet(self.ids, self.positions, self.kinds, self.groups, values, self.noise_scale)

    def to_dict(self) -> dict:
        return {
            "ids": list(self.ids),
            "positions": self.positions.tolist(),
            "kinds": list(self.kinds),
            "groups": list(self.groups),
            "values": self.values.tolist(),
            "noise_scale": None if self.noise_scale is None else self.noise_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationSet":
        return cls(tuple(d["ids"]), np.array(d["positions"], dtype=float), tuple(d["kinds"]),
                   tuple(d["groups"]), np.array(d["values"], dtype=float),
                   None if d.get("noise_scale") is None else np.array(d["noise_scale"]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "x", "y", "kind", "group", "value"])
            for i in range(len(self)):
                x, y = self.positions[i, :2]
                w.writerow([self.ids[i], repr(float(x)), repr(float(y)), self.kinds[i], self.groups[i],
                            repr(float(self.values[i]))])


def log_likelihood(prediction, obs, variance) -> np.ndarray | float:
    """Gaussian log-likelihood with diagonal covariance.

    ``prediction`` may carry leading batch axes; the last axis runs over
    outputs.  ``variance`` broadcasts against it.
    """
    pred = np.asarray(prediction, dtype=float)
    y = np.asarray(obs, dtype=float)
    var = np.asarray(variance, dtype=float)
    if pred.shape[-1] != y.shape[-1]:
        raise ValueError(f"prediction has {pred.shape[-1]} outputs, observations {y.shape[-1]}")
    var = np.broadcast_to(var, np.broadcast_shapes(var.shape, pred.shape))
    if np.any(~(var > 0)):
        raise ValueError("covariance diagonal must be strictly positive")
    r = pred - y
    n = y.shape[-1]
    out = -0.5 * (n * LOG_2PI + np.sum(np.log(var), axis=-1) + np.sum(r * r / var, axis=-1))
    return float(out) if np.ndim(out) == 0 else out


def discrepancy_space(vel_max: float = 1e-5, p_max: float = 1e-3) -> ParameterSpace:
    return ParameterSpace((
        MarginalDistribution.uniform(DISCREPANCY_NAMES[0], 0.0, vel_max, "m^2/s^2"),
        MarginalDistribution.uniform(DISCREPANCY_NAMES[1], 0.0, p_max, "Pa^2"),
    ))


def _call_predictor(predictor, theta):
    out = predictor(theta)
    if isinstance(out, tuple):
        mean, var = out
        return np.atleast_2d(mean), np.atleast_2d(var)
    return np.atleast_2d(out), None


@dataclass
class LikelihoodSpec:
    """Vectorized log-likelihood over joint ``(theta, sigma2_vel, sigma2_p)`` rows.

    ``predictor`` maps an ``(n, d)`` block of model parameters to either an
    ``(n, N)`` prediction or a ``(mean, variance)`` pair laid out like
    ``obs``.  The covariance diagonal is discrepancy (per kind) plus the
    budget's numerical variance and surrogate MSE.
    """

    predictor: Callable
    obs: ObservationSet
    budget: ErrorBudget | None = None
    n_model: int | None = None

    def __post_init__(self):
        if self.budget is None:
            self.budget = ErrorBudget(list(self.obs.kinds))
        if list(self.budget.kinds) != list(self.obs.kinds):
            raise ValueError("error budget layout does not match the observation layout")
        n = len(self.obs)
        self._fixed = (np.broadcast_to(np.asarray(self.budget.numerical, dtype=float), n)
                       + np.broadcast_to(np.asarray(self.budget.mse, dtype=float), n))
        self._is_vel = np.array([k == VELOCITY for k in self.obs.kinds])

    def covariance(self, sigma2_vel, sigma2_p) -> np.ndarray:
        s_v = np.asarray(sigma2_vel, dtype=float)[..., None]
        s_p = np.asarray(sigma2_p, dtype=float)[..., None]
        return np.where(self._is_vel, s_v, s_p) + self._fixed

    def __call__(self, joint) -> np.ndarray:
        x = np.atleast_2d(np.asarray(joint, dtype=float))
        theta, s_v, s_p = x[:, :-2], x[:, -2], x[:, -1]
        if self.n_model is not None and theta.shape[1] != self.n_model:
            raise ValueError(f"expected {self.n_model} model parameters, got {theta.shape[1]}")
        mean, _ = _call_predictor(self.predictor, theta)
        if mean.shape != (x.shape[0], len(self.obs)):
            raise ValueError(f"predictor output {mean.shape} does not match {len(self.obs)} observations")
        var = self.covariance(s_v, s_p)
        out = np.full(x.shape[0], -np.inf)
        ok = np.all(var > 0, axis=1) & np.all(np.isfinite(mean), axis=1)
        if ok.any():
            out[ok] = log_likelihood(mean[ok], self.obs.values, var[ok])
        return out


# ---------------------------------------------------------------------------
# autocorrelation
# ---------------------------------------------------------------------------


def _autocorr_1d(x: np.ndarray) -> np.ndarray:
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean()
    f = np.fft.rfft(xc, n=m)
    acf = np.fft.irfft(f * np.conj(f), n=m)[:n]
    if not acf[0] > 0:
        raise AutocorrError("constant chain: autocorrelation time is undefined")
    return acf / acf[0]


def integrated_autocorr_time(chain, c: float = 5.0) -> np.ndarray:
    """Per-parameter integrated autocorrelation time.

    ``chain`` has shape ``(steps, walkers, dim)`` (or ``(steps,)`` /
    ``(steps, walkers)``).  The normalized autocorrelation is averaged
    over walkers and summed up to the smallest window ``M >= c * tau(M)``.
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        x = x[:, None, None]
    elif x.ndim == 2:
        x = x[:, :, None]
    steps, walkers, dim = x.shape
    if steps < 100:
        raise AutocorrError(f"need at least 100 steps, got {steps}")
    tau = np.empty(dim)
    for j in range(dim):
        acf = np.mean([_autocorr_1d(x[:, w, j]) for w in range(walkers)], axis=0)
        taus = 2.0 * np.cumsum(acf) - 1.0
        ok = np.arange(steps) >= c * taus
        if not ok.any():
            raise AutocorrError(f"chain too short for the window rule (parameter {j})")
        tau[j] = taus[int(np.argmax(ok))]
    return tau


def converged(history, n_steps: int, rel_tol: float = 0.01, min_length_factor: float = 50.0) -> bool:
    """IAT-based convergence test over monitoring checkpoints.

    True iff there are at least two checkpoints, the chain is longer than
    ``min_length_factor`` times the latest IAT of every parameter, and the
    largest relative IAT change between the last two checkpoints is below
    ``rel_tol``.
    """
    if len(history) < 2:
        return False
    prev = np.atleast_1d(np.asarray(history[-2], dtype=float))
    last = np.atleast_1d(np.asarray(history[-1], dtype=float))
    if not (np.all(np.isfinite(last)) and np.all(np.isfinite(prev))):
        return False
    if not np.all(n_steps > min_length_factor * last):
        return False
    return bool(np.max(np.abs(last - prev) / last) < rel_tol)


# ---------------------------------------------------------------------------
# ensemble sampler
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ChainEnsemble:
    samples: np.ndarray            # (steps, walkers, dim)
    log_prob: np.ndarray           # (steps, walkers)
    acceptance: float
    names: list[str]
    iat: np.ndarray | None = None
    iat_history: list = field(default_factory=list)
    converged: bool = False
    burn: int = 0
    thin: int = 1
    seed: int | None = None

    @property
    def steps(self) -> int:
        return self.samples.shape[0]

    @property
    def walkers(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    def flat(self, burn: int | None = None, thin: int | None = None) -> np.ndarray:
        b = self.burn if burn is None else burn
        t = self.thin if thin is None else thin
        return self.samples[b::t].reshape(-1, self.dim)

    def flat_log_prob(self) -> np.ndarray:
        return self.log_prob[self.burn::self.thin].reshape(-1)

    def summary(self) -> dict:
        flat = self.flat()
        q = np.quantile(flat, [0.025, 0.5, 0.975], axis=0)
        return {n: {"mean": float(flat[:, j].mean()), "std": float(flat[:, j].std()),
                    "q025": float(q[0, j]), "median": float(q[1, j]), "q975": float(q[2, j])}
                for j, n in enumerate(self.names)}

    def write_csv(self, path, all_steps: bool = False):
        """Columnar dump: step, walker, parameters..., log_posterior."""
        start, step = (0, 1) if all_steps else (self.burn, self.thin)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "walker", *self.names, "log_posterior"])
            for s in range(start, self.steps, step):
                for k in range(self.walkers):
                    w.writerow([s, k, *(repr(float(v)) for v in self.samples[s, k]),
                                repr(float(self.log_prob[s, k]))])


def _initial_walkers(prior: ParameterSpace, walkers: int, seed: int, log_post) -> np.ndarray:
    rng = make_rng(seed, 1)
    x = np.asarray(sample(prior, walkers, seed))
    scale = np.array([m.std() for m in prior.marginals])
    x = x + 1e-6 * scale * rng.standard_normal(x.shape)
    for j, m in enumerate(prior.marginals):
        if m.kind == "uniform":
            x[:, j] = np.clip(x[:, j], m.lo, m.hi)
        elif m.kind == "lognormal":
            x[:, j] = np.abs(x[:, j])
    lp = log_post(x)
    for attempt in range(100):
        bad = ~np.isfinite(lp)
        if not bad.any():
            return x
        fresh = np.asarray(sample(prior, int(bad.sum()), seed + 7919 * (attempt + 1)))
        x[bad] = fresh
        lp[bad] = log_post(fresh)
    raise SamplerError("could not find initial walkers with finite posterior density")


def run_aies(log_like: Callable, prior: ParameterSpace, walkers: int = 50, seed: int = 0, *,
             steps: int | None = None, max_steps: int = 100_000, check_every: int = 1000,
             rel_tol: float = 0.01, a: float = 2.0, init=None, stuck_window: int = 1000) -> ChainEnsemble:
    """Affine-invariant ensemble sampling of ``likelihood x prior``.

    ``log_like`` takes an ``(n, dim)`` block and returns ``n`` values.  With
    ``steps=None`` the run stops once :func:`converged` holds at a
    monitoring checkpoint (every ``check_every`` steps, IAT change below
    ``rel_tol``) or at ``max_steps``.
    Burn-in of ``2 * max IAT`` is discarded and the chain is thinned by
    ``ceil(max IAT)``.
    """
    dim = prior.dim
    if walkers < 2 * dim or walkers % 2:
        raise ValueError(f"need an even number of walkers >= {2 * dim}, got {walkers}")
    for m in prior.marginals:
        if not m.std() > 0:
            raise ValueError(f"prior for {m.name} has zero-measure support")

    def log_post(x):
        lp = prior.logpdf(x)
        out = np.full(x.shape[0], -np.inf)
        ok = np.isfinite(lp)
        if ok.any():
            ll = np.asarray(log_like(x[ok]), dtype=float)
            out[ok] = np.where(np.isnan(ll), -np.inf, ll) + lp[ok]
        return out

    rng = make_rng(seed, 2)
    x = np.array(init, dtype=float) if init is not None else _initial_walkers(prior, walkers, seed, log_post)
    if x.shape != (walkers, dim):
        raise ValueError(f"initial ensemble must have shape {(walkers, dim)}")
    lp = log_post(x)
    if not np.all(np.isfinite(lp)):
        raise SamplerError("initial walkers have zero posterior density")

    cap = steps if steps is not None else max_steps
    chunk = max(check_every, 1)
    samples = np.empty((min(cap, chunk), walkers, dim))
    logp = np.empty((min(cap, chunk), walkers))
    half = walkers // 2
    halves = (np.arange(half), np.arange(half, walkers))
    accepted = 0
    window_acc = 0
    history: list = []
    done = False
    t = 0
    while t < cap:
        if t >= samples.shape[0]:
            grow = min(cap, samples.shape[0] + chunk)
            samples = np.concatenate([samples, np.empty((grow - samples.shape[0], walkers, dim))])
            logp = np.concatenate([logp, np.empty((grow - logp.shape[0], walkers))])
        for s in (0, 1):
            act, other = halves[s], halves[1 - s]
            z = ((a - 1.0) * rng.random(half) + 1.0) ** 2 / a
            partner = x[other[rng.integers(0, half, size=half)]]
            prop = partner + z[:, None] * (x[act] - partner)
            lp_new = log_post(prop)
            log_r = (dim - 1) * np.log(z) + lp_new - lp[act]
            accept = np.log(rng.random(half)) < log_r
            x[act[accept]] = prop[accept]
            lp[act[accept]] = lp_new[accept]
            accepted += int(accept.sum())
            window_acc += int(accept.sum())
        samples[t] = x
        logp[t] = lp
        t += 1
        if t % stuck_window == 0:
            if window_acc < 1e-3 * stuck_window * walkers:
                raise SamplerError(f"all walkers stuck: acceptance {window_acc / (stuck_window * walkers):.2e}"
                                   f" over the last {stuck_window} steps")
            window_acc = 0
        if steps is None and t % check_every == 0:
            try:
                history.append(integrated_autocorr_time(samples[:t]))
            except AutocorrError:
                history.append(np.full(dim, np.nan))
            log.info("step %d: IAT %s", t, history[-1])
            if converged(history, t, rel_tol):
                done = True
                break

    samples, logp = samples[:t], logp[:t]
    ens = ChainEnsemble(samples, logp, accepted / (t * walkers), list(prior.names),
                        iat_history=history, converged=done, seed=seed)
    try:
        ens.iat = integrated_autocorr_time(samples)
    except AutocorrError:
        ens.iat = history[-1] if history and np.all(np.isfinite(history[-1])) else None
    if ens.iat is not None:
        tmax = float(np.max(ens.iat))
        ens.burn = min(int(math.ceil(2.0 * tmax)), t - 1)
        ens.thin = max(1, int(math.ceil(tmax)))
    if steps is None and not done:
        log.warning("AIES reached the step cap (%d) before the IAT criterion was met", cap)
    return ens


# ---------------------------------------------------------------------------
# posterior predictive
# ---------------------------------------------------------------------------


def posterior_predictive(predictor: Callable, samples, add_predictor_variance: bool = True):
    """Mean and standard deviation of the pushed-forward posterior per output.

    If ``predictor`` returns ``(mean, variance)`` the variance is added
    (law of total variance) unless ``add_predictor_variance`` is false.
    """
    theta = np.atleast_2d(np.asarray(samples, dtype=float))
    if theta.shape[0] == 0:
        raise ValueError("empty posterior sample set")
    mean, var = _call_predictor(predictor, theta)
    m = mean.mean(axis=0)
    # shifted data: exact zero spread for a repeated sample
    v = (mean - mean[0]).var(axis=0)
    if var is not None and add_predictor_variance:
        v = v + var.mean(axis=0)
    return m, np.sqrt(v)


def write_predictive_csv(path, obs: ObservationSet, results: dict):
    """Bar-chart layout: one row per (point, model) with mean and std."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "kind", "reference", "model", "mean", "std"])
        for model, (m, s) in results.items():
            for i in range(len(obs)):
                w.writerow([obs.ids[i], obs.kinds[i], repr(float(obs.values[i])), model,
                            repr(float(m[i])), repr(float(s[i]))])
