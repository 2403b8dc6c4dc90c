"""Uncertain-parameter priors: independent marginals, sampling and moments.

Three marginal kinds are supported:

* ``uniform`` on ``[lo, hi]``
* ``lognormal`` given by a *range* ``[lo, hi]``; the range is read as
  ``exp(m +/- 2 s)`` of the underlying normal, i.e.
  ``m = (ln lo + ln hi) / 2`` and ``s = (ln hi - ln lo) / 4``.  The
  distribution is not truncated to the range.
* ``data`` driven by a sample vector (bootstrap sampling, empirical moments).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

KINDS = ("uniform", "lognormal", "data")


@dataclass(frozen=True, eq=False)
class MarginalDistribution:
    name: str
    kind: str
    lo: float = float("nan")
    hi: float = float("nan")
    samples: np.ndarray | None = field(default=None, repr=False)
    units: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"{self.name}: unknown marginal kind {self.kind!r}")
        if self.kind == "uniform":
            if not (np.isfinite(self.lo) and np.isfinite(self.hi) and self.lo < self.hi):
                raise ValueError(f"{self.name}: uniform needs lo < hi, got [{self.lo}, {self.hi}]")
        elif self.kind == "lognormal":
            if not (0 < self.lo < self.hi and np.isfinite(self.hi)):
                raise ValueError(f"{self.name}: log-normal range needs 0 < lo < hi, got [{self.lo}, {self.hi}]")
        else:
            if self.samples is None:
                raise ValueError(f"{self.name}: data-driven marginal needs samples")
            data = np.array(self.samples, dtype=float).ravel()
            if data.size < 2 or not np.all(np.isfinite(data)):
                raise ValueError(f"{self.name}: data-driven marginal needs >= 2 finite samples")
            data.setflags(write=False)
            object.__setattr__(self, "samples", data)
            object.__setattr__(self, "lo", float(data.min()))
            object.__setattr__(self, "hi", float(data.max()))

    # -- constructors ---------------------------------------------------
    @classmethod
    def uniform(cls, name, lo, hi, units=""):
        return cls(name, "uniform", float(lo), float(hi), units=units)

    @classmethod
    def lognormal(cls, name, lo, hi, units=""):
        return cls(name, "lognormal", float(lo), float(hi), units=units)

    @classmethod
    def data(cls, name, samples, units=""):
        return cls(name, "data", samples=np.asarray(samples, dtype=float), units=units)

    # -- log-normal parameters -------------------------------------------
    @property
    def log_mean(self) -> float:
        return 0.5 * (math.log(self.lo) + math.log(self.hi))

    @property
    def log_std(self) -> float:
        return 0.25 * (math.log(self.hi) - math.log(self.lo))

    @property
    def bounded(self) -> bool:
        return self.kind == "uniform"

    # -- statistics -------------------------------------------------------
    def mean(self) -> float:
        if self.kind == "uniform":
            return 0.5 * (self.lo + self.hi)
        if self.kind == "lognormal":
            return math.exp(self.log_mean + 0.5 * self.log_std**2)
        return float(np.mean(self.samples))

    def std(self) -> float:
        if self.kind == "uniform":
            return (self.hi - self.lo) / math.sqrt(12.0)
        if self.kind == "lognormal":
            s2 = self.log_std**2
            return math.exp(self.log_mean + 0.5 * s2) * math.sqrt(math.expm1(s2))
        return float(np.std(self.samples))

    def raw_moments(self, order: int) -> np.ndarray:
        return raw_moments(self, order)

    def standardized_moments(self, order: int) -> np.ndarray:
        """Raw moments of ``(X - mean) / std`` up to ``order``.

        Computed analytically for uniform and log-normal marginals so the
        shift does not cost digits.
        """
        n = np.arange(order + 1)
        if self.kind == "uniform":
            out = np.where(n % 2 == 0, 3.0 ** (n / 2.0) / (n + 1.0), 0.0)
            return out
        if self.kind == "lognormal":
            s2 = self.log_std**2
            ym = math.exp(0.5 * s2)
            ysd = math.sqrt(math.exp(s2) * math.expm1(s2))
            y_raw = [math.exp(0.5 * k * k * s2) for k in range(order + 1)]
            out = np.empty(order + 1)
            for p in range(order + 1):
                acc = 0.0
                for k in range(p + 1):
                    acc += math.comb(p, k) * y_raw[k] * (-ym) ** (p - k)
                out[p] = acc / ysd**p
            out[0] = 1.0
            return out
        _check_data_order(self, order)
        sd = self.std()
        if sd == 0.0:
            raise ValueError(f"{self.name}: degenerate data-driven marginal (zero variance)")
        z = (self.samples - self.mean()) / sd
        out = np.array([np.mean(z**p) for p in range(order + 1)])
        out[0] = 1.0
        return out

    # -- sampling and density ----------------------------------------------
    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=n)
        if self.kind == "lognormal":
            return np.exp(rng.normal(self.log_mean, self.log_std, size=n))
        return self.samples[rng.integers(0, self.samples.size, size=n)]

    def logpdf(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            inside = (x >= self.lo) & (x <= self.hi)
            return np.where(inside, -math.log(self.hi - self.lo), -np.inf)
        if self.kind == "lognormal":
            with np.errstate(divide="ignore", invalid="ignore"):
                out = stats.lognorm.logpdf(x, s=self.log_std, scale=math.exp(self.log_mean))
            return np.where(x > 0, out, -np.inf)
        if self.std() == 0.0:
            raise ValueError(f"{self.name}: degenerate data-driven marginal has no density")
        kde = stats.gaussian_kde(self.samples)
        return kde.logpdf(np.atleast_1d(x)).reshape(x.shape)

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "units": self.units}
        if self.kind == "data":
            d["samples"] = [float(v) for v in self.samples]
        else:
            d["lo"], d["hi"] = float(self.lo), float(self.hi)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalDistribution":
        kind = d["kind"].replace("-", "").replace("_", "").lower()
        kind = {"lognormal": "lognormal", "uniform": "uniform", "data": "data", "datadriven": "data"}.get(kind, kind)
        if kind == "data":
            return cls.data(d["name"], d["samples"], d.get("units", ""))
        return cls(d["name"], kind, float(d["lo"]), float(d["hi"]), units=d.get("units", ""))


def _check_data_order(m: MarginalDistribution, order: int):
    if m.samples.size < order + 2:
        raise ValueError(
            f"{m.name}: moment order {order} too high for {m.samples.size} samples "
            f"(need at least {order + 2})"
        )


def raw_moments(marginal: MarginalDistribution, order: int) -> np.ndarray:
    """Raw moments ``E[X**p]`` for ``p = 0..order``; the zeroth is exactly 1."""
    if order < 0:
        raise ValueError("order must be >= 0")
    p = np.arange(order + 1, dtype=float)
    if marginal.kind == "uniform":
        lo, hi = marginal.lo, marginal.hi
        out = (hi ** (p + 1) - lo ** (p + 1)) / ((p + 1) * (hi - lo))
    elif marginal.kind == "lognormal":
        m, s = marginal.log_mean, marginal.log_std
        out = np.exp(p * m + 0.5 * p**2 * s**2)
    else:
        _check_data_order(marginal, order)
        out = np.array([np.mean(marginal.samples**k) for k in range(order + 1)])
    out[0] = 1.0
    return out


class SampleMatrix(np.ndarray):
    """``(n, dim)`` array of parameter draws that remembers its seed."""

    def __new__(cls, values, seed=None):
        obj = np.asarray(values, dtype=float).view(cls)
        obj.seed = seed
        return obj

    def __array_finalize__(self, obj):
        self.seed = getattr(obj, "seed", None)


@dataclass(frozen=True)
class ParameterSpace:
    marginals: tuple[MarginalDistribution, ...]

    def __post_init__(self):
        object.__setattr__(self, "marginals", tuple(self.marginals))
        names = [m.name for m in self.marginals]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate parameter names in {names}")

    @property
    def dim(self) -> int:
        return len(self.marginals)

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.marginals]

    def __len__(self):
        return self.dim

    def __getitem__(self, i):
        if isinstance(i, str):
            return self.marginals[self.names.index(i)]
        return self.marginals[i]

    def __iter__(self):
        return iter(self.marginals)

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for j, m in enumerate(self.marginals):
            out = out + m.logpdf(x[:, j])
        return out

    def extend(self, more: Iterable[MarginalDistribution]) -> "ParameterSpace":
        return ParameterSpace(self.marginals + tuple(more))

    def to_list(self) -> list[dict]:
        return [m.to_dict() for m in self.marginals]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "ParameterSpace":
        return cls(tuple(MarginalDistribution.from_dict(d) for d in items))


def make_rng(seed, *key: int) -> np.random.Generator:
    """Counter-based generator for ``seed``; ``key`` selects an independent stream."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def sample(space: ParameterSpace, n: int, seed: int) -> SampleMatrix:
    """Draw ``n`` independent parameter vectors; column ``j`` uses its own stream."""
    if n < 1:
        raise ValueError(f"sample count must be positive, got {n}")
    if space.dim == 0:
        raise ValueError("cannot sample an empty parameter space")
    cols = [m.draw(make_rng(seed, j), n) for j, m in enumerate(space.marginals)]
    return SampleMatrix(np.column_stack(cols), seed=seed)
