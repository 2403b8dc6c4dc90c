"""Arbitrary polynomial chaos basis built from raw moments.

Univariate polynomials are orthonormalized against the Hankel moment
matrix by modified Gram-Schmidt with one reorthogonalization pass.  When a
basis is built for a marginal, the variable is first standardized to zero
mean and unit variance; the affine map is stored with the basis and applied
at evaluation time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import MarginalDistribution, ParameterSpace

MAX_DEGREE = 10
DEFAULT_CARDINALITY_CAP = 10**6


class BasisConstructionError(ValueError):
    """Hankel moment matrix is singular or indefinite at ``degree``."""

    def __init__(self, degree: int, message: str):
        super().__init__(message)
        self.degree = degree


@dataclass(frozen=True, eq=False)
class UnivariateBasis:
    """Orthonormal polynomials ``psi_0..psi_d`` of one input.

    ``coeffs[j, k]`` is the coefficient of ``z**k`` in ``psi_j`` where
    ``z = (x - shift) / scale``.
    """

    coeffs: np.ndarray
    shift: float = 0.0
    scale: float = 1.0
    index: int = 0

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0] - 1

    def __call__(self, x) -> np.ndarray:
        """Values of every polynomial at ``x``; shape ``x.shape + (d+1,)``."""
        z = (np.asarray(x, dtype=float) - self.shift) / self.scale
        powers = z[..., None] ** np.arange(self.degree + 1)
        return powers @ self.coeffs.T

    def to_dict(self) -> dict:
        return {
            "coeffs": self.coeffs.tolist(),
            "shift": float(self.shift),
            "scale": float(self.scale),
            "index": int(self.index),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UnivariateBasis":
        return cls(np.array(d["coeffs"], dtype=float), d["shift"], d["scale"], d["index"])


def build_univariate_basis(moments, d: int, shift: float = 0.0, scale: float = 1.0,
                           index: int = 0) -> UnivariateBasis:
    """Orthonormal polynomials up to degree ``d`` from moments ``mu_0..mu_2d``.

    The moments are those of the variable the polynomials act on (after the
    ``shift``/``scale`` map, if any).  Leading coefficients are positive.
    """
    moments = np.asarray(moments, dtype=float)
    if d < 0 or d > MAX_DEGREE:
        raise ValueError(f"degree must be in [0, {MAX_DEGREE}], got {d}")
    if moments.size < 2 * d + 1:
        raise ValueError(f"need moments up to order {2 * d}, got {moments.size - 1}")
    if not np.all(np.isfinite(moments[: 2 * d + 1])):
        raise ValueError("moments must be finite")
    i = np.arange(d + 1)
    hankel = moments[i[:, None] + i[None, :]]

    coeffs = np.zeros((d + 1, d + 1))
    for j in range(d + 1):
        v = np.zeros(d + 1)
        v[j] = 1.0
        for _ in range(2):
            for l in range(j):
                v -= (coeffs[l] @ hankel @ v) * coeffs[l]
        norm2 = v @ hankel @ v
        if not norm2 > 1e-13 * max(hankel[j, j], 1e-300):
            raise BasisConstructionError(
                j, f"moment matrix is singular or indefinite at degree {j} (norm^2 = {norm2:.3e})"
            )
        coeffs[j] = v / math.sqrt(norm2)
    return UnivariateBasis(coeffs, float(shift), float(scale), index)


def basis_for_marginal(marginal: MarginalDistribution, d: int, index: int = 0) -> UnivariateBasis:
    if marginal.kind == "data" and marginal.samples.size < 2 * d + 2:
        raise ValueError(
            f"{marginal.name}: {marginal.samples.size} samples cannot support degree {d} "
            f"(need at least {2 * d + 2})"
        )
    sd = marginal.std()
    if not sd > 0:
        raise BasisConstructionError(1, f"{marginal.name}: degenerate marginal (zero variance)")
    moments = marginal.standardized_moments(2 * d)
    try:
        return build_univariate_basis(moments, d, marginal.mean(), sd, index)
    except BasisConstructionError as err:
        raise BasisConstructionError(err.degree, f"{marginal.name}: {err}") from None


@dataclass(frozen=True, eq=False)
class MultiIndexSet:
    dim: int
    degree: int
    indices: np.ndarray

    def __len__(self):
        return self.indices.shape[0]

    def __iter__(self):
        return iter(map(tuple, self.indices))

    def position(self, alpha) -> int:
        hit = np.flatnonzero(np.all(self.indices == np.asarray(alpha), axis=1))
        if hit.size == 0:
            raise KeyError(alpha)
        return int(hit[0])


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def generate_multi_indices(N: int, d: int, cap: int = DEFAULT_CARDINALITY_CAP) -> MultiIndexSet:
    """All ``alpha`` in N^N with ``|alpha| <= d`` in graded lexicographic order."""
    if N < 1 or d < 0:
        raise ValueError(f"need N >= 1 and d >= 0, got N={N}, d={d}")
    card = math.comb(N + d, d)
    if card > cap:
        raise ValueError(f"basis cardinality {card} exceeds cap {cap}")
    rows = [alpha for total in range(d + 1) for alpha in _compositions(total, N)]
    return MultiIndexSet(N, d, np.array(rows, dtype=np.int64).reshape(card, N))


def evaluate_design_matrix(bases, indices: MultiIndexSet, samples) -> np.ndarray:
    """``Psi[n, j] = prod_i psi_{alpha_j,i}(theta_n,i)``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != indices.dim or len(bases) != indices.dim:
        raise ValueError(
            f"dimension mismatch: samples have {x.shape[1]} columns, "
            f"{len(bases)} bases, multi-indices of dimension {indices.dim}"
        )
    psi = np.ones((x.shape[0], len(indices)))
    for i, basis in enumerate(bases):
        need = int(indices.indices[:, i].max())
        if basis.degree < need:
            raise ValueError(f"basis {i} has degree {basis.degree}, multi-indices need {need}")
        table = basis(x[:, i])
        psi *= table[:, indices.indices[:, i]]
    return psi


@dataclass(frozen=True, eq=False)
class TensorBasis:
    """Per-input univariate bases plus the total-degree multi-index set."""

    bases: tuple[UnivariateBasis, ...]
    indices: MultiIndexSet

    @classmethod
    def build(cls, space: ParameterSpace, d: int) -> "TensorBasis":
        bases = tuple(basis_for_marginal(m, d, i) for i, m in enumerate(space.marginals))
        return cls(bases, generate_multi_indices(space.dim, d))

    def __len__(self):
        return len(self.indices)

    def design(self, samples) -> np.ndarray:
        return evaluate_design_matrix(self.bases, self.indices, samples)

    def to_dict(self) -> dict:
        return {
            "degree": self.indices.degree,
            "bases": [b.to_dict() for b in self.bases],
            "indices": self.indices.indices.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TensorBasis":
        bases = tuple(UnivariateBasis.from_dict(b) for b in d["bases"])
        idx = np.array(d["indices"], dtype=np.int64).reshape(-1, len(bases))
        return cls(bases, MultiIndexSet(len(bases), d["degree"], idx))
