"""Sobol indices read directly off sparse PCE coefficients.

For an orthonormal basis the output variance is the sum of squared
coefficients over non-constant terms, so joint and total indices are
ratios of partial sums.  Pruned terms contribute nothing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .apce import MultiIndexSet


class UndefinedSobolIndex(ValueError):
    """Total variance is zero (constant surrogate)."""


def _active_terms(fit, indices: MultiIndexSet):
    """Squared coefficients and multi-indices of the active non-constant terms."""
    if hasattr(fit, "active"):
        alpha = indices.indices[fit.active]
        c2 = np.asarray(fit.mean, dtype=float) ** 2
    else:
        coeffs = np.asarray(fit, dtype=float)
        if coeffs.size != len(indices):
            raise ValueError(f"{coeffs.size} coefficients for {len(indices)} multi-indices")
        alpha = indices.indices
        c2 = coeffs**2
    keep = alpha.sum(axis=1) > 0
    return c2[keep], alpha[keep] > 0


def _variance(c2) -> float:
    total = float(np.sum(c2))
    if not total > 0.0:
        raise UndefinedSobolIndex("surrogate has zero variance; Sobol indices are undefined")
    return total


def _check_ids(ids, dim):
    if not ids:
        raise ValueError("parameter subset must be non-empty")
    for i in ids:
        if not 0 <= i < dim:
            raise ValueError(f"parameter id {i} out of range for dimension {dim}")


def sobol_joint(fit, indices: MultiIndexSet, subset) -> float:
    """Share of variance carried by terms supported on exactly ``subset``.

    ``fit`` is a ``SparseFit`` or a full coefficient vector.
    """
    ids = sorted(set(int(i) for i in subset))
    _check_ids(ids, indices.dim)
    c2, support = _active_terms(fit, indices)
    total = _variance(c2)
    mask = np.zeros(indices.dim, dtype=bool)
    mask[ids] = True
    hit = np.all(support == mask, axis=1)
    return float(np.sum(c2[hit]) / total)


def sobol_total(fit, indices: MultiIndexSet, j: int) -> float:
    """Share of variance carried by every term that involves parameter ``j``."""
    _check_ids([j], indices.dim)
    c2, support = _active_terms(fit, indices)
    total = _variance(c2)
    return float(np.sum(c2[support[:, j]]) / total)


def sobol_all(fit, indices: MultiIndexSet) -> tuple[dict, np.ndarray]:
    """Joint indices for every realized subset, plus all total indices."""
    c2, support = _active_terms(fit, indices)
    total = _variance(c2)
    joint: dict[tuple[int, ...], float] = {}
    for val, row in zip(c2, support):
        key = tuple(int(i) for i in np.flatnonzero(row))
        joint[key] = joint.get(key, 0.0) + val / total
    totals = np.array([np.sum(c2[support[:, j]]) / total for j in range(indices.dim)])
    return dict(sorted(joint.items(), key=lambda kv: (len(kv[0]), kv[0]))), totals


@dataclass
class SensitivityReport:
    """Per-output joint and total Sobol indices."""

    parameter_names: list[str]
    output_names: list[str]
    joint: list[dict] = field(default_factory=list)
    totals: list[np.ndarray] = field(default_factory=list)
    undefined: list[str] = field(default_factory=list)

    def first_order(self, output: int) -> np.ndarray:
        return np.array([self.joint[output].get((j,), 0.0) for j in range(len(self.parameter_names))])

    def subset_label(self, subset) -> str:
        return "+".join(self.parameter_names[i] for i in subset)

    def write_csv(self, joint_path, total_path):
        with open(joint_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["output", "subset", "value"])
            for name, joint in zip(self.output_names, self.joint):
                for subset, value in joint.items():
                    w.writerow([name, self.subset_label(subset), repr(float(value))])
        with open(total_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["output", "parameter", "total"])
            for name, totals in zip(self.output_names, self.totals):
                for p, value in zip(self.parameter_names, totals):
                    w.writerow([name, p, repr(float(value))])


def sensitivity_report(model) -> SensitivityReport:
    """Sobol indices for every output of a ``SurrogateModel``.

    Outputs with a constant surrogate are listed in ``undefined`` and
    carry NaN totals.
    """
    names = model.space.names
    rep = SensitivityReport(names, list(model.output_names))
    for name, fit in zip(model.output_names, model.fits):
        try:
            joint, totals = sobol_all(fit, model.basis.indices)
        except UndefinedSobolIndex:
            rep.undefined.append(name)
            joint, totals = {}, np.full(len(names), np.nan)
        rep.joint.append(joint)
        rep.totals.append(totals)
    return rep
