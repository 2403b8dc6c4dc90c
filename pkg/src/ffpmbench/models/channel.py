"""Quasi-1D Stokes-Darcy channel flow with classical or generalized interface conditions.

In fully developed parallel flow the free channel ``gamma < y < H`` solves
``mu u'' = G`` with no-slip at the top wall, so with ``s = y - gamma`` and
``h = H - gamma``

    u(s) = G/(2 mu) s**2 + a s + b,     u(h) = 0.

Both interface conditions reduce to a Robin condition ``u(0) = lam u'(0) + w``:

* classical (Beavers-Joseph): ``lam = sqrt(k)/alpha_BJ``, ``w = u_pm = -k G / mu``
* generalized: ``lam = -ell N1``, ``w = ell**2 G M1 / mu``

The porous region carries the Darcy velocity ``u_pm`` and shares the linear
pressure ``p = G (x - L)`` (zero at the outlet).  Everything is closed form
and vectorized over parameter samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..error_models import PRESSURE
from ..params import MarginalDistribution, ParameterSpace
from .scenario import MM, Scenario, ScenarioError


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelProfile:
    """Closed-form velocity profile; array fields broadcast over samples."""

    G: np.ndarray
    gamma: np.ndarray
    height: float
    length: float
    mu: float
    lam: np.ndarray
    w: np.ndarray
    u_pm: np.ndarray

    @property
    def h(self):
        return self.height - self.gamma

    @property
    def a(self):
        """Interface shear ``u'(gamma)``."""
        return -(self.G / (2 * self.mu) * self.h**2 + self.w) / (self.h + self.lam)

    @property
    def b(self):
        """Interface velocity ``u(gamma)``."""
        return self.lam * self.a + self.w

    def velocity(self, y):
        """Streamwise velocity at height ``y`` (Darcy velocity below the interface)."""
        s = np.asarray(y, dtype=float) - self.gamma
        free = self.G / (2 * self.mu) * s**2 + self.a * s + self.b
        return np.where(s >= 0, free, self.u_pm)

    def _integral(self, s1, s2):
        return (self.G / (6 * self.mu) * (s2**3 - s1**3) + 0.5 * self.a * (s2**2 - s1**2)
                + self.b * (s2 - s1))

    def rev_velocity(self, y0, ell):
        """Average over ``[y0 - ell/2, y0 + ell/2]`` with ``u_pm`` below the interface."""
        lo, hi = y0 - 0.5 * ell, y0 + 0.5 * ell
        cut = np.clip(self.gamma, lo, hi)
        free = self._integral(cut - self.gamma, hi - self.gamma)
        return (self.u_pm * (cut - lo) + free) / ell

    def pressure(self, x):
        return self.G * (np.asarray(x, dtype=float) - self.length)

    def interface_residual(self):
        """``u(gamma) - lam u'(gamma) - w`` evaluated from the profile itself."""
        s = np.zeros_like(np.asarray(self.gamma, dtype=float))
        u0 = self.G / (2 * self.mu) * s**2 + self.a * s + self.b
        du0 = self.G / self.mu * s + self.a
        return u0 - self.lam * du0 - self.w


def _columns(theta, names):
    if isinstance(theta, dict):
        return [np.asarray(theta[n], dtype=float) for n in names]
    t = np.asarray(theta, dtype=float)
    if t.shape[-1] != len(names):
        raise ParameterError(f"expected {len(names)} parameters {names}, got shape {t.shape}")
    return [t[..., i] for i in range(len(names))]


def classical_space(s: Scenario) -> ParameterSpace:
    return ParameterSpace((
        MarginalDistribution.uniform("v_top", 5e-4, 1.5e-3, "m/s"),
        MarginalDistribution.uniform("gamma", s.gamma0 - 0.1 * MM, s.gamma0 + 0.1 * MM, "m"),
        MarginalDistribution.lognormal("k", 1e-10, 1e-8, "m^2"),
        MarginalDistribution.uniform("alpha_bj", 0.1, 4.0, "-"),
    ))


def generalized_space(s: Scenario) -> ParameterSpace:
    return ParameterSpace((
        MarginalDistribution.uniform("v_top", 5e-4, 1.5e-3, "m/s"),
        MarginalDistribution.uniform("gamma", s.gamma0, s.gamma0 + 0.1 * MM, "m"),
        MarginalDistribution.lognormal("k", 1e-10, 1e-8, "m^2"),
    ))


def _check_common(s: Scenario, v, gamma, k):
    if np.any(~(v > 0)):
        raise ParameterError("V_top must be positive")
    if np.any(~(k > 0)):
        raise ParameterError("permeability must be positive")
    if np.any(~(gamma > 0)) or np.any(gamma >= s.height):
        raise ParameterError("interface location must satisfy 0 < gamma < H")


def _check_support(space: ParameterSpace | None, cols):
    if space is None:
        return
    for m, c in zip(space.marginals, cols):
        if m.kind == "uniform" and (np.any(c < m.lo) or np.any(c > m.hi)):
            raise ParameterError(f"{m.name} outside its support [{m.lo:g}, {m.hi:g}]")


def classical_profile(s: Scenario, theta, space=None) -> ChannelProfile:
    v, gamma, k, alpha = _columns(theta, ("v_top", "gamma", "k", "alpha_bj"))
    _check_common(s, v, gamma, k)
    if np.any(~(alpha > 0)):
        raise ParameterError("Beavers-Joseph parameter must be positive")
    _check_support(space, (v, gamma, k, alpha))
    G = s.drive_gradient(v, gamma)
    u_pm = -k * G / s.viscosity
    return ChannelProfile(G, gamma, s.height, s.length, s.viscosity, np.sqrt(k) / alpha, u_pm, u_pm)


def generalized_profile(s: Scenario, theta, space=None, tol: float = 1e-12) -> ChannelProfile:
    if s.n1_bl is None or s.m1_bl is None:
        raise ScenarioError("generalized interface conditions need the boundary-layer constants n1_bl and m1_bl")
    v, gamma, k = _columns(theta, ("v_top", "gamma", "k"))
    _check_common(s, v, gamma, k)
    if np.any(gamma < s.gamma0 - tol):
        raise ParameterError("interface may not lie below the top of the solid inclusions")
    _check_support(space, (v, gamma, k))
    G = s.drive_gradient(v, gamma)
    lam = np.broadcast_to(-s.ell * s.n1_bl, np.shape(G))
    w = s.ell**2 * G * s.m1_bl / s.viscosity
    return ChannelProfile(G, gamma, s.height, s.length, s.viscosity, lam, w, -k * G / s.viscosity)


def profile_srqs(s: Scenario, prof: ChannelProfile) -> np.ndarray:
    """SRQ vector(s): REV-averaged velocity magnitude or pressure at each point."""
    out = []
    for p in s.points:
        if p.kind == PRESSURE:
            out.append(np.broadcast_to(prof.pressure(p.x), np.shape(prof.G)))
        else:
            out.append(np.abs(prof.rev_velocity(p.y, s.ell)))
    return np.stack(out, axis=-1)


def solve_channel_classical(s: Scenario, theta, space=None) -> np.ndarray:
    return profile_srqs(s, classical_profile(s, theta, space))


def solve_channel_generalized(s: Scenario, theta, space=None) -> np.ndarray:
    return profile_srqs(s, generalized_profile(s, theta, space))


class ChannelModel:
    """Forward model ``theta (n, d) -> SRQs (n, N)`` for one interface variant."""

    def __init__(self, scenario: Scenario, variant: str = "classical", check_support: bool = False):
        if variant not in ("classical", "generalized"):
            raise ValueError(f"unknown channel variant {variant!r}")
        self.scenario = scenario
        self.variant = variant
        self.space = classical_space(scenario) if variant == "classical" else generalized_space(scenario)
        if variant == "generalized" and (scenario.n1_bl is None or scenario.m1_bl is None):
            raise ScenarioError("generalized interface conditions need the boundary-layer constants n1_bl and m1_bl")
        self._check = check_support

    @property
    def output_names(self):
        return self.scenario.point_ids

    def __call__(self, theta) -> np.ndarray:
        space = self.space if self._check else None
        if self.variant == "classical":
            return solve_channel_classical(self.scenario, theta, space)
        return solve_channel_generalized(self.scenario, theta, space)
