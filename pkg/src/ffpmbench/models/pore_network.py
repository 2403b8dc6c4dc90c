"""Pore-network porous-medium model coupled to the free channel.

Mass conservation at every pore body, ``sum_j Q_ij = 0`` with
``Q_ij = g_ij (p_i - p_j)``, is a weighted graph-Laplacian system.  Interface
pores carry Dirichlet pressures from the channel pressure ``G (x - L)``; all
other boundaries are no-flow.

The free channel above the network sees a Robin slip condition.  The
pore-local slip length ``1/beta_pore`` acts only over the open fraction
``f`` of the interface; transverse slip stripes saturate at
``b_max = ell/(2 pi) ln sec(pi f / 2)``, so the homogenized slip length is

    1/b_eff = beta_pore / f + 1/b_max.

The tangential porous velocity on each interface pore is
``Q_ij/|Gamma_i| (n_ij . tau)``, which vanishes for vertical interface throats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse import csgraph
from scipy.sparse.linalg import spsolve

from ..error_models import PRESSURE
from ..params import MarginalDistribution, ParameterSpace
from .channel import ChannelProfile, ParameterError, _check_support, _columns
from .scenario import Scenario, lattice_throats, pore_lattice


class NetworkError(ValueError):
    pass


def total_conductance(g_t, g_pi=None, g_pj=None):
    """Series combination of a throat and its two pore-body halves.

    A half given as ``None`` is absent (interface throats) and its term is
    omitted.
    """
    parts = [np.asarray(g, dtype=float) for g in (g_t, g_pi, g_pj) if g is not None]
    for g in parts:
        if np.any(~(g > 0)):
            raise NetworkError("conductances must be positive")
    return 1.0 / sum(1.0 / g for g in parts)


@dataclass(frozen=True, eq=False)
class PoreNetwork:
    """Pore bodies, throats and the Dirichlet interface set."""

    positions: np.ndarray
    radii: np.ndarray
    throats: np.ndarray
    conductance: np.ndarray
    widths: np.ndarray
    interface: np.ndarray
    interface_areas: np.ndarray
    no_flow: np.ndarray = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        n = pos.shape[0]
        t = np.asarray(self.throats, dtype=int).reshape(-1, 2)
        g = np.broadcast_to(np.asarray(self.conductance, dtype=float), (t.shape[0],)).copy()
        for name, val in (("positions", pos), ("throats", t), ("conductance", g),
                          ("radii", np.asarray(self.radii, dtype=float)),
                          ("widths", np.broadcast_to(np.asarray(self.widths, dtype=float), (t.shape[0],)).copy()),
                          ("interface", np.asarray(self.interface, dtype=int).ravel()),
                          ("interface_areas", np.asarray(self.interface_areas, dtype=float).ravel())):
            object.__setattr__(self, name, val)
        nf = np.array([], dtype=int) if self.no_flow is None else np.asarray(self.no_flow, dtype=int).ravel()
        object.__setattr__(self, "no_flow", nf)
        if t.size and (t.min() < 0 or t.max() >= n):
            raise NetworkError("throat references an unknown pore")
        if np.any(t[:, 0] == t[:, 1]):
            raise NetworkError("throat connects a pore to itself")
        if np.any(~(g > 0)):
            raise NetworkError("conductances must be positive")
        if np.intersect1d(self.interface, nf).size:
            raise NetworkError("interface and no-flow boundary sets must be disjoint")
        if self.interface_areas.shape != self.interface.shape:
            raise NetworkError("one interface area per interface pore")
        adj = sparse.coo_matrix((np.ones(t.shape[0]), (t[:, 0], t[:, 1])), shape=(n, n))
        ncomp, _ = csgraph.connected_components(adj, directed=False)
        if ncomp != 1:
            raise NetworkError(f"pore network is disconnected ({ncomp} components)")

    @property
    def n_pores(self) -> int:
        return self.positions.shape[0]

    @property
    def directions(self) -> np.ndarray:
        """Unit throat axes pointing from pore ``i`` to pore ``j``."""
        d = self.positions[self.throats[:, 1]] - self.positions[self.throats[:, 0]]
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def laplacian(self) -> sparse.csr_matrix:
        i, j = self.throats[:, 0], self.throats[:, 1]
        n = self.n_pores
        g = self.conductance
        off = sparse.coo_matrix((np.r_[-g, -g], (np.r_[i, j], np.r_[j, i])), shape=(n, n))
        diag = np.bincount(i, g, n) + np.bincount(j, g, n)
        return (off + sparse.diags(diag)).tocsr()


@dataclass(frozen=True, eq=False)
class NetworkSolution:
    pressures: np.ndarray
    flows: np.ndarray       # Q_ij = g_ij (p_i - p_j) along the stored throat orientation
    network: PoreNetwork

    def net_outflow(self) -> np.ndarray:
        """``sum_j Q_ij`` at every pore."""
        n = self.network.n_pores
        t = self.network.throats
        return np.bincount(t[:, 0], self.flows, n) - np.bincount(t[:, 1], self.flows, n)


def solve_network(network: PoreNetwork, fixed_ids, fixed_values) -> NetworkSolution:
    """Pressures with Dirichlet values on ``fixed_ids`` and mass balance elsewhere."""
    fixed_ids = np.asarray(fixed_ids, dtype=int).ravel()
    if fixed_ids.size == 0:
        raise NetworkError("singular system: no pressure is fixed (pin at least one pore)")
    vals = np.broadcast_to(np.asarray(fixed_values, dtype=float), fixed_ids.shape)
    n = network.n_pores
    free = np.setdiff1d(np.arange(n), fixed_ids)
    lap = network.laplacian()
    p = np.zeros(n)
    p[fixed_ids] = vals
    if free.size:
        a = lap[free][:, free].tocsc()
        rhs = -lap[free][:, fixed_ids] @ vals
        p[free] = spsolve(a, rhs)
    t = network.throats
    q = network.conductance * (p[t[:, 0]] - p[t[:, 1]])
    return NetworkSolution(p, q, network)


def lattice_network(s: Scenario, g: float = 1.0) -> PoreNetwork:
    """Regular network of the inclusion array with uniform total conductance ``g``.

    Interior throats carry ``g``; interface throats lack one pore-body half
    and are stiffer by ``(1 + 2/r)/(1 + 1/r)`` with ``r`` the pore-half to
    throat conductance ratio.  Per-throat overrides multiply these factors.
    """
    pos, (ny, nx), iface = pore_lattice(s)
    t = lattice_throats(s)
    r = s.pore_half_ratio
    g_t = g * (1 + 2 / r)
    factor = np.ones(t.shape[0])
    is_iface = np.isin(t[:, 1], iface)
    factor[is_iface] = total_conductance(g_t, r * g_t) / g
    for a, b, f in s.throat_overrides:
        hit = ((t[:, 0] == a) & (t[:, 1] == b)) | ((t[:, 0] == b) & (t[:, 1] == a))
        if not hit.any():
            raise NetworkError(f"throat override ({a}, {b}) does not name a throat")
        factor[hit] *= f
    no_flow = np.setdiff1d(np.arange(nx * ny), iface)
    return PoreNetwork(pos, np.full(pos.shape[0], 0.5 * s.gap), t, g * factor, s.gap, iface,
                       np.full(iface.size, s.gap), no_flow)


def effective_slip_length(s: Scenario, beta_pore):
    f = s.open_fraction
    b_max = s.ell / (2 * math.pi) * math.log(1.0 / math.cos(0.5 * math.pi * f))
    return 1.0 / (np.asarray(beta_pore, dtype=float) / f + 1.0 / b_max)


def pore_network_space() -> ParameterSpace:
    return ParameterSpace((
        MarginalDistribution.uniform("v_top", 5e-4, 1.5e-3, "m/s"),
        MarginalDistribution.uniform("g", 1e-7, 1e-5, "m^3/(s Pa)"),
        MarginalDistribution.uniform("beta_pore", 1e3, 1e5, "1/m"),
    ))


def _clip_length(a, b, box):
    """Length of the axis-aligned segment ``a -> b`` inside ``box = (x0, x1, y0, y1)``."""
    x0, x1, y0, y1 = box
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    if a[1] == b[1]:
        if not y0 <= a[1] <= y1:
            return 0.0
        return max(0.0, min(hi[0], x1) - max(lo[0], x0))
    if not x0 <= a[0] <= x1:
        return 0.0
    return max(0.0, min(hi[1], y1) - max(lo[1], y0))


class PoreNetworkModel:
    """Forward model ``(v_top, g, beta_pore) -> SRQs``.

    ``mode="volume"`` REV-averages throat fluxes; ``mode="surface"`` reports
    the throat cross-section velocity ``|Q|/w`` of the nearest throat for
    points inside the porous block.
    """

    def __init__(self, scenario: Scenario, mode: str = "volume", check_support: bool = False):
        if mode not in ("volume", "surface"):
            raise ValueError(f"unknown SRQ mode {mode!r}")
        self.scenario = s = scenario
        self.mode = mode
        self.space = pore_network_space()
        self._check = check_support
        self.network = net = lattice_network(s, 1.0)
        x_if = net.positions[net.interface, 0]
        unit = solve_network(net, net.interface, x_if - s.length)   # G = 1, g = 1
        self.unit = unit
        # tangential porous velocity on the interface pores, Q/|Gamma| (n . tau)
        on_if = np.isin(net.throats[:, 1], net.interface)
        area = net.interface_areas[np.searchsorted(net.interface, net.throats[on_if, 1])]
        v_tan = unit.flows[on_if] / area * net.directions[on_if, 0]
        self._w_unit = s.open_fraction * float(v_tan.mean())
        self._build_point_maps()

    def _build_point_maps(self):
        s, net, unit = self.scenario, self.network, self.unit
        ell = s.ell
        pos, (ny, nx), iface = pore_lattice(s)
        xs = pos[:nx, 0]
        ys = np.r_[pos[::nx][:ny, 1], s.gamma0]
        grid = np.vstack([unit.pressures[:nx * ny].reshape(ny, nx), unit.pressures[iface][None, :]])
        interp = RegularGridInterpolator((ys, xs), grid)
        self._porous_vel = []
        self._p_unit = []
        for p in s.points:
            if p.kind == PRESSURE:
                if p.y <= s.gamma0:
                    self._p_unit.append(float(interp([[p.y, np.clip(p.x, xs[0], xs[-1])]])[0]))
                else:
                    self._p_unit.append(p.x - s.length)
                self._porous_vel.append(None)
                continue
            self._p_unit.append(None)
            if self.mode == "surface" and p.y < s.gamma0:
                mids = 0.5 * (net.positions[net.throats[:, 0]] + net.positions[net.throats[:, 1]])
                k = int(np.argmin(np.hypot(mids[:, 0] - p.x, mids[:, 1] - p.y)))
                self._porous_vel.append(("surface", abs(unit.flows[k]) / net.widths[k]))
                continue
            box = (p.x - ell / 2, p.x + ell / 2, p.y - ell / 2, p.y + ell / 2)
            vec = np.zeros(2)
            for k, (i, j) in enumerate(net.throats):
                seg = _clip_length(net.positions[i], net.positions[j], box)
                if seg > 0:
                    vec += unit.flows[k] * seg * net.directions[k]
            self._porous_vel.append(("volume", vec / ell**2))

    @property
    def output_names(self):
        return self.scenario.point_ids

    def profile(self, v_top, g, beta_pore) -> ChannelProfile:
        s = self.scenario
        G = s.drive_gradient(v_top)
        gamma = np.full(np.shape(G), s.gamma0)
        return ChannelProfile(G, gamma, s.height, s.length, s.viscosity, effective_slip_length(s, beta_pore),
                              g * G * self._w_unit, np.zeros(np.shape(G)))

    def __call__(self, theta) -> np.ndarray:
        v, g, beta = _columns(theta, ("v_top", "g", "beta_pore"))
        if np.any(~(v > 0)) or np.any(~(g > 0)) or np.any(~(beta > 0)):
            raise ParameterError("pore-network parameters must be positive")
        if self._check:
            _check_support(self.space, (v, g, beta))
        s = self.scenario
        prof = self.profile(v, g, beta)
        G = prof.G
        out = []
        for p, pv, pp in zip(s.points, self._porous_vel, self._p_unit):
            if p.kind == PRESSURE:
                out.append(G * pp)
                continue
            mode, c = pv
            if mode == "surface":
                out.append(np.abs(g * G) * c)
                continue
            lo, hi = p.y - s.ell / 2, p.y + s.ell / 2
            free = 0.0
            if hi > s.gamma0:
                free = prof._integral(max(lo, s.gamma0) - s.gamma0, hi - s.gamma0) / s.ell
            vx = g * G * c[0] + free
            vy = g * G * c[1]
            out.append(np.hypot(vx, vy))
        return np.stack(out, axis=-1)


def solve_pore_network(s: Scenario, theta, mode: str = "volume"):
    """Single solve: returns ``(pressures, flow rates, SRQ vector)``."""
    v, g, beta = _columns(theta, ("v_top", "g", "beta_pore"))
    model = PoreNetworkModel(s, mode, check_support=True)
    srq = model(np.array([[float(v), float(g), float(beta)]]))[0]
    net = lattice_network(s, float(g))
    G = float(s.drive_gradient(v))
    sol = solve_network(net, net.interface, G * (net.positions[net.interface, 0] - s.length))
    return sol.pressures, sol.flows, srq
