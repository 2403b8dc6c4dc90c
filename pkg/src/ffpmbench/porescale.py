"""Pore-scale Stokes reference solver on a masked staggered (MAC) grid.

Velocity components live on cell faces and pressure in cell centres.  Solid
cells are removed from the unknowns: faces touching a solid cell carry zero
velocity and tangential no-slip against solid or wall uses a mirrored ghost
value.  Boundary segments prescribe inflow (normal velocity) or a
do-nothing outflow ``mu du/dn - p n = 0``, discretised on a half control
volume so the saddle-point matrix stays symmetric.

Unknowns are scaled to ``q = p h / mu`` and momentum rows are divided by
``mu`` so every matrix entry is O(1)::

    [ A   B^T ] [u]   [f]
    [ B   0   ] [q] = [g]

``A`` is the SPD vector Laplacian (times ``h**2``) and ``B`` is minus the
face-flux divergence.  The default solver is MINRES preconditioned with
``diag(A^-1, I)``; the scaled Schur complement is spectrally close to the
identity so the iteration count does not grow with the grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .error_models import PRESSURE, RichardsonFit, richardson_fit
from .inference import ObservationSet
from .models.scenario import Scenario

SIDES = ("left", "right", "bottom", "top")
INFLOW, OUTFLOW = "inflow", "outflow"


class GridError(ValueError):
    """Geometry and grid spacing are incompatible."""


class SolverError(RuntimeError):
    """The linear solver did not reach the requested residual."""


@dataclass(frozen=True)
class BoundarySegment:
    """Open part of one side of the box; the rest of the boundary is a wall.

    ``profile(t)`` gives the inflow speed (positive into the domain) at the
    boundary coordinate ``t`` and is ignored for outflow segments.
    """

    side: str
    lo: float
    hi: float
    kind: str
    profile: Callable | None = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise GridError(f"unknown side {self.side!r}")
        if self.kind not in (INFLOW, OUTFLOW):
            raise GridError(f"unknown segment kind {self.kind!r}")
        if self.kind == INFLOW and self.profile is None:
            raise GridError("inflow segment needs a profile")
        if not self.lo < self.hi:
            raise GridError("segment needs lo < hi")

    def covers(self, t):
        t = np.asarray(t, dtype=float)
        return (t > self.lo) & (t < self.hi)


def _integer_ratio(a: float, h: float, what: str) -> int:
    n = a / h
    r = round(n)
    if abs(n - r) > 1e-8 * max(1.0, abs(n)):
        raise GridError(f"grid spacing {h:g} does not divide {what} {a:g}")
    return int(r)


@dataclass(frozen=True)
class PoreGeometry:
    """Box ``[0, L] x [0, H]`` on a uniform grid with a cell-wise solid mask.

    ``solid`` has shape ``(nx, ny)`` with ``solid[i, j]`` the cell centred at
    ``((i + 1/2) h, (j + 1/2) h)``.
    """

    length: float
    height: float
    h: float
    solid: np.ndarray
    segments: tuple

    def __post_init__(self):
        nx = _integer_ratio(self.length, self.h, "the domain length")
        ny = _integer_ratio(self.height, self.h, "the domain height")
        solid = np.asarray(self.solid, dtype=bool)
        if solid.shape != (nx, ny):
            raise GridError(f"solid mask has shape {solid.shape}, grid is {(nx, ny)}")
        object.__setattr__(self, "solid", solid)
        object.__setattr__(self, "segments", tuple(self.segments))
        for seg in self.segments:
            extent = self.length if seg.side in ("bottom", "top") else self.height
            if seg.lo < -1e-12 * extent or seg.hi > extent * (1 + 1e-12):
                raise GridError(f"{seg.kind} segment on the {seg.side} side leaves the boundary")

    @property
    def shape(self) -> tuple[int, int]:
        return self.solid.shape

    @property
    def fluid(self) -> np.ndarray:
        return ~self.solid

    @property
    def xc(self):
        return (np.arange(self.shape[0]) + 0.5) * self.h

    @property
    def yc(self):
        return (np.arange(self.shape[1]) + 0.5) * self.h

    @classmethod
    def from_boxes(cls, length, height, h, boxes, segments):
        """Rasterise solid rectangles ``(x0, x1, y0, y1)``; edges must sit on grid lines."""
        nx = _integer_ratio(length, h, "the domain length")
        ny = _integer_ratio(height, h, "the domain height")
        solid = np.zeros((nx, ny), dtype=bool)
        for x0, x1, y0, y1 in np.atleast_2d(boxes) if len(boxes) else []:
            i0 = _integer_ratio(x0, h, "an inclusion edge")
            i1 = _integer_ratio(x1, h, "an inclusion edge")
            j0 = _integer_ratio(y0, h, "an inclusion edge")
            j1 = _integer_ratio(y1, h, "an inclusion edge")
            if i0 <= 0 or j0 <= 0 or i1 >= nx or j1 >= ny:
                raise GridError("inclusions must lie strictly inside the domain")
            solid[i0:i1, j0:j1] = True
        return cls(length, height, h, solid, tuple(segments))

    @classmethod
    def from_scenario(cls, s: Scenario, v_top: float, cells_per_inclusion: int | None = None):
        """Inclusion array with a half-sine inflow spanning the inlet and an outlet on the right."""
        n = s.grid_cells_per_inclusion if cells_per_inclusion is None else int(cells_per_inclusion)
        if n < 1:
            raise GridError("need at least one cell per inclusion")
        h = s.inclusion / n
        _integer_ratio(s.pitch, h, "the pitch")
        a, b = s.inlet
        inflow = BoundarySegment("top", a, b, INFLOW, sinusoidal_inflow(v_top, a, b))
        outflow = BoundarySegment("right", s.outlet[0], s.outlet[1], OUTFLOW)
        return cls.from_boxes(s.length, s.height, h, s.inclusion_boxes(), (inflow, outflow))

    def mirrored(self) -> "PoreGeometry":
        """Reflect about ``x = L/2``, swapping left and right boundaries."""
        segs = []
        for seg in self.segments:
            if seg.side in ("left", "right"):
                side = "right" if seg.side == "left" else "left"
                segs.append(BoundarySegment(side, seg.lo, seg.hi, seg.kind, seg.profile))
            else:
                prof = None
                if seg.profile is not None:
                    p0, L = seg.profile, self.length
                    prof = (lambda t, p0=p0, L=L: p0(L - np.asarray(t)))
                segs.append(BoundarySegment(seg.side, self.length - seg.hi, self.length - seg.lo,
                                            seg.kind, prof))
        return PoreGeometry(self.length, self.height, self.h, self.solid[::-1, :].copy(), tuple(segs))


def sinusoidal_inflow(v_top: float, a: float, b: float) -> Callable:
    """Inflow speed ``v_top sin(pi (x - a)/(b - a))`` over one half-period of the inlet."""
    if not v_top > 0:
        raise ValueError("V_top must be positive")

    def profile(x):
        return v_top * np.sin(np.pi * (np.asarray(x, dtype=float) - a) / (b - a))
    return profile


def parabolic_inflow(u_max: float, height: float) -> Callable:
    def profile(y):
        y = np.asarray(y, dtype=float)
        return 4.0 * u_max * y * (height - y) / height**2
    return profile


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

_UNKNOWN, _FIXED, _INACTIVE = 0, 1, 2


@dataclass
class _Component:
    """Face bookkeeping for one velocity component.

    Arrays are indexed ``[n, t]`` with ``n`` along the component's own
    direction (faces ``0..N``) and ``t`` across it (cells ``0..T-1``).
    """

    status: np.ndarray
    value: np.ndarray
    outlet: np.ndarray
    index: np.ndarray


def _side_layout(geom: PoreGeometry, axis: int):
    """Low/high normal sides and low/high tangential sides for a component."""
    if axis == 0:
        return ("left", "right"), ("bottom", "top")
    return ("bottom", "top"), ("left", "right")


def _segment_at(geom: PoreGeometry, side: str, t):
    """Per-coordinate segment kind on a side: '' (wall), INFLOW or OUTFLOW, plus inflow values."""
    t = np.asarray(t, dtype=float)
    kind = np.full(t.shape, "", dtype=object)
    val = np.zeros(t.shape)
    for seg in geom.segments:
        if seg.side != side:
            continue
        m = seg.covers(t)
        kind[m] = seg.kind
        if seg.kind == INFLOW:
            val[m] = seg.profile(t[m])
    return kind, val


def _classify(geom: PoreGeometry, axis: int) -> _Component:
    fluid = geom.fluid if axis == 0 else geom.fluid.T
    N, T = fluid.shape
    h = geom.h
    status = np.full((N + 1, T), _INACTIVE, dtype=np.int8)
    value = np.zeros((N + 1, T))
    outlet = np.zeros((N + 1, T), dtype=bool)
    lo_side, hi_side = _side_layout(geom, axis)[0]

    both = fluid[:-1, :] & fluid[1:, :]
    one = fluid[:-1, :] ^ fluid[1:, :]
    status[1:-1][both] = _UNKNOWN
    status[1:-1][one] = _FIXED

    t = (np.arange(T) + 0.5) * h
    for n, side, sign, cell in ((0, lo_side, 1.0, fluid[0]), (N, hi_side, -1.0, fluid[-1])):
        kind, val = _segment_at(geom, side, t)
        status[n, cell] = _FIXED
        inflow = cell & (kind == INFLOW)
        value[n, inflow] = sign * val[inflow]
        out = cell & (kind == OUTFLOW)
        status[n, out] = _UNKNOWN
        outlet[n, out] = True

    index = np.full((N + 1, T), -1, dtype=np.int64)
    unk = status == _UNKNOWN
    index[unk] = np.arange(int(unk.sum()))
    return _Component(status, value, outlet, index)


def _momentum_block(geom: PoreGeometry, axis: int, comp: _Component):
    """Scaled vector-Laplacian rows and right-hand side for one component."""
    fluid = geom.fluid if axis == 0 else geom.fluid.T
    N, T = fluid.shape
    h = geom.h
    _, (tlo, thi) = _side_layout(geom, axis)
    n_unk = int((comp.status == _UNKNOWN).sum())
    rows, cols, vals = [], [], []
    rhs = np.zeros(n_unk)
    diag = np.zeros(n_unk)

    ns, ts = np.nonzero(comp.status == _UNKNOWN)
    me = comp.index[ns, ts]
    half = comp.outlet[ns, ts]
    w_t = np.where(half, 0.5, 1.0)

    def couple(mask, nn, tt, w):
        """Add ``w (u_c - u_nb)`` for neighbours that are real faces."""
        st = comp.status[nn, tt]
        diag_add = np.where(mask, w, 0.0)
        np.add.at(diag, me, diag_add)
        unk = mask & (st == _UNKNOWN)
        rows.append(me[unk])
        cols.append(comp.index[nn[unk], tt[unk]])
        vals.append(-w[unk])
        fix = mask & (st == _FIXED)
        np.add.at(rhs, me[fix], w[fix] * comp.value[nn[fix], tt[fix]])
        # a face between two solid cells stands in for a wall: mirrored ghost
        ghost = mask & (st == _INACTIVE)
        np.add.at(diag, me[ghost], w[ghost])

    # along the component direction: neighbouring faces across adjacent fluid cells
    for step in (-1, 1):
        nn = ns + step
        ok = (nn >= 0) & (nn <= N)
        couple(ok, np.clip(nn, 0, N), ts, np.ones_like(w_t))

    # across: neighbours in the tangential direction
    for step, side in ((-1, tlo), (1, thi)):
        tt = ts + step
        inside = (tt >= 0) & (tt < T)
        couple(inside, ns, np.clip(tt, 0, T - 1), w_t)
        out = ~inside
        if out.any():
            # boundary of the box: wall or inflow -> zero tangential velocity
            # (mirrored ghost); outflow -> zero normal derivative (no term)
            kind, _ = _segment_at(geom, side, ns[out] * h)
            wall = kind != OUTFLOW
            idx = np.nonzero(out)[0][wall]
            np.add.at(diag, me[idx], 2 * w_t[idx])

    rows.append(np.arange(n_unk))
    cols.append(np.arange(n_unk))
    vals.append(diag)
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_unk, n_unk))
    return A, rhs


def _divergence_block(geom: PoreGeometry, axis: int, comp: _Component, cell_index: np.ndarray):
    """Rows of ``-div`` for fluid cells; returns (B, rhs contribution)."""
    fluid = geom.fluid if axis == 0 else geom.fluid.T
    cidx = cell_index if axis == 0 else cell_index.T
    N, T = fluid.shape
    n_unk = int((comp.status == _UNKNOWN).sum())
    n_cells = int(cell_index.max()) + 1 if cell_index.size else 0
    rows, cols, vals = [], [], []
    g = np.zeros(n_cells)
    # cell (n, t) has low face n and high face n+1: -(u_hi - u_lo)
    for off, sign in ((0, 1.0), (1, -1.0)):
        ns, ts = np.nonzero(fluid)
        fn = ns + off
        st = comp.status[fn, ts]
        c = cidx[ns, ts]
        unk = st == _UNKNOWN
        rows.append(c[unk])
        cols.append(comp.index[fn[unk], ts[unk]])
        vals.append(np.full(int(unk.sum()), sign))
        fix = st == _FIXED
        np.add.at(g, c[fix], -sign * comp.value[fn[fix], ts[fix]])
    B = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_cells, n_unk))
    return B, g


@dataclass
class StokesSystem:
    geometry: PoreGeometry
    matrix: sp.csr_matrix
    rhs: np.ndarray
    comps: tuple
    cell_index: np.ndarray
    n_velocity: tuple
    pinned: int | None


def assemble(geom: PoreGeometry, mu: float = 1.0) -> StokesSystem:
    """Scaled saddle-point system for the geometry (independent of ``mu``)."""
    if not geom.fluid.any():
        raise GridError("the geometry has no fluid cells")
    comps = (_classify(geom, 0), _classify(geom, 1))
    cell_index = np.full(geom.shape, -1, dtype=np.int64)
    cell_index[geom.fluid] = np.arange(int(geom.fluid.sum()))
    blocks = [_momentum_block(geom, a, c) for a, c in enumerate(comps)]
    divs = [_divergence_block(geom, a, c, cell_index) for a, c in enumerate(comps)]
    A = sp.block_diag([b[0] for b in blocks], format="csr")
    B = sp.hstack([d[0] for d in divs], format="csr")
    f = np.concatenate([b[1] for b in blocks])
    g = divs[0][1] + divs[1][1]

    pinned = None
    if not any(c.outlet.any() for c in comps):
        # all-Dirichlet: remove the pressure null space by pinning one cell
        pinned = 0
        keep = np.arange(B.shape[0]) != pinned
        B = B[keep]
        g = g[keep]
    K = sp.bmat([[A, B.T], [B, None]], format="csr")
    return StokesSystem(geom, K, np.concatenate([f, g]), comps, cell_index,
                        (blocks[0][0].shape[0], blocks[1][0].shape[0]), pinned)


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

@dataclass
class SolveInfo:
    method: str
    iterations: int
    residual: float


@dataclass
class StaggeredField:
    """Face velocities, cell pressures (NaN in solid) and the solid mask.

    ``u`` has shape ``(nx + 1, ny)`` and ``v`` has shape ``(nx, ny + 1)``.
    """

    geometry: PoreGeometry
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    info: SolveInfo | None = None

    @property
    def solid(self):
        return self.geometry.solid

    def cell_velocity(self):
        """Cell-centred velocity by averaging opposite faces (zero in solid cells)."""
        uc = 0.5 * (self.u[:-1, :] + self.u[1:, :])
        vc = 0.5 * (self.v[:, :-1] + self.v[:, 1:])
        uc[self.solid] = 0.0
        vc[self.solid] = 0.0
        return uc, vc

    def divergence(self):
        """Per-cell face-flux imbalance divided by ``h`` (velocity units); zero in solid."""
        d = (self.u[1:, :] - self.u[:-1, :]) + (self.v[:, 1:] - self.v[:, :-1])
        d[self.solid] = 0.0
        return d

    def boundary_flux(self, side: str) -> float:
        """Outward volume flux per unit depth through one side of the box."""
        h = self.geometry.h
        if side == "left":
            return float(-self.u[0, :].sum() * h)
        if side == "right":
            return float(self.u[-1, :].sum() * h)
        if side == "bottom":
            return float(-self.v[:, 0].sum() * h)
        if side == "top":
            return float(self.v[:, -1].sum() * h)
        raise GridError(f"unknown side {side!r}")

    def max_speed(self) -> float:
        return float(max(np.abs(self.u).max(), np.abs(self.v).max()))

    def to_csv(self, path):
        """Structured-grid export ``x, y, u, v, p`` at cell centres."""
        uc, vc = self.cell_velocity()
        g = self.geometry
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "u", "v", "p"])
            for j, y in enumerate(g.yc):
                for i, x in enumerate(g.xc):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(uc[i, j])),
                                repr(float(vc[i, j])), repr(float(self.p[i, j]))])


def _unpack(system: StokesSystem, x: np.ndarray, mu: float) -> tuple:
    g = system.geometry
    nu, nv = system.n_velocity
    out = []
    for comp, chunk in zip(system.comps, (x[:nu], x[nu:nu + nv])):
        full = comp.value.copy()
        unk = comp.status == _UNKNOWN
        full[unk] = chunk[comp.index[unk]]
        full[comp.status == _INACTIVE] = 0.0
        out.append(full)
    u = out[0]
    v = out[1].T
    q = x[nu + nv:]
    if system.pinned is not None:
        q = np.insert(q, system.pinned, 0.0)
    p = np.full(g.shape, np.nan)
    p[g.fluid] = q[system.cell_index[g.fluid]] * mu / g.h
    return u, v, p


def solve_system(system: StokesSystem, method: str = "minres", rtol: float = 1e-10,
                 maxiter: int = 2000) -> tuple[np.ndarray, SolveInfo]:
    K, b = system.matrix, system.rhs
    nb = float(np.linalg.norm(b))
    if nb == 0.0:
        return np.zeros_like(b), SolveInfo(method, 0, 0.0)
    if method == "direct":
        x = spla.splu(K.tocsc()).solve(b)
        it = 0
    elif method == "minres":
        nu = sum(system.n_velocity)
        lu = spla.splu(K[:nu, :nu].tocsc())
        n = K.shape[0]

        def prec(r):
            out = r.copy()
            out[:nu] = lu.solve(r[:nu])
            return out
        M = spla.LinearOperator((n, n), matvec=prec, dtype=float)
        count = [0]

        def cb(_):
            count[0] += 1
        # MINRES stops on the preconditioned residual, so warm-restart tightening
        # the target by the observed gap
        x = np.zeros_like(b)
        inner = rtol
        for _ in range(6):
            x, flag = spla.minres(K, b, x0=x, M=M, rtol=inner, maxiter=maxiter, callback=cb)
            if flag > 0 or count[0] > maxiter:
                raise SolverError(f"MINRES did not converge within {maxiter} iterations")
            res = np.linalg.norm(K @ x - b) / nb
            if res <= rtol:
                break
            inner *= max(1e-4, 0.5 * rtol / res)
        it = count[0]
    else:
        raise ValueError(f"unknown linear solver {method!r}")
    res = float(np.linalg.norm(K @ x - b)) / nb
    if res > rtol:
        raise SolverError(f"relative residual {res:.2e} above the requested {rtol:.0e}")
    return x, SolveInfo(method, it, res)


def solve_geometry(geom: PoreGeometry, mu: float, method: str = "minres", rtol: float = 1e-10,
                   maxiter: int = 2000) -> StaggeredField:
    system = assemble(geom, mu)
    x, info = solve_system(system, method, rtol, maxiter)
    u, v, p = _unpack(system, x, mu)
    return StaggeredField(geom, u, v, p, info)


def solve_stokes_mac(s: Scenario, v_top: float, cells_per_inclusion: int | None = None,
                     method: str = "minres", rtol: float = 1e-10, maxiter: int = 2000) -> StaggeredField:
    """Pore-scale Stokes flow through the scenario's inclusion array."""
    if not v_top > 0:
        raise ValueError("V_top must be positive")
    geom = PoreGeometry.from_scenario(s, v_top, cells_per_inclusion)
    return solve_geometry(geom, s.viscosity, method, rtol, maxiter)


# ---------------------------------------------------------------------------
# averaging and extraction
# ---------------------------------------------------------------------------

def _overlap(edges_lo, h, a, b):
    lo = np.maximum(edges_lo, a)
    hi = np.minimum(edges_lo + h, b)
    return np.clip(hi - lo, 0.0, None) / h


def _rev_weights(geom: PoreGeometry, x0, ell):
    x, y = float(x0[0]), float(x0[1])
    half = 0.5 * ell
    tol = 1e-12 * max(geom.length, geom.height)
    if x - half < -tol or x + half > geom.length + tol or y - half < -tol or y + half > geom.height + tol:
        raise GridError(f"averaging volume around ({x:g}, {y:g}) extends outside the domain")
    nx, ny = geom.shape
    wx = _overlap(np.arange(nx) * geom.h, geom.h, x - half, x + half)
    wy = _overlap(np.arange(ny) * geom.h, geom.h, y - half, y + half)
    return np.outer(wx, wy)


def volume_average(fld: StaggeredField, x0, ell: float) -> np.ndarray:
    """Superficial average over the square REV: fluid integral over the full REV area."""
    w = _rev_weights(fld.geometry, x0, ell)
    uc, vc = fld.cell_velocity()
    total = w.sum()
    return np.array([(w * uc).sum() / total, (w * vc).sum() / total])


def pressure_average(fld: StaggeredField, x0, ell: float) -> float:
    """Intrinsic (fluid-only) pressure average over the REV."""
    w = _rev_weights(fld.geometry, x0, ell) * fld.geometry.fluid
    if w.sum() == 0:
        raise GridError(f"averaging volume around ({x0[0]:g}, {x0[1]:g}) contains no fluid")
    return float((w * np.nan_to_num(fld.p)).sum() / w.sum())


def throat_average(fld: StaggeredField, mid, axis, width) -> float:
    """Mean normal velocity over the throat cross-section through ``mid``."""
    g = fld.geometry
    h = g.h
    if abs(axis[0]) >= abs(axis[1]):
        n = int(round(mid[0] / h))
        t = (np.arange(g.shape[1]) + 0.5) * h
        sel = np.abs(t - mid[1]) < 0.5 * width
        vals = fld.u[n, sel]
    else:
        n = int(round(mid[1] / h))
        t = (np.arange(g.shape[0]) + 0.5) * h
        sel = np.abs(t - mid[0]) < 0.5 * width
        vals = fld.v[sel, n]
    if vals.size == 0:
        raise GridError("throat cross-section contains no faces")
    return float(vals.mean())


def extract_values(fld: StaggeredField, s: Scenario, mode: str = "volume") -> np.ndarray:
    """SRQ vector in the scenario's point order.

    Velocity SRQs are magnitudes of the REV average; with ``mode="surface"``
    points below the nominal interface use the nearest throat cross-section
    instead.  Pressure SRQs are intrinsic REV averages.
    """
    if mode not in ("volume", "surface"):
        raise ValueError(f"unknown averaging mode {mode!r}")
    out = []
    for p in s.points:
        s.check_point(p)
        pos = (p.x, p.y)
        if p.kind == PRESSURE:
            out.append(pressure_average(fld, pos, s.ell))
        elif mode == "surface" and p.y < s.gamma0:
            mid, axis, width = s.nearest_throat(p.x, p.y)
            out.append(abs(throat_average(fld, mid, axis, width)))
        else:
            out.append(float(np.hypot(*volume_average(fld, pos, s.ell))))
    return np.array(out)


def extract_reference(fld: StaggeredField, s: Scenario, mode: str = "volume",
                      noise_scale: float | None = None) -> ObservationSet:
    obs = s.observation_set(extract_values(fld, s, mode))
    if noise_scale is not None:
        obs = ObservationSet(obs.ids, obs.positions, obs.kinds, obs.groups, obs.values, noise_scale)
    return obs


# ---------------------------------------------------------------------------
# discretisation error
# ---------------------------------------------------------------------------

@dataclass
class ReferenceRun:
    """SRQs at every refinement level plus the Richardson fit over all levels."""

    spacings: tuple
    level_values: np.ndarray
    fit: RichardsonFit

    @property
    def values(self) -> np.ndarray:
        """SRQs on the finest grid."""
        return self.level_values[int(np.argmin(self.spacings))]

    @property
    def numerical_variance(self) -> np.ndarray:
        return self.fit.numerical_variance


def reference_with_error(s: Scenario, v_top: float, levels=(5, 10, 20), p_hat: float = 2.0,
                         modes=("volume",), method: str = "minres", rtol: float = 1e-10,
                         maxiter: int = 2000) -> dict:
    """Solve on a refinement set (cells per inclusion) and fit Richardson per output.

    Returns one :class:`ReferenceRun` per averaging mode; every mode is
    extracted from the same solves.
    """
    levels = tuple(sorted(set(int(n) for n in levels)))
    if len(levels) < 3:
        raise ValueError("need at least three distinct refinement levels")
    hs, vals = [], {m: [] for m in modes}
    for n in levels:
        fld = solve_stokes_mac(s, v_top, n, method=method, rtol=rtol, maxiter=maxiter)
        hs.append(fld.geometry.h)
        for m in modes:
            vals[m].append(extract_values(fld, s, m))
    out = {}
    for m in modes:
        v = np.array(vals[m])
        out[m] = ReferenceRun(tuple(hs), v, richardson_fit(hs, v, p_hat))
    return out
