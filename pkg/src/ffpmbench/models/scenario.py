"""Desk-scale benchmark geometry shared by every forward model.

All lengths are in metres.  The porous block is a ``rows x cols`` array of
square inclusions of side ``d`` on a square lattice of pitch ``ell``; the
top edge of the upper row is the nominal interface ``gamma0``.  The free
channel occupies ``gamma0 < y < H``.  Inflow enters through a segment of
the top wall, outflow leaves through a segment of the right wall.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..error_models import KINDS, PRESSURE, VELOCITY
from ..inference import CALIBRATION, VALIDATION, ObservationSet


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ExtractionPoint:
    id: str
    x: float
    y: float
    kind: str
    group: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScenarioError(f"point {self.id}: unknown SRQ kind {self.kind!r}")
        if self.group not in (CALIBRATION, VALIDATION):
            raise ScenarioError(f"point {self.id}: unknown group {self.group!r}")


MM = 1e-3


def _default_points():
    pts = []
    # velocity: deep porous, interface band and free channel
    for i, (x, y) in enumerate([(1.25, 1.25), (3.75, 1.25), (1.25, 2.25), (3.75, 2.25),
                                (1.25, 2.75), (3.75, 2.75), (1.25, 3.0), (3.75, 3.0)]):
        pts.append(ExtractionPoint(f"v{i + 1}", x * MM, y * MM, VELOCITY, CALIBRATION))
    for i, (x, y) in enumerate([(2.25, 1.25), (4.25, 1.75), (2.25, 2.25), (4.25, 2.25),
                                (2.25, 2.75), (4.25, 2.75), (2.25, 3.0), (4.25, 3.0)]):
        pts.append(ExtractionPoint(f"v{i + 9}", x * MM, y * MM, VELOCITY, VALIDATION))
    for i, (x, y) in enumerate([(1.25, 1.25), (3.75, 1.25), (1.25, 3.0), (3.75, 3.0)]):
        pts.append(ExtractionPoint(f"p{i + 1}", x * MM, y * MM, PRESSURE, CALIBRATION))
    for i, (x, y) in enumerate([(2.25, 1.75), (4.25, 1.75), (2.25, 3.0), (4.25, 3.0)]):
        pts.append(ExtractionPoint(f"p{i + 5}", x * MM, y * MM, PRESSURE, VALIDATION))
    return tuple(pts)


@dataclass(frozen=True)
class Scenario:
    """Geometry, fluid, interface constants and extraction layout.

    ``n1_bl`` and ``m1_bl`` are the boundary-layer constants of the
    generalized interface condition; they have no built-in values and must
    come from configuration.
    """

    length: float = 5.25 * MM
    height: float = 3.5 * MM
    gamma0: float = 2.5 * MM
    pitch: float = 0.5 * MM
    inclusion: float = 0.25 * MM
    rows: int = 5
    cols: int = 10
    inlet: tuple = (1.5 * MM, 3.0 * MM)
    outlet: tuple = (3.0 * MM, 3.5 * MM)
    viscosity: float = 1e-3
    n1_bl: float | None = None
    m1_bl: float | None = None
    pore_half_ratio: float = 2.0
    grid_cells_per_inclusion: int = 10
    points: tuple = field(default_factory=_default_points)
    throat_overrides: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "inlet", tuple(float(v) for v in self.inlet))
        object.__setattr__(self, "outlet", tuple(float(v) for v in self.outlet))
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "throat_overrides", tuple(tuple(t) for t in self.throat_overrides))
        self.validate()

    # -- geometry -------------------------------------------------------
    @property
    def ell(self) -> float:
        """Characteristic pore size (periodicity cell side)."""
        return self.pitch

    @property
    def gap(self) -> float:
        return self.pitch - self.inclusion

    @property
    def block_origin(self) -> tuple[float, float]:
        """Lower-left corner of the lower-left inclusion."""
        y0 = self.gamma0 - (self.rows - 1) * self.pitch - self.inclusion
        return self.gap, y0

    @property
    def porosity(self) -> float:
        return 1.0 - (self.inclusion / self.pitch) ** 2

    @property
    def open_fraction(self) -> float:
        """Fraction of the interface line occupied by pore openings."""
        return self.gap / self.pitch

    def inclusion_boxes(self) -> np.ndarray:
        """``(rows*cols, 4)`` array of ``(x0, x1, y0, y1)``."""
        x0, y0 = self.block_origin
        out = []
        for j in range(self.rows):
            for i in range(self.cols):
                xa, ya = x0 + i * self.pitch, y0 + j * self.pitch
                out.append((xa, xa + self.inclusion, ya, ya + self.inclusion))
        return np.array(out)

    @property
    def grid_spacing(self) -> float:
        return self.inclusion / self.grid_cells_per_inclusion

    def validate(self):
        if not 0 < self.gamma0 < self.height:
            raise ScenarioError("need 0 < gamma0 < H")
        if self.pitch <= 0 or not 0 < self.inclusion < self.pitch:
            raise ScenarioError("need 0 < inclusion < pitch")
        if self.viscosity <= 0:
            raise ScenarioError("viscosity must be positive")
        if self.rows < 1 or self.cols < 1:
            raise ScenarioError("inclusion array must be non-empty")
        x0, y0 = self.block_origin
        if y0 <= 0 or x0 + (self.cols - 1) * self.pitch + self.inclusion >= self.length:
            raise ScenarioError("inclusions must lie strictly inside the domain")
        lo, hi = self.inlet
        if not 0 <= lo < hi <= self.length:
            raise ScenarioError("inlet segment must lie on the top wall")
        lo, hi = self.outlet
        if not 0 <= lo < hi <= self.height:
            raise ScenarioError("outlet segment must lie on the right wall")
        if self.pore_half_ratio <= 0:
            raise ScenarioError("pore_half_ratio must be positive")
        ids = [p.id for p in self.points]
        if len(set(ids)) != len(ids):
            raise ScenarioError("extraction point ids must be unique")
        for p in self.points:
            self.check_point(p)

    def check_point(self, p: ExtractionPoint):
        half = 0.5 * self.ell
        tol = 1e-12
        if (p.x - half < -tol or p.x + half > self.length + tol
                or p.y - half < -tol or p.y + half > self.height + tol):
            raise ScenarioError(f"extraction point {p.id} at ({p.x:g}, {p.y:g}): "
                                "averaging volume extends outside the domain")

    # -- drive and layout -------------------------------------------------
    def drive_gradient(self, v_top, gamma=None):
        """Streamwise pressure gradient giving a no-slip Poiseuille peak ``v_top``."""
        gamma = self.gamma0 if gamma is None else gamma
        return -8.0 * self.viscosity * np.asarray(v_top, dtype=float) / (self.height - np.asarray(gamma)) ** 2

    @property
    def point_ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.points)

    @property
    def kinds(self) -> tuple[str, ...]:
        return tuple(p.kind for p in self.points)

    @property
    def positions(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points])

    def observation_set(self, values) -> ObservationSet:
        return ObservationSet(self.point_ids, self.positions, self.kinds,
                              tuple(p.group for p in self.points), values)

    def nearest_throat(self, x: float, y: float):
        """Midpoint, unit axis and width of the lattice throat closest to ``(x, y)``.

        Throats join lattice pores at gap crossings; interface throats run
        from the top pore row to the interface.
        """
        mids, axes = throat_midpoints(self)
        k = int(np.argmin(np.hypot(mids[:, 0] - x, mids[:, 1] - y)))
        return mids[k], axes[k], self.gap

    def with_constants(self, n1_bl, m1_bl) -> "Scenario":
        return replace(self, n1_bl=n1_bl, m1_bl=m1_bl)

    # -- serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("length", "height", "gamma0", "pitch", "inclusion", "rows",
                                           "cols", "viscosity", "pore_half_ratio",
                                           "grid_cells_per_inclusion")}
        d["inlet"] = list(self.inlet)
        d["outlet"] = list(self.outlet)
        if self.n1_bl is not None:
            d["n1_bl"] = self.n1_bl
        if self.m1_bl is not None:
            d["m1_bl"] = self.m1_bl
        d["points"] = [{"id": p.id, "x": p.x, "y": p.y, "kind": p.kind, "group": p.group} for p in self.points]
        if self.throat_overrides:
            d["throat_overrides"] = [list(t) for t in self.throat_overrides]
        return d

    @classmethod
    def from_dict(cls, d: dict, units: float = 1.0) -> "Scenario":
        """Build from a mapping; lengths are multiplied by ``units`` (1e-3 for mm)."""
        kw = {}
        for k in ("length", "height", "gamma0", "pitch", "inclusion"):
            if k in d:
                kw[k] = float(d[k]) * units
        for k in ("inlet", "outlet"):
            if k in d:
                kw[k] = tuple(float(v) * units for v in d[k])
        for k in ("rows", "cols", "grid_cells_per_inclusion"):
            if k in d:
                kw[k] = int(d[k])
        for k in ("viscosity", "n1_bl", "m1_bl", "pore_half_ratio"):
            if k in d:
                kw[k] = float(d[k])
        if "points" in d:
            kw["points"] = tuple(ExtractionPoint(str(p["id"]), float(p["x"]) * units, float(p["y"]) * units,
                                                 p["kind"], p["group"]) for p in d["points"])
        if "throat_overrides" in d:
            kw["throat_overrides"] = tuple((int(a), int(b), float(f)) for a, b, f in d["throat_overrides"])
        return cls(**kw)


def pore_lattice(s: Scenario):
    """Pore centres at gap crossings plus interface pores on ``gamma0``.

    Returns ``(positions, interior_shape, interface_ids)``; pore ``(i, j)``
    has id ``j * (cols + 1) + i``.
    """
    nx, ny = s.cols + 1, s.rows
    x0, y0 = s.block_origin
    xs = x0 - 0.5 * s.gap + s.pitch * np.arange(nx)
    ys = y0 - 0.5 * s.gap + s.pitch * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys)
    interior = np.column_stack([gx.ravel(), gy.ravel()])
    top = np.column_stack([xs, np.full(nx, s.gamma0)])
    pos = np.vstack([interior, top])
    return pos, (ny, nx), np.arange(nx * ny, nx * ny + nx)


def lattice_throats(s: Scenario) -> np.ndarray:
    """Throat list ``(i, j)`` of the pore lattice (horizontal, vertical, interface)."""
    ny, nx = s.rows, s.cols + 1
    idx = np.arange(nx * ny).reshape(ny, nx)
    h = np.column_stack([idx[:, :-1].ravel(), idx[:, 1:].ravel()])
    v = np.column_stack([idx[:-1, :].ravel(), idx[1:, :].ravel()])
    top = np.column_stack([idx[-1, :], nx * ny + np.arange(nx)])
    return np.vstack([h, v, top])


def throat_midpoints(s: Scenario):
    pos, _, _ = pore_lattice(s)
    t = lattice_throats(s)
    a, b = pos[t[:, 0]], pos[t[:, 1]]
    axis = b - a
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    return 0.5 * (a + b), axis


def default_scenario(**kw) -> Scenario:
    return Scenario(**kw)
