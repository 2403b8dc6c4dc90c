import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffpmbench.error_models import observed_order
from ffpmbench.models.scenario import Scenario, ScenarioError
from ffpmbench.porescale import (INFLOW, OUTFLOW, BoundarySegment, GridError, PoreGeometry,
                                 SolverError, StaggeredField, extract_reference, extract_values,
                                 parabolic_inflow, pressure_average, reference_with_error,
                                 solve_geometry, solve_stokes_mac, volume_average)

L, H, U, MU = 2.0, 1.0, 1.0, 1.0
COARSE = Scenario(n1_bl=-0.1, m1_bl=-0.005, grid_cells_per_inclusion=2)


def channel(n, mu=MU):
    h = H / n
    segs = [BoundarySegment("left", 0, H, INFLOW, parabolic_inflow(U, H)),
            BoundarySegment("right", 0, H, OUTFLOW)]
    return solve_geometry(PoreGeometry.from_boxes(L, H, h, [], segs), mu, method="direct")


@pytest.fixture(scope="module")
def desk():
    return solve_stokes_mac(COARSE, 1e-3)


def synthetic(geom, fu, fv, fp=lambda x, y: 0.0 * x):
    """Field with analytic values on faces and cells, zero on solid faces."""
    h = geom.h
    nx, ny = geom.shape
    xu, yu = np.meshgrid(np.arange(nx + 1) * h, (np.arange(ny) + 0.5) * h, indexing="ij")
    xv, yv = np.meshgrid((np.arange(nx) + 0.5) * h, np.arange(ny + 1) * h, indexing="ij")
    xc, yc = np.meshgrid(geom.xc, geom.yc, indexing="ij")
    u, v, p = fu(xu, yu) * 1.0, fv(xv, yv) * 1.0, fp(xc, yc) * 1.0
    p = np.where(geom.solid, np.nan, p)
    return StaggeredField(geom, u, v, p)


class TestPoiseuille:
    def test_developed_profile_converges_second_order(self):
        hs, errs, grads = [], [], []
        for n in (16, 32, 64):
            f = channel(n)
            y = f.geometry.yc
            exact = 4 * U * y * (H - y) / H**2
            # developed half of the channel
            errs.append(np.abs(f.u[n:] - exact).max())
            hs.append(H / n)
            i0, i1 = n, 3 * n // 2
            grads.append((f.p[i1, n // 2] - f.p[i0, n // 2]) / (f.geometry.xc[i1] - f.geometry.xc[i0]))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert abs(slope - 2.0) <= 0.3
        assert errs[-1] < 5e-4
        p, fit = observed_order(hs, grads)
        assert abs(p - 2.0) <= 0.3
        np.testing.assert_allclose(fit.f_bar, -8 * MU * U / H**2, rtol=1e-4)

    def test_pressure_scales_with_viscosity(self):
        a, b = channel(8), channel(8, mu=3.0)
        np.testing.assert_allclose(b.u, a.u, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(b.p, 3.0 * a.p, rtol=1e-10)

    def test_solvers_agree(self):
        segs = [BoundarySegment("left", 0, H, INFLOW, parabolic_inflow(U, H)),
                BoundarySegment("right", 0, H, OUTFLOW)]
        g = PoreGeometry.from_boxes(L, H, H / 8, [], segs)
        a = solve_geometry(g, MU, method="direct")
        b = solve_geometry(g, MU, method="minres")
        assert b.info.residual <= 1e-10
        np.testing.assert_allclose(b.u, a.u, atol=1e-8)
        np.testing.assert_allclose(b.p, a.p, atol=1e-7)


class TestDeskScale:
    def test_residual_and_divergence(self, desk):
        assert desk.info.residual <= 1e-10
        assert np.abs(desk.divergence()).max() <= 1e-8 * desk.max_speed()

    def test_mass_balance(self, desk):
        inflow = -desk.boundary_flux("top")
        outflow = desk.boundary_flux("right")
        assert inflow > 0
        assert abs(outflow - inflow) <= 1e-8 * inflow
        assert desk.boundary_flux("left") == 0.0
        assert desk.boundary_flux("bottom") == 0.0

    def test_no_slip_on_solid(self, desk):
        s = desk.solid
        # faces bordering a solid cell carry no flow
        assert np.all(desk.u[:-1][s] == 0) and np.all(desk.u[1:][s] == 0)
        assert np.all(desk.v[:, :-1][s] == 0) and np.all(desk.v[:, 1:][s] == 0)
        assert np.all(np.isnan(desk.p[s])) and np.all(np.isfinite(desk.p[~s]))

    def test_inflow_is_half_sine(self, desk):
        g = desk.geometry
        a, b = COARSE.inlet
        inside = (g.xc > a) & (g.xc < b)
        np.testing.assert_allclose(-desk.v[inside, -1], 1e-3 * np.sin(np.pi * (g.xc[inside] - a) / (b - a)))
        assert np.all(desk.v[~inside, -1] == 0)

    def test_mirror_symmetry(self):
        g = PoreGeometry.from_scenario(COARSE, 1e-3)
        a = solve_geometry(g, COARSE.viscosity, method="direct")
        b = solve_geometry(g.mirrored(), COARSE.viscosity, method="direct")
        scale = a.max_speed()
        np.testing.assert_allclose(b.u, -a.u[::-1, :], atol=1e-10 * scale)
        np.testing.assert_allclose(b.v, a.v[::-1, :], atol=1e-10 * scale)
        pscale = np.nanmax(np.abs(a.p))
        np.testing.assert_allclose(b.p, a.p[::-1, :], atol=1e-10 * pscale)

    def test_linear_in_inflow_speed(self):
        a = solve_stokes_mac(COARSE, 1e-3, method="direct")
        b = solve_stokes_mac(COARSE, 2.5e-3, method="direct")
        np.testing.assert_allclose(b.u, 2.5 * a.u, rtol=1e-9, atol=1e-18)
        np.testing.assert_allclose(b.p, 2.5 * a.p, rtol=1e-9)

    def test_all_dirichlet_pins_pressure(self):
        segs = [BoundarySegment("left", 0, H, INFLOW, parabolic_inflow(U, H)),
                BoundarySegment("right", 0, H, INFLOW, parabolic_inflow(-U, H))]
        f = solve_geometry(PoreGeometry.from_boxes(L, H, H / 8, [], segs), MU, method="direct")
        assert f.p[0, 0] == 0.0
        # the same flow as the developed Poiseuille solution, up to the O(h^2) wall error
        y = f.geometry.yc
        np.testing.assert_allclose(f.u[6:-6], np.broadcast_to(4 * U * y * (H - y) / H**2, (5, 8)), atol=1.5e-2)


class TestErrors:
    def test_incompatible_spacing(self):
        with pytest.raises(GridError, match="does not divide"):
            PoreGeometry.from_boxes(1.0, 1.0, 0.3, [], [])
        with pytest.raises(GridError, match="does not divide"):
            PoreGeometry.from_scenario(Scenario(inclusion=0.2e-3, pitch=0.5e-3), 1e-3, 3)

    def test_inclusion_touching_wall(self):
        with pytest.raises(GridError, match="strictly inside"):
            PoreGeometry.from_boxes(1.0, 1.0, 0.25, [(0.0, 0.25, 0.25, 0.5)], [])

    def test_bad_segments(self):
        with pytest.raises(GridError):
            BoundarySegment("front", 0, 1, OUTFLOW)
        with pytest.raises(GridError, match="profile"):
            BoundarySegment("left", 0, 1, INFLOW)
        with pytest.raises(GridError, match="leaves the boundary"):
            PoreGeometry.from_boxes(1.0, 1.0, 0.25, [], [BoundarySegment("top", 0.5, 1.5, OUTFLOW)])

    def test_nonpositive_inflow(self):
        with pytest.raises(ValueError):
            solve_stokes_mac(COARSE, 0.0)

    def test_iteration_cap(self):
        with pytest.raises(SolverError):
            solve_stokes_mac(COARSE, 1e-3, maxiter=3)

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            solve_stokes_mac(COARSE, 1e-3, method="cg")


class TestVolumeAverage:
    GEOM = PoreGeometry.from_boxes(2.0, 2.0, 0.125, [(0.75, 1.25, 0.75, 1.25)], [])

    def test_uniform_field_no_solid(self):
        g = PoreGeometry.from_boxes(2.0, 2.0, 0.125, [], [])
        f = synthetic(g, lambda x, y: 0 * x + 0.3, lambda x, y: 0 * x - 0.7)
        np.testing.assert_allclose(volume_average(f, (1.0, 1.0), 1.0), [0.3, -0.7], rtol=1e-15)

    def test_porosity_fraction(self):
        # a 0.5 x 0.5 inclusion centred in a unit REV leaves 3/4 of it fluid
        f = synthetic(self.GEOM, lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x + 2.0)
        np.testing.assert_array_equal(volume_average(f, (1.0, 1.0), 1.0), [0.75, 1.5])

    def test_scenario_rev_porosity(self):
        s = COARSE
        g = PoreGeometry.from_scenario(s, 1e-3)
        f = synthetic(g, lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x)
        x0 = s.block_origin[0] + 0.5 * s.inclusion + 2 * s.pitch
        y0 = s.block_origin[1] + 0.5 * s.inclusion + 2 * s.pitch
        np.testing.assert_allclose(volume_average(f, (x0, y0), s.ell)[0], s.porosity, rtol=1e-14)

    def test_midpoint_exactness(self):
        g = PoreGeometry.from_boxes(2.0, 2.0, 0.125, [], [])
        f = synthetic(g, lambda x, y: 1 + 2 * x - 3 * y, lambda x, y: -x + 0.5 * y)
        # grid-aligned windows and windows whose cut cells are symmetric about x0
        for x0, ell in [((1.0, 1.0), 1.0), ((0.75, 1.25), 0.5), ((0.5625, 1.3125), 0.9), ((1.0, 0.6875), 1.1)]:
            np.testing.assert_allclose(volume_average(f, x0, ell),
                                       [1 + 2 * x0[0] - 3 * x0[1], -x0[0] + 0.5 * x0[1]], rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(-3, 3), st.integers(0, 2**31 - 1))
    def test_linearity(self, a, seed):
        rng = np.random.default_rng(seed)
        g = self.GEOM
        f1 = StaggeredField(g, rng.normal(size=(17, 16)), rng.normal(size=(16, 17)), np.zeros(g.shape))
        f2 = StaggeredField(g, rng.normal(size=(17, 16)), rng.normal(size=(16, 17)), np.zeros(g.shape))
        comb = StaggeredField(g, a * f1.u + f2.u, a * f1.v + f2.v, np.zeros(g.shape))
        x0 = (0.5 + rng.uniform(0, 1), 0.5 + rng.uniform(0, 1))
        np.testing.assert_allclose(volume_average(comb, x0, 1.0),
                                   a * volume_average(f1, x0, 1.0) + volume_average(f2, x0, 1.0),
                                   rtol=1e-12, atol=1e-12)

    def test_outside_domain(self):
        f = synthetic(self.GEOM, lambda x, y: 0 * x, lambda x, y: 0 * x)
        with pytest.raises(GridError, match="outside the domain"):
            volume_average(f, (0.2, 1.0), 1.0)

    def test_pressure_is_intrinsic(self):
        f = synthetic(self.GEOM, lambda x, y: 0 * x, lambda x, y: 0 * x, lambda x, y: 0 * x + 4.0)
        assert pressure_average(f, (1.0, 1.0), 1.0) == 4.0


class TestExtraction:
    def test_constant_pressure(self):
        g = PoreGeometry.from_scenario(COARSE, 1e-3)
        f = synthetic(g, lambda x, y: 0 * x, lambda x, y: 0 * x, lambda x, y: 0 * x + 12.5)
        obs = extract_reference(f, COARSE)
        pk = np.array(obs.kinds) == "pressure"
        np.testing.assert_allclose(obs.values[pk], 12.5, rtol=1e-15)
        np.testing.assert_array_equal(obs.values[~pk], 0.0)

    def test_deterministic(self, desk):
        a = extract_reference(desk, COARSE)
        b = extract_reference(desk, COARSE)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.ids == COARSE.point_ids
        assert a.groups == tuple(p.group for p in COARSE.points)

    def test_surface_mode_uses_nearest_throat(self, desk):
        va = extract_values(desk, COARSE, "volume")
        sa = extract_values(desk, COARSE, "surface")
        porous = np.array([p.kind == "velocity" and p.y < COARSE.gamma0 for p in COARSE.points])
        np.testing.assert_array_equal(va[~porous], sa[~porous])
        h = desk.geometry.h
        for k in np.nonzero(porous)[0]:
            p = COARSE.points[k]
            mid, axis, width = COARSE.nearest_throat(p.x, p.y)
            # the gap spans whole cells, so the section is a plain face mean
            if abs(axis[0]) > 0.5:
                j0 = int(round((mid[1] - width / 2) / h))
                faces = desk.u[int(round(mid[0] / h)), j0:j0 + int(round(width / h))]
            else:
                i0 = int(round((mid[0] - width / 2) / h))
                faces = desk.v[i0:i0 + int(round(width / h)), int(round(mid[1] / h))]
            assert sa[k] == pytest.approx(abs(faces.mean()), rel=1e-14)

    def test_invalid_point(self, desk):
        from ffpmbench.models.scenario import ExtractionPoint
        bad = ExtractionPoint("edge", 0.1e-3, 1e-3, "velocity", "calibration")
        with pytest.raises(ScenarioError, match="edge"):
            Scenario(points=(bad,))
        with pytest.raises(ScenarioError, match="edge"):
            extract_values(desk, _with_points(COARSE, (bad,)))

    def test_csv_export(self, desk, tmp_path):
        path = tmp_path / "field.csv"
        desk.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["x", "y", "u", "v", "p"]
        assert len(rows) == 1 + desk.geometry.shape[0] * desk.geometry.shape[1]


def _with_points(s, pts):
    """Bypass scenario validation to hand an invalid layout to the extractor."""
    obj = object.__new__(Scenario)
    for k, v in s.__dict__.items():
        object.__setattr__(obj, k, v)
    object.__setattr__(obj, "points", pts)
    return obj


class TestRichardsonReference:
    def test_triplet_gives_budget(self):
        runs = reference_with_error(COARSE, 1e-3, levels=(1, 2, 4), method="direct", modes=("volume", "surface"))
        n = len(COARSE.points)
        for mode, run in runs.items():
            assert run.level_values.shape == (3, n)
            np.testing.assert_array_equal(run.values, run.level_values[-1])
            var = run.numerical_variance
            assert var.shape == (n,) and np.all(np.isfinite(var)) and np.all(var >= 0)
            np.testing.assert_allclose(var, (run.values - run.fit.f_bar) ** 2, rtol=1e-12)
        # pressure SRQs do not depend on the velocity averaging mode
        pk = np.array(COARSE.kinds) == "pressure"
        np.testing.assert_array_equal(runs["volume"].level_values[:, pk], runs["surface"].level_values[:, pk])
        fine = solve_stokes_mac(COARSE, 1e-3, 4, method="direct")
        np.testing.assert_array_equal(runs["volume"].values, extract_values(fine, COARSE))

    def test_needs_three_levels(self):
        with pytest.raises(ValueError):
            reference_with_error(COARSE, 1e-3, levels=(2, 4))
