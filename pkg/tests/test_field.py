import math

import numpy as np
import pytest

from flowplace import (
    ABSORB_OUTSIDE,
    CLAMP_TO_BOUNDARY,
    Domain,
    FlowConfig,
    GridMismatchError,
    SnapshotFormatError,
    VectorField,
    analytic_field,
    divergence_at,
    flow_map,
    flow_map_points,
    is_outside,
    load_snapshot,
    load_snapshots,
    mean_field,
    save_snapshot,
    velocities_at,
    velocity_at,
)

UNIT = Domain(0.0, 0.0, 1.0, 1.0)


def grid_field(fn_u, fn_v, domain=UNIT, n=9, policy=CLAMP_TO_BOUNDARY):
    xs = np.linspace(domain.xmin, domain.xmax, n)
    ys = np.linspace(domain.ymin, domain.ymax, n)
    X, Y = np.meshgrid(xs, ys)
    return VectorField(domain, fn_u(X, Y), fn_v(X, Y), boundary_policy=policy)


class TestDomain:
    def test_dimensions(self):
        d = Domain(-1.0, 0.0, 3.0, 2.0)
        assert d.width == 4.0
        assert d.height == 2.0

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            Domain(0.0, 0.0, 0.0, 1.0)
        with pytest.raises(ValueError):
            Domain(0.0, 2.0, 1.0, 1.0)

    def test_contains_is_closed(self):
        d = Domain(0.0, 0.0, 1.0, 1.0)
        pts = np.array([[0.0, 0.0], [1.0, 1.0], [0.5, 0.5], [1.0001, 0.5]])
        assert d.contains(pts).tolist() == [True, True, True, False]


class TestInterpolation:
    def test_node_values_reproduced(self):
        fld = grid_field(lambda x, y: x**2 + y, lambda x, y: np.sin(x * y), n=7)
        for ix in (0, 3, 6):
            for iy in (0, 2, 5):
                p = (fld.node_x[ix], fld.node_y[iy])
                u, v = velocity_at(fld, p)
                assert u == pytest.approx(fld.u[iy, ix], abs=1e-14)
                assert v == pytest.approx(fld.v[iy, ix], abs=1e-14)

    def test_linear_field_exact_everywhere(self):
        fld = grid_field(lambda x, y: -x, lambda x, y: -y)
        rng = np.random.default_rng(0)
        pts = rng.uniform(0.02, 0.98, size=(50, 2))
        uv = velocities_at(fld, pts)
        assert np.abs(uv + pts).max() < 1e-12

    def test_linear_along_grid_lines(self):
        fld = grid_field(lambda x, y: 3 * x + y, lambda x, y: 0 * x, n=5)
        y0 = fld.node_y[2]
        # halfway between two x nodes on a node line: exact average
        xm = 0.5 * (fld.node_x[1] + fld.node_x[2])
        u, _ = velocity_at(fld, (xm, y0))
        assert u == pytest.approx(0.5 * (fld.u[2, 1] + fld.u[2, 2]), abs=1e-14)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            VectorField(UNIT, np.zeros((3, 3)), np.zeros((4, 3)))
        with pytest.raises(ValueError):
            VectorField(UNIT, np.zeros((1, 3)), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            VectorField(UNIT, np.full((3, 3), np.nan), np.zeros((3, 3)))


class TestFlowMap:
    def test_contraction_reaches_half(self):
        fld = grid_field(lambda x, y: -x, lambda x, y: -y, Domain(0.0, 0.0, 2.0, 2.0))
        end = flow_map(fld, (1.0, 1.0), math.log(2.0), FlowConfig(1e-3))
        assert np.abs(end - 0.5).max() < 1e-6

    def test_quarter_rotation(self):
        dom = Domain(-2.0, -2.0, 2.0, 2.0)
        fld = grid_field(lambda x, y: -y, lambda x, y: x, dom)
        end = flow_map(fld, (1.0, 0.0), math.pi / 2, FlowConfig(1e-3))
        assert np.abs(end - np.array([0.0, 1.0])).max() < 1e-6

    def test_negative_duration_reverses(self):
        dom = Domain(-2.0, -2.0, 2.0, 2.0)
        fld = grid_field(lambda x, y: -y, lambda x, y: x, dom)
        fwd = flow_map(fld, (1.0, 0.2), 0.7, FlowConfig(1e-3))
        back = flow_map(fld, fwd, -0.7, FlowConfig(1e-3))
        assert np.abs(back - np.array([1.0, 0.2])).max() < 1e-9

    def test_truncated_final_substep(self):
        # duration not a multiple of the substep must still integrate exactly
        fld = grid_field(lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x)
        end = flow_map(fld, (0.1, 0.5), 0.25, FlowConfig(0.1))
        assert end[0] == pytest.approx(0.35, abs=1e-12)

    def test_clamp_keeps_points_on_boundary(self):
        fld = grid_field(lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x)
        end = flow_map(fld, (0.9, 0.5), 1.0, FlowConfig(0.05))
        assert end[0] == 1.0
        assert not is_outside(end)

    def test_absorb_marks_outside(self):
        fld = grid_field(
            lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x, policy=ABSORB_OUTSIDE
        )
        pts = np.array([[0.9, 0.5], [0.1, 0.5]])
        out, alive = flow_map_points(fld, pts, 0.5, FlowConfig(0.05))
        assert alive.tolist() == [False, True]
        assert is_outside(out[0]) and np.isnan(out[0]).all()
        assert out[1, 0] == pytest.approx(0.6, abs=1e-12)

    def test_visit_sees_every_substep(self):
        fld = grid_field(lambda x, y: 0 * x + 1.0, lambda x, y: 0 * x)
        seen = []
        flow_map_points(
            fld,
            np.array([[0.0, 0.5]]),
            0.2,
            FlowConfig(0.1),
            visit=lambda pts, alive: seen.append(pts[0, 0]),
        )
        assert seen == pytest.approx([0.0, 0.1, 0.2])

    def test_euler_scheme_selectable(self):
        fld = grid_field(lambda x, y: -x, lambda x, y: 0 * y)
        end = flow_map(fld, (1.0, 0.5), 0.1, FlowConfig(0.1, method="euler"))
        # one explicit Euler step: x -> x - h x
        assert end[0] == pytest.approx(0.9, abs=1e-12)

    def test_bad_config_rejected(self):
        with pytest.raises(ValueError):
            FlowConfig(0.0)
        with pytest.raises(ValueError):
            FlowConfig(0.1, method="rk5")


class TestDivergence:
    def test_rotation_is_divergence_free(self):
        dom = Domain(-1.0, -1.0, 1.0, 1.0)
        fld = grid_field(lambda x, y: -y, lambda x, y: x, dom, n=17)
        assert divergence_at(fld, (0.2, -0.3), 1e-3) == pytest.approx(0.0, abs=1e-9)

    def test_sink_divergence(self):
        dom = Domain(-1.0, -1.0, 1.0, 1.0)
        fld = grid_field(lambda x, y: -x, lambda x, y: -y, dom, n=17)
        assert divergence_at(fld, (0.1, 0.4), 1e-3) == pytest.approx(-2.0, abs=1e-8)

    def test_boundary_proximity_rejected(self):
        fld = grid_field(lambda x, y: -x, lambda x, y: -y)
        with pytest.raises(ValueError):
            divergence_at(fld, (0.999, 0.5), 1e-2)


class TestAnalyticFields:
    def test_named_fields(self):
        dom = Domain(-1.0, -1.0, 1.0, 1.0)
        sink = analytic_field("linear-sink", dom)
        rot = analytic_field("rotation", dom)
        saddle = analytic_field("saddle", dom)
        p = (0.3, -0.4)
        assert velocity_at(sink, p) == pytest.approx([-0.3, 0.4], abs=1e-12)
        assert velocity_at(rot, p) == pytest.approx([0.4, 0.3], abs=1e-12)
        assert velocity_at(saddle, p) == pytest.approx([0.3, 0.4], abs=1e-12)

    def test_uniform_field_parsing(self):
        fld = analytic_field("uniform(0.5,-1.25)", UNIT)
        assert velocity_at(fld, (0.3, 0.7)) == pytest.approx([0.5, -1.25], abs=0)

    def test_unknown_name(self):
        with pytest.raises(ValueError):
            analytic_field("vortex-street", UNIT)


class TestSnapshotIO:
    def write(self, tmp_path, name, text):
        path = tmp_path / name
        path.write_text(text)
        return str(path)

    def test_round_trip_bit_exact(self, tmp_path):
        fld = grid_field(lambda x, y: np.sin(x) + 1 / 3, lambda x, y: y / 7, n=5)
        p1 = tmp_path / "a.csv"
        p2 = tmp_path / "b.csv"
        save_snapshot(fld, str(p1))
        loaded = load_snapshot(str(p1))
        save_snapshot(loaded, str(p2))
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(loaded.u, fld.u)
        assert loaded.domain == fld.domain

    def test_grid_inference(self, tmp_path):
        rows = ["x,y,u,v"]
        for y in (0.0, 0.5, 1.0):
            for x in (0.0, 1.0):
                rows.append(f"{x},{y},{x + y},{x - y}")
        fld = load_snapshot(self.write(tmp_path, "s.csv", "\n".join(rows) + "\n"))
        assert fld.u.shape == (3, 2)
        assert fld.domain == Domain(0.0, 0.0, 1.0, 1.0)
        assert fld.u[2, 1] == 2.0

    def test_bad_header(self, tmp_path):
        path = self.write(tmp_path, "s.csv", "x,y,vx,vy\n0,0,1,1\n")
        with pytest.raises(SnapshotFormatError, match="header"):
            load_snapshot(path)

    def test_malformed_row_reports_line(self, tmp_path):
        path = self.write(tmp_path, "s.csv", "x,y,u,v\n0,0,1,1\n0,1,oops,1\n")
        with pytest.raises(SnapshotFormatError, match="line 3"):
            load_snapshot(path)

    def test_non_finite_rejected(self, tmp_path):
        path = self.write(tmp_path, "s.csv", "x,y,u,v\n0,0,nan,1\n")
        with pytest.raises(SnapshotFormatError, match="finite"):
            load_snapshot(path)

    def test_incomplete_grid_rejected(self, tmp_path):
        text = "x,y,u,v\n0,0,1,1\n1,0,1,1\n0,1,1,1\n"
        with pytest.raises(SnapshotFormatError):
            load_snapshot(self.write(tmp_path, "s.csv", text))

    def test_row_order_enforced(self, tmp_path):
        text = (
            "x,y,u,v\n"
            "0,0,1,1\n1,0,1,1\n"
            "1,1,1,1\n0,1,1,1\n"
        )
        with pytest.raises(SnapshotFormatError, match="order"):
            load_snapshot(self.write(tmp_path, "s.csv", text))

    def test_non_uniform_spacing_rejected(self, tmp_path):
        rows = ["x,y,u,v"]
        for y in (0.0, 1.0):
            for x in (0.0, 0.4, 1.0):
                rows.append(f"{x},{y},1,1")
        with pytest.raises(SnapshotFormatError, match="uniform"):
            load_snapshot(self.write(tmp_path, "s.csv", "\n".join(rows) + "\n"))

    def test_snapshot_grid_mismatch(self, tmp_path):
        a = grid_field(lambda x, y: x, lambda x, y: y, n=4)
        b = grid_field(lambda x, y: x, lambda x, y: y, n=5)
        pa, pb = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
        save_snapshot(a, pa)
        save_snapshot(b, pb)
        with pytest.raises(GridMismatchError, match="inconsistent grids"):
            load_snapshots([pa, pb])


class TestMeanField:
    def test_nodewise_average(self):
        a = grid_field(lambda x, y: x, lambda x, y: 0 * x, n=4)
        b = grid_field(lambda x, y: 3 * x, lambda x, y: 0 * x, n=4)
        m = mean_field([a, b])
        assert np.allclose(m.u, 2 * a.u)
        assert np.array_equal(m.v, a.v)

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        snaps = [
            grid_field(lambda x, y, s=s: x + s, lambda x, y, s=s: y * s, n=4)
            for s in rng.random(3)
        ]
        m = mean_field(snaps)
        again = mean_field([m])
        assert np.array_equal(again.u, m.u)
        assert np.array_equal(again.v, m.v)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            mean_field([])
