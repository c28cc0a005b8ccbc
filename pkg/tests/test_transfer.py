import numpy as np
import pytest
import scipy.sparse as sp

from flowplace import (
    ABSORB_OUTSIDE,
    CLAMP_TO_BOUNDARY,
    Domain,
    FlowConfig,
    GRID,
    MONTE_CARLO,
    PartitionMismatchError,
    ScalarField,
    TransferOperator,
    VectorField,
    analytic_field,
    apply_koopman,
    apply_pf,
    build_operator,
    build_partition,
    evolve,
    indicator,
    load_operator,
    rect_to_cellset,
    save_operator,
)
from flowplace.transfer import effective_samples

from _builders import random_operator, shift_operator

UNIT = Domain(0.0, 0.0, 1.0, 1.0)


def zero_field(domain=UNIT, policy=CLAMP_TO_BOUNDARY):
    z = np.zeros((2, 2))
    return VectorField(domain, z, z, boundary_policy=policy)


class TestBuild:
    def test_zero_field_gives_identity(self):
        part = build_partition(UNIT, 6, 6)
        op = build_operator(zero_field(), part, dt=0.3, samples_per_cell=9, seed=1)
        assert (op.matrix != sp.identity(36, format="csr")).nnz == 0
        assert op.leak.max() == 0.0

    def test_shift_is_exact_permutation(self):
        op = shift_operator(8)
        dense = op.matrix.toarray()
        expected = np.zeros((8, 8))
        expected[np.arange(7), np.arange(1, 8)] = 1.0
        np.testing.assert_array_equal(dense, expected)
        np.testing.assert_array_equal(op.leak, np.eye(8)[7])

    def test_rows_substochastic(self):
        fld = analytic_field("saddle", Domain(-1, -1, 1, 1), boundary_policy=ABSORB_OUTSIDE)
        part = build_partition(Domain(-1, -1, 1, 1), 10, 10)
        op = build_operator(fld, part, dt=0.2, samples_per_cell=60, seed=5)
        row_sums = np.asarray(op.matrix.sum(axis=1)).ravel()
        assert np.abs(row_sums + op.leak - 1.0).max() <= 1e-12
        assert op.matrix.data.min() >= 0.0

    def test_seed_determinism(self):
        fld = analytic_field("rotation", Domain(-1, -1, 1, 1))
        part = build_partition(Domain(-1, -1, 1, 1), 8, 8)
        kw = dict(dt=0.15, samples_per_cell=50, cfg=FlowConfig(dt_integrate=0.05))
        a = build_operator(fld, part, seed=7, **kw)
        b = build_operator(fld, part, seed=7, **kw)
        c = build_operator(fld, part, seed=8, **kw)
        assert (a.matrix != b.matrix).nnz == 0
        np.testing.assert_array_equal(a.leak, b.leak)
        assert (a.matrix != c.matrix).nnz > 0

    def test_grid_sampling_ignores_seed(self):
        part = build_partition(UNIT, 5, 5)
        kw = dict(dt=0.1, samples_per_cell=10, sampling=GRID)
        a = build_operator(zero_field(), part, seed=0, **kw)
        b = build_operator(zero_field(), part, seed=99, **kw)
        assert (a.matrix != b.matrix).nnz == 0
        # 10 rounds up to the 4x4 sub-grid
        assert a.samples_per_cell == 16

    def test_effective_samples(self):
        assert effective_samples(MONTE_CARLO, 10) == 10
        assert effective_samples(GRID, 9) == 9
        assert effective_samples(GRID, 10) == 16
        assert effective_samples(GRID, 1) == 1
        with pytest.raises(ValueError, match=">= 1"):
            effective_samples(GRID, 0)
        with pytest.raises(ValueError, match="sampling"):
            effective_samples("stratified", 10)

    def test_domain_mismatch(self):
        part = build_partition(Domain(0, 0, 2, 2), 4, 4)
        with pytest.raises(PartitionMismatchError, match="domains"):
            build_operator(zero_field(), part, dt=0.1)

    def test_bad_dt(self):
        part = build_partition(UNIT, 4, 4)
        with pytest.raises(ValueError, match="dt"):
            build_operator(zero_field(), part, dt=0.0)


class TestValidation:
    def test_leak_shape(self):
        part = build_partition(UNIT, 3, 3)
        with pytest.raises(ValueError, match="leak"):
            TransferOperator(part, 0.1, sp.identity(9), np.zeros(4), 1, 0, GRID)

    def test_leak_range(self):
        part = build_partition(UNIT, 2, 2)
        with pytest.raises(ValueError, match="leak"):
            TransferOperator(part, 0.1, sp.identity(4) * 0.5, np.full(4, -0.1), 1, 0, GRID)

    def test_negative_entries(self):
        part = build_partition(UNIT, 2, 2)
        mat = -0.5 * sp.identity(4)
        with pytest.raises(ValueError, match="nonnegative"):
            TransferOperator(part, 0.1, mat, np.full(4, 1.5), 1, 0, GRID)

    def test_row_sum_invariant(self):
        part = build_partition(UNIT, 2, 2)
        with pytest.raises(ValueError, match="row sums"):
            TransferOperator(part, 0.1, sp.identity(4), np.full(4, 0.5), 1, 0, GRID)


class TestDensityEvolution:
    def test_mass_balance(self):
        op = random_operator(12)
        rng = np.random.default_rng(0)
        rho = ScalarField(op.partition, rng.random(op.n_cells))
        out = apply_pf(op, rho)
        assert out.values.min() >= 0.0
        lost = float(np.sum(rho.values * op.leak))
        assert np.sum(out.values) == pytest.approx(np.sum(rho.values) - lost, rel=1e-12)

    def test_shift_moves_mass_right(self):
        op = shift_operator(5)
        rho = indicator(rect_to_cellset(op.partition, (0.0, 0.0, 0.45, 0.2)))
        out = apply_pf(op, rho)
        np.testing.assert_array_equal(out.values, [0.0, 1.0, 1.0, 0.0, 0.0])

    def test_koopman_pulls_back(self):
        op = shift_operator(5)
        g = ScalarField(op.partition, np.array([0.0, 0.0, 0.0, 0.0, 1.0]))
        out = apply_koopman(op, g)
        np.testing.assert_array_equal(out.values, [0.0, 0.0, 0.0, 1.0, 0.0])

    def test_adjointness(self):
        op = random_operator(4)
        rng = np.random.default_rng(1)
        rho = rng.normal(size=op.n_cells)
        g = rng.normal(size=op.n_cells)
        m = op.partition.cell_measure
        lhs = m * np.dot(apply_pf(op, ScalarField(op.partition, rho)).values, g)
        rhs = m * np.dot(rho, apply_koopman(op, ScalarField(op.partition, g)).values)
        assert abs(lhs - rhs) <= 1e-14 * abs(lhs)

    def test_partition_mismatch(self):
        op = shift_operator(5)
        other = build_partition(UNIT, 3, 3)
        with pytest.raises(PartitionMismatchError):
            apply_pf(op, ScalarField(other, np.zeros(9)))

    def test_evolve_modes(self):
        op = shift_operator(6)
        rho = indicator(rect_to_cellset(op.partition, (0.0, 0.0, 0.1, 0.1)))
        out = evolve(op, rho, 3, "pf")
        assert out.values.tolist() == [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        assert evolve(op, rho, 0, "pf") == rho
        with pytest.raises(ValueError, match="mode"):
            evolve(op, rho, 1, "forward")
        with pytest.raises(ValueError, match="steps"):
            evolve(op, rho, -1, "pf")


class TestTransposed:
    def test_permutation_transpose(self):
        op = shift_operator(5)
        opt = op.transposed()
        rho = ScalarField(op.partition, np.arange(5.0))
        np.testing.assert_array_equal(
            apply_pf(opt, rho).values, apply_koopman(op, rho).values
        )

    def test_super_stochastic_transpose_rejected(self):
        part = build_partition(UNIT, 2, 1)
        mat = sp.csr_array(np.array([[0.0, 1.0], [0.0, 1.0]]))
        op = TransferOperator(part, 0.1, mat, np.zeros(2), 1, 0, GRID)
        with pytest.raises(ValueError, match="substochastic"):
            op.transposed()


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        op = random_operator(21)
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        save_operator(op, p1)
        back = load_operator(p1)
        save_operator(back, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert (back.matrix != op.matrix).nnz == 0
        np.testing.assert_array_equal(back.leak, op.leak)
        assert back.dt == op.dt
        assert back.partition == op.partition
        assert back.seed == op.seed
        assert back.sampling == op.sampling

    def test_round_trip_flow_built(self, tmp_path):
        fld = analytic_field("rotation", Domain(-1, -1, 1, 1), boundary_policy=ABSORB_OUTSIDE)
        part = build_partition(Domain(-1, -1, 1, 1), 9, 9)
        op = build_operator(fld, part, dt=0.2, samples_per_cell=33, seed=6)
        path = tmp_path / "op.txt"
        save_operator(op, path)
        back = load_operator(path)
        assert (back.matrix != op.matrix).nnz == 0
        np.testing.assert_array_equal(back.leak, op.leak)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "op.txt"
        path.write_text("not json\n0,0,1.0\n")
        with pytest.raises(ValueError, match="header"):
            load_operator(path)

    def test_wrong_format_tag(self, tmp_path):
        path = tmp_path / "op.txt"
        path.write_text('{"format": "something-else"}\n')
        with pytest.raises(ValueError, match="ulam-operator-v1"):
            load_operator(path)

    def test_malformed_triplet(self, tmp_path):
        op = shift_operator(4)
        path = tmp_path / "op.txt"
        save_operator(op, path)
        path.write_text(path.read_text() + "1,2\n")
        with pytest.raises(ValueError, match="line"):
            load_operator(path)
