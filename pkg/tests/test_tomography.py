import numpy as np
import pytest

from biphoton.errors import NonConvergence, OutOfRange
from biphoton.measures import fidelity_phi_plus, linear_entropy, tangle
from biphoton.qcore import DensityMatrix, bell_phi_plus, maximally_mixed, werner_state
from biphoton.tomography import (
    CONFIGS,
    GROUPS,
    CoincidenceTable,
    _value_and_grad,
    expected_counts,
    expected_table,
    linear_inversion_start,
    nll_objective,
    normalization,
    reconstruct,
    rho_from_t,
    t_from_rho,
    table_correlations,
)

from oracles import random_density_matrix, uhlmann_fidelity

N = 1_000_000
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]])


def poisson_table(rho, n, rng):
    return CoincidenceTable(rng.poisson(expected_counts(rho, n)))


def relabel(table, mapping):
    return CoincidenceTable({(mapping[a], mapping[b]): table[a, b] for a, b in CONFIGS})


class TestCoincidenceTable:
    def test_needs_36(self):
        with pytest.raises(OutOfRange):
            CoincidenceTable(np.ones(35))
        with pytest.raises(OutOfRange):
            CoincidenceTable({("H", "H"): 1})

    def test_rejects_negative_and_empty(self):
        with pytest.raises(OutOfRange):
            CoincidenceTable(-np.ones(36))
        with pytest.raises(OutOfRange):
            CoincidenceTable(np.zeros(36))

    def test_immutable(self):
        t = CoincidenceTable(np.ones(36))
        with pytest.raises(ValueError):
            t.counts[0] = 5
        with pytest.raises(AttributeError):
            t.extra = 1

    def test_group_totals(self):
        t = expected_table(bell_phi_plus(), 1000)
        assert len(GROUPS) == 9
        assert all(v == pytest.approx(1000, abs=1e-9) for v in t.group_totals().values())
        assert normalization(t) == pytest.approx(1000, abs=1e-9)

    def test_csv_round_trip(self):
        rng = np.random.default_rng(0)
        t = CoincidenceTable(rng.poisson(100, size=36))
        text = t.to_csv()
        assert text.splitlines()[0] == "basis_xx,basis_x,counts"
        assert len(text.splitlines()) == 37
        back = CoincidenceTable.from_csv(text)
        assert np.array_equal(back.counts, t.counts)

    def test_csv_duplicates(self):
        text = CoincidenceTable(np.ones(36)).to_csv() + "H,H,3\n"
        with pytest.raises(OutOfRange):
            CoincidenceTable.from_csv(text)


class TestExpectedCounts:
    def test_isotropic(self):
        assert np.allclose(expected_counts(maximally_mixed(), 1000), 250, atol=1e-12)

    def test_phi_plus(self):
        t = expected_table(bell_phi_plus(), 1000)
        assert t["H", "H"] == pytest.approx(500, abs=1e-9)
        assert t["H", "V"] == pytest.approx(0, abs=1e-9)
        assert t["R", "L"] == pytest.approx(500, abs=1e-9)
        assert t["R", "R"] == pytest.approx(0, abs=1e-9)

    def test_groups_sum_to_norm(self):
        rho = DensityMatrix(random_density_matrix(np.random.default_rng(1)))
        n = expected_counts(rho, 777.0)
        for idx in GROUPS.values():
            assert n[idx].sum() == pytest.approx(777.0, abs=1e-9)

    def test_correlations_from_counts(self):
        c = table_correlations(expected_table(werner_state(0.745), 1000))
        assert c == pytest.approx((0.745, 0.745, 0.745), abs=1e-12)


class TestObjective:
    def test_zero_at_truth(self):
        rng = np.random.default_rng(2)
        t = rng.normal(size=16)
        table = expected_table(rho_from_t(t), 5000)
        assert nll_objective(t, table) == pytest.approx(0, abs=1e-12)

    def test_positive_on_mismatch(self):
        table = CoincidenceTable(np.full(36, 250.0))
        assert nll_objective(t_from_rho(bell_phi_plus()), table) > 0

    def test_t_round_trip(self):
        rho = random_density_matrix(np.random.default_rng(3))
        assert np.allclose(rho_from_t(t_from_rho(rho, floor=0)), rho, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(4)
        table = poisson_table(DensityMatrix(random_density_matrix(rng)), 1e4, rng)
        n = normalization(table)
        t = rng.normal(size=16)
        _, g = _value_and_grad(t, table.counts, n, 1.0)
        h = 1e-6
        fd = np.array([
            (nll_objective(t + h * e, table) - nll_objective(t - h * e, table)) / (2 * h)
            for e in np.eye(16)
        ])
        assert np.allclose(g, fd, rtol=1e-5, atol=1e-4)


class TestLinearInversion:
    def test_exact_on_noiseless(self):
        for rho in (bell_phi_plus(), maximally_mixed()):
            est = linear_inversion_start(expected_table(rho, N))
            assert np.max(np.abs(est.mat - rho.mat)) <= 1e-9

    def test_exact_on_random_full_rank(self):
        rng = np.random.default_rng(5)
        rho = random_density_matrix(rng, rank=4)
        est = linear_inversion_start(expected_table(rho, N))
        assert np.max(np.abs(est.mat - rho)) <= 1e-9

    def test_always_physical(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            counts = rng.poisson(rng.uniform(0, 50), size=36)
            if counts.sum() == 0:
                counts[0] = 1
            m = linear_inversion_start(CoincidenceTable(counts)).mat
            assert np.linalg.eigvalsh(m).min() >= -1e-12
            assert abs(np.trace(m) - 1) <= 1e-12


class TestReconstruct:
    def test_phi_plus(self):
        rho, rep = reconstruct(expected_table(bell_phi_plus(), N))
        assert fidelity_phi_plus(rho) >= 1 - 1e-6
        assert rep.converged

    def test_isotropic(self):
        rho, _ = reconstruct(expected_table(maximally_mixed(), N))
        assert linear_entropy(rho) >= 0.999

    def test_report_contents(self):
        _, rep = reconstruct(expected_table(werner_state(0.5), N))
        d = rep.to_dict()
        for key in ("final_objective", "iterations", "converged", "linear_inversion_start", "assumptions"):
            assert key in d
        assert d["iterations"] > 0

    def test_trace_monotone(self):
        rng = np.random.default_rng(7)
        table = poisson_table(werner_state(0.745), 1e4, rng)
        _, rep = reconstruct(table)
        tr = rep.trace
        assert len(tr) > 1
        assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(tr, tr[1:]))

    def test_deterministic(self):
        rng = np.random.default_rng(8)
        table = poisson_table(werner_state(0.6), 1e5, rng)
        a, _ = reconstruct(table, seed=3)
        b, _ = reconstruct(table, seed=3)
        assert np.array_equal(a.mat, b.mat)

    def test_noiseless_random_states(self):
        rng = np.random.default_rng(9)
        for _ in range(10):
            truth = random_density_matrix(rng)
            rho, _ = reconstruct(expected_table(truth, N))
            assert uhlmann_fidelity(truth, rho.mat) >= 0.999

    def test_poisson_werner(self):
        rho_true = werner_state(0.745)
        ds, dt = [], []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            rho, _ = reconstruct(poisson_table(rho_true, N, rng))
            ds.append(linear_entropy(rho) - 0.445)
            dt.append(tangle(rho) - 0.381)
        assert abs(np.mean(ds)) <= 0.01
        assert abs(np.mean(dt)) <= 0.01

    @pytest.mark.parametrize("kind", ["single", "huge", "sparse", "uniform_random"])
    def test_adversarial_tables_are_physical(self, kind):
        rng = np.random.default_rng(10)
        if kind == "single":
            counts = np.zeros(36)
            counts[17] = 1
        elif kind == "huge":
            counts = rng.uniform(0, 1e12, size=36)
        elif kind == "sparse":
            counts = np.where(rng.random(36) < 0.8, 0, rng.poisson(3, size=36))
            counts[0] += 1
        else:
            counts = rng.integers(0, 1000, size=36)
        rho, _ = reconstruct(CoincidenceTable(counts), restarts=1)
        m = rho.mat
        assert np.max(np.abs(m - m.conj().T)) <= 1e-12
        assert abs(np.trace(m) - 1) <= 1e-9
        assert np.linalg.eigvalsh(m).min() >= -1e-9

    @pytest.mark.parametrize(
        "u,mapping",
        [
            # sigma_x swaps H<->V and R<->L, sigma_y swaps H<->V and D<->A
            (SX, {"H": "V", "V": "H", "D": "D", "A": "A", "R": "L", "L": "R"}),
            (SY, {"H": "V", "V": "H", "D": "A", "A": "D", "R": "R", "L": "L"}),
        ],
    )
    def test_relabel_equivariance(self, u, mapping):
        rng = np.random.default_rng(11)
        truth = DensityMatrix(random_density_matrix(rng, rank=4))
        table = poisson_table(truth, 1e5, rng)
        rho, _ = reconstruct(table)
        rho2, _ = reconstruct(relabel(table, mapping))
        uu = np.kron(u, u)
        expect = uu @ rho.mat @ uu.conj().T
        assert uhlmann_fidelity(expect, rho2.mat) >= 1 - 1e-6

    def test_scale_invariance(self):
        rng = np.random.default_rng(12)
        table = poisson_table(DensityMatrix(random_density_matrix(rng, rank=4)), 1e5, rng)
        a, _ = reconstruct(table)
        b, _ = reconstruct(table.scaled(10))
        assert np.max(np.abs(a.mat - b.mat)) <= 1e-6

    def test_strict_budget(self):
        table = poisson_table(werner_state(0.7), 1e4, np.random.default_rng(13))
        with pytest.raises(NonConvergence) as exc:
            reconstruct(table, max_evaluations=3, restarts=0, strict=True)
        rho, rep = exc.value.result
        assert not rep.converged
        assert isinstance(rho, DensityMatrix)
