import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qleak import ensembles
from qleak.errors import BadDistribution, BadPartition, NotCQ
from qleak.minentropy import (
    GAP_TOL,
    certificate,
    helstrom_pguess,
    hmin,
    hmin_cc,
    hmin_smooth,
    pguess_cq,
)
from qleak.qchannel import KrausChannel, apply
from qleak.qstate import DensityOperator, SystemLayout, epr_pairs, make_cq, maximally_mixed

AB = SystemLayout.of(("A", 2), ("B", 2))


def rand_state(layout, seed, rank=None):
    return DensityOperator(layout, ensembles.ginibre_state(layout.total_dim, ensembles.rng(seed), rank))


def cc_state(p):
    p = np.asarray(p, dtype=float)
    lay = SystemLayout.of(("A", p.shape[0], True), ("B", p.shape[1], True))
    return DensityOperator(lay, np.diag(p.reshape(-1)))


def check_certificate(rho, sol):
    da = rho.layout.dim_of(sol.a_labels)
    m = rho.reorder(list(sol.a_labels) + list(sol.b_labels)).matrix
    primal, dual = certificate(m, da, sol.primal_sigma, sol.dual_X)
    assert dual <= 2 ** -sol.hmin + 1e-12 and 2 ** -sol.hmin <= primal + 1e-12
    assert math.log2(primal) - math.log2(dual) <= GAP_TOL


class TestHmin:
    def test_independent_uniform(self):
        rb = rand_state(SystemLayout.of(("B", 3)), 0)
        rho = maximally_mixed(SystemLayout.of(("A", 4))).tensor(rb)
        sol = hmin(rho, ["A"], ["B"])
        assert sol.hmin == pytest.approx(2.0, abs=1e-7)
        np.testing.assert_allclose(sol.primal_sigma, rb.matrix / 4, atol=1e-6)

    def test_epr_solver(self):
        sol = hmin(epr_pairs(1).density(), ["A1"], ["B1"])
        assert sol.hmin == pytest.approx(-1.0, abs=1e-6)
        assert sol.gap <= 1e-9
        check_certificate(epr_pairs(1).density(), sol)

    def test_epr_explicit_witnesses(self):
        rho = epr_pairs(1).density().matrix
        phi = epr_pairs(1).amplitudes
        primal, dual = certificate(rho, 2, np.eye(2), 2 * np.outer(phi, phi.conj()))
        assert primal == pytest.approx(2.0) and dual == pytest.approx(2.0)

    def test_cc_example(self):
        p = [[0.4, 0.1], [0.2, 0.3]]
        assert hmin_cc(p) == pytest.approx(-math.log2(0.7))
        assert hmin(cc_state(p), ["A"], ["B"]).hmin == pytest.approx(-math.log2(0.7), abs=1e-7)

    @pytest.mark.parametrize("seed", range(10))
    def test_cc_random(self, seed):
        gen = ensembles.rng(seed)
        a, b = int(gen.integers(2, 5)), int(gen.integers(2, 5))
        p = gen.dirichlet(np.ones(a * b)).reshape(a, b)
        assert hmin(cc_state(p), ["A"], ["B"]).hmin == pytest.approx(hmin_cc(p), abs=1e-7)

    @pytest.mark.parametrize("seed", range(10))
    def test_product_lambda_max(self, seed):
        ra = rand_state(SystemLayout.of(("A", 3)), seed)
        rb = rand_state(SystemLayout.of(("B", 2)), seed + 99)
        sol = hmin(ra.tensor(rb), ["A"], ["B"])
        assert sol.hmin == pytest.approx(-math.log2(ra.eigvals()[0]), abs=1e-7)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_certified(self, seed):
        lay = SystemLayout.of(("A", 2), ("B", 3))
        rho = rand_state(lay, seed, rank=1 + seed % 6)
        sol = hmin(rho, ["A"], ["B"])
        check_certificate(rho, sol)
        assert -1 - 1e-7 <= sol.hmin <= 1 + 1e-7

    def test_b_order_irrelevant_and_empty_b(self):
        lay = SystemLayout.of(("B", 2), ("A", 2))
        rho = rand_state(lay, 4)
        h1 = hmin(rho, ["A"], ["B"]).hmin
        h2 = hmin(rho.reorder(["A", "B"]), ["A"], ["B"]).hmin
        assert h1 == pytest.approx(h2, abs=1e-8)
        ra = rand_state(SystemLayout.of(("A", 3)), 1)
        assert hmin(ra, ["A"]).hmin == pytest.approx(-math.log2(ra.eigvals()[0]), abs=1e-7)

    def test_bad_partition(self):
        rho = rand_state(SystemLayout.of(("A", 2), ("B", 2), ("C", 2)), 0)
        with pytest.raises(BadPartition):
            hmin(rho, ["A"], ["B"])
        with pytest.raises(BadPartition):
            hmin(rho, ["A", "B"], ["B", "C"])

    def test_deterministic(self):
        rho = rand_state(AB, 5)
        s1, s2 = hmin(rho, ["A"], ["B"]), hmin(rho, ["A"], ["B"])
        assert s1.hmin == s2.hmin
        np.testing.assert_array_equal(s1.dual_X, s2.dual_X)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 2 ** 63))
    def test_data_processing(self, seed):
        gen = ensembles.rng(seed)
        rho = rand_state(AB, seed ^ 5)
        ch = KrausChannel(tuple(ensembles.random_kraus(2, 2, int(gen.integers(1, 4)), gen)))
        after = apply(ch, rho, ["B"])
        assert hmin(after, ["A"], ["B"]).hmin >= hmin(rho, ["A"], ["B"]).hmin - 1e-6

    def test_maximally_entangled_lower_end(self):
        lay = SystemLayout.of(("A", 3), ("B", 3))
        v = np.eye(3).reshape(-1) / math.sqrt(3)
        rho = DensityOperator(lay, np.outer(v, v))
        assert hmin(rho, ["A"], ["B"]).hmin == pytest.approx(-math.log2(3), abs=1e-6)

    def test_larger_b(self):
        lay = SystemLayout.of(("A", 2), ("B", 16))
        rho = rand_state(lay, 2)
        check_certificate(rho, hmin(rho, ["A"], ["B"]))

    def test_smooth_rejects_positive_eps(self):
        rho = rand_state(AB, 0)
        with pytest.raises(NotImplementedError):
            hmin_smooth(rho, ["A"], ["B"], 0.1)
        assert hmin_smooth(rho, ["A"], ["B"], 0.0).hmin == hmin(rho, ["A"], ["B"]).hmin


class TestOracles:
    def test_cc_uniform_and_diagonal(self):
        assert hmin_cc(np.full((4, 3), 1 / 12)) == pytest.approx(2.0)
        assert hmin_cc(np.eye(3) / 3) == pytest.approx(0.0, abs=1e-15)

    @pytest.mark.parametrize("p", [[[0.5, 0.6]], [[-0.1, 1.1]], [[np.nan, 1]], []])
    def test_bad_distribution(self, p):
        with pytest.raises(BadDistribution):
            hmin_cc(p)


class TestGuessing:
    lay = SystemLayout.of(("B", 2))

    def test_orthogonal(self):
        k0 = DensityOperator(self.lay, np.diag([1.0, 0]))
        k1 = DensityOperator(self.lay, np.diag([0, 1.0]))
        assert pguess_cq(make_cq([0.5, 0.5], [k0, k1]), "A", ["B"]) == pytest.approx(1, abs=1e-7)

    def test_identical(self):
        r = rand_state(self.lay, 0)
        assert pguess_cq(make_cq([1 / 3] * 3, [r] * 3), "A", ["B"]) == pytest.approx(1 / 3, abs=1e-7)

    def test_helstrom_example(self):
        k0 = DensityOperator(self.lay, np.diag([1.0, 0]))
        plus = DensityOperator(self.lay, np.full((2, 2), 0.5))
        expected = 0.5 + math.sqrt(2) / 4
        assert pguess_cq(make_cq([0.5, 0.5], [k0, plus]), "A", ["B"]) == pytest.approx(expected, abs=1e-7)
        assert helstrom_pguess(0.5, k0.matrix, 0.5, plus.matrix) == pytest.approx(expected)

    @pytest.mark.parametrize("seed", range(10))
    def test_random_binary_helstrom(self, seed):
        gen = ensembles.rng(seed)
        lay = SystemLayout.of(("B", 3))
        p = float(gen.uniform(0.05, 0.95))
        r0, r1 = rand_state(lay, seed + 1), rand_state(lay, seed + 2)
        rho = make_cq([p, 1 - p], [r0, r1])
        hel = helstrom_pguess(p, r0.matrix, 1 - p, r1.matrix)
        assert hmin(rho, ["A"], ["B"]).hmin == pytest.approx(-math.log2(hel), abs=1e-7)

    def test_not_cq(self):
        with pytest.raises(NotCQ):
            pguess_cq(rand_state(AB, 0), "A", ["B"])
        lay = SystemLayout.of(("A", 2, True), ("B", 2))
        with pytest.raises(NotCQ):
            pguess_cq(DensityOperator(lay, epr_pairs(1).density().matrix), "A", ["B"])
