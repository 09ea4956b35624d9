import json
import math

import numpy as np
import pytest

from qleak import audit
from qleak import protocol as P
from qleak.errors import BadDims, HypothesisViolated, NotClassicallyControlled
from qleak.minentropy import hmin
from qleak.qstate import DensityOperator, SystemLayout, epr_pairs


def test_case_pass_threshold():
    assert audit.ChainRuleCase("SEP_LCR", 0.0, 1e-6).passed
    assert not audit.ChainRuleCase("SEP_LCR", 0.0, 1.1e-6).passed
    assert audit.ChainRuleCase("SEP_LCR", 2.0, 0.5).slack == 1.5


class TestStaticRules:
    def test_independent_leak(self):
        lay = SystemLayout.of(("A", 2), ("X", 4), ("B", 2))
        # X is maximally mixed and independent of AB: no leakage at all
        rab = audit.random_instance("entangled", (2, 1, 2), 3)[0].matrix
        rho = DensityOperator(SystemLayout.of(("A", 2), ("B", 2), ("X", 4)),
                              np.kron(rab, np.eye(4) / 4)).reorder(lay.labels)
        case = audit.separable_case(rho)
        assert case.slack == pytest.approx(math.log2(4), abs=1e-6)

    def test_copy_of_classical_a(self):
        lay = SystemLayout.of(("A", 2, True), ("X", 2, True), ("B", 1))
        p = [0.3, 0.7]
        rho = DensityOperator(lay, np.diag([p[0], 0, 0, p[1]]))
        case = audit.separable_case(rho)
        assert case.lhs_bits == pytest.approx(0.0, abs=1e-6)
        assert case.rhs_bits == pytest.approx(-math.log2(0.7) - 1, abs=1e-6)
        assert case.passed

    def test_superdense_factor_two_tight(self):
        # A: two classical bits; X: the Pauli-encoded EPR half; B: the other half
        lay = SystemLayout.of(("A", 4, True), ("X", 2), ("B", 2))
        from qleak.qchannel import PAULI_ENCODINGS
        phi = epr_pairs(1).amplitudes
        m = np.zeros((16, 16), dtype=complex)
        for a in range(4):
            v = np.kron(PAULI_ENCODINGS[a], np.eye(2)) @ phi
            e = np.zeros(4)
            e[a] = 1
            m += 0.25 * np.kron(np.diag(e), np.outer(v, v.conj()))
        case = audit.general_case(DensityOperator(lay, m))
        assert case.lhs_bits == pytest.approx(0.0, abs=1e-6)
        assert case.rhs_bits == pytest.approx(0.0, abs=1e-6)
        assert abs(case.slack) <= 1e-6

    def test_literal_ax_mixture_is_not_covered(self):
        # rho_AX (x) rho_B with A, X maximally entangled breaks the one-bit bound
        lay = SystemLayout.of(("A", 2), ("X", 2), ("B", 1))
        rho = DensityOperator(lay, epr_pairs(1).density().matrix)
        assert not audit.separable_case(rho).passed
        assert audit.general_case(rho).passed

    @pytest.mark.parametrize("seed", range(15))
    def test_general_bound_weaker(self, seed):
        rho, _ = audit.random_instance("separable", (2, 2, 2), seed)
        sep, gen = audit.separable_case(rho), audit.general_case(rho)
        assert sep.passed and gen.passed
        assert gen.slack >= sep.slack - 1e-9
        assert gen.rhs_bits <= sep.rhs_bits + 1e-12

    def test_audits_small(self):
        assert all(c.passed for c in audit.audit_separable(20, 5))
        assert all(c.passed for c in audit.audit_general(20, 5))


class TestRandomInstance:
    @pytest.mark.parametrize("kind", ["separable", "entangled", "cq"])
    def test_deterministic_and_valid(self, kind):
        a, da = audit.random_instance(kind, (2, 3, 2), 42)
        b, db = audit.random_instance(kind, (2, 3, 2), 42)
        np.testing.assert_array_equal(a.matrix, b.matrix)
        assert da == db
        a.validate()

    def test_protocol_round_trip(self):
        for seed in range(10):
            spec, rho, _ = audit.random_instance("protocol", (), seed)
            assert P.parse(P.format_protocol(spec)) == spec
            assert spec.input_layout.total_dim <= 64
            rho.validate()

    def test_protocol_deterministic(self):
        s1, r1, _ = audit.random_protocol(99, epr=1)
        s2, r2, _ = audit.random_protocol(99, epr=1)
        assert P.format_protocol(s1) == P.format_protocol(s2)
        np.testing.assert_array_equal(r1.matrix, r2.matrix)
        assert P.comm_stats(s1).m_a <= 1

    def test_bad_dims(self):
        with pytest.raises(BadDims):
            audit.random_instance("separable", (8, 8, 8), 0)
        with pytest.raises(BadDims):
            audit.random_instance("separable", (2, 2), 0)
        with pytest.raises(BadDims):
            audit.random_instance("tensor-network", (2, 2, 2), 0)


class TestProtocolRules:
    def test_identity(self):
        spec = audit.bundled("identity")
        case = audit.audit_interactive(spec)
        assert case.lhs_bits == pytest.approx(case.rhs_bits, abs=1e-6)
        assert "interactive-leakage" in case.descriptor

    def test_bit_send_tight(self):
        spec = audit.bundled("bitsend")
        case = audit.audit_interactive(spec)
        assert abs(case.slack) <= 1e-6
        total = [c for c in audit.audit_comm_bounds(spec) if c.rule == "COMM_TOTAL"][0]
        assert abs(total.slack) <= 1e-6

    def test_superdense(self):
        spec = audit.bundled("superdense")
        ent = audit.ProtocolEntropies(spec)
        assert ent.h_before == pytest.approx(2, abs=1e-6) and ent.h_after == pytest.approx(0, abs=1e-6)
        case = audit.audit_entangled(spec, 1, ent=ent)
        assert abs(case.slack) <= 1e-6
        comm = audit.audit_comm_bounds(spec, ent=ent)
        assert [c.rule for c in comm] == ["COMM_ONEWAY"]
        assert abs(comm[0].slack) <= 1e-6

    def test_superdense_measured(self):
        comm = audit.audit_comm_bounds(audit.bundled("superdense"), measured=True)
        assert abs(comm[0].slack) <= 1e-6

    def test_entangled_hypothesis(self):
        with pytest.raises(HypothesisViolated):
            audit.audit_entangled(audit.bundled("superdense"), m=0)

    def test_no_communication_entangled(self):
        src = ("protocol quiet\nsystem A0 dim=2 classical owner=alice\nsystem EA dim=2 owner=alice\n"
               "system EB dim=2 owner=bob\ninput cq A0 uniform\ninput epr EA EB\nround 1\n"
               "alice op=X,Z targets=EA\n")
        case = audit.audit_entangled(P.parse(src))
        assert case.lhs_bits == pytest.approx(case.rhs_bits, abs=1e-6)

    def test_nothing_sent_comm(self):
        spec = audit.bundled("identity")
        cases = audit.audit_comm_bounds(spec)
        for c in cases:
            assert c.lhs_bits == 0 and c.rhs_bits == pytest.approx(0, abs=1e-6)

    def test_not_classically_controlled(self):
        src = "protocol p\nsystem M dim=2 owner=alice\nround 1\nalice op=X targets=M\nalice send M\n"
        with pytest.raises(NotClassicallyControlled):
            audit.audit_interactive(P.parse(src))

    @pytest.mark.parametrize("seed", range(6))
    def test_round_structure(self, seed):
        spec, rho, _ = audit.random_protocol(seed, rounds=3)
        cases = audit.round_structure(spec, rho, seed)
        assert all(c.passed for c in cases)
        assert len(cases) == sum(1 for rd in spec.rounds if rd.alice_send)

    def test_round_structure_superdense(self):
        cases = audit.round_structure(audit.bundled("superdense"))
        assert len(cases) == 1 and abs(cases[0].slack) <= 1e-6


class TestReports:
    def test_json_schema(self):
        rep = audit.run_audit("INTERACTIVE_LCR", 4, 7)
        data = json.loads(rep.to_json())
        assert list(data) == ["master_seed", "rule", "trials", "failures", "cases"]
        assert data["trials"] == 4 and data["failures"] == 0
        assert set(data["cases"][0]) == {"seed", "lhs_bits", "rhs_bits", "slack", "pass", "descriptor"}

    def test_deterministic_across_workers(self):
        a = audit.run_audit("COMM_ONEWAY", 6, 3, workers=1).to_json()
        b = audit.run_audit("COMM_ONEWAY", 6, 3, workers=3).to_json()
        assert a == b

    def test_measured(self):
        rep = audit.run_audit("COMM_TOTAL", 5, 1, measured=True)
        assert rep.passed and "measured" in rep.cases[0].descriptor

    @pytest.mark.parametrize("rule", audit.RULES)
    def test_every_rule_runs(self, rule):
        rep = audit.run_audit(rule, 3, 11)
        assert rep.passed and rep.trials == 3
        assert rule in rep.summary()

    def test_unknown_rule(self):
        with pytest.raises(KeyError):
            audit.run_audit("EQ_7", 1)


def test_lo_demo():
    res = audit.demo_lo_attack(40, 2)
    assert res.worst_excess <= 1e-8 and res.worst_exact <= 1e-8
    assert res.exact_pairs == 10


def test_yao_check():
    terms, bound, dist = audit.yao_check(5)
    assert terms <= bound and dist <= 1e-7


def test_epr_pair_entropy_helper():
    rho = epr_pairs(1).density()
    assert hmin(rho, ["A1"], ["B1"]).hmin == pytest.approx(-1, abs=1e-6)
