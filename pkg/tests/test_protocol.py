import numpy as np
import pytest

from qleak import audit, ensembles
from qleak import protocol as P
from qleak.errors import BadRound, LayoutMismatch, NotUnitaryProtocol, ParseError, ValidationError
from qleak.qchannel import KrausChannel, save_kraus
from qleak.qstate import DensityOperator, PureState, partial_trace, save_state, trace_distance

ONE_QUBIT = """\
protocol send1
system A0 dim=2 classical owner=alice
system M dim=2 owner=alice
input cq A0 uniform
round 1
alice op=X targets=M control=A0
alice send M
"""


def ping_pong(r):
    lines = ["protocol pp", "system A0 dim=2 classical owner=alice", "system M dim=2 owner=alice",
             "system N dim=2 owner=bob", "input cq A0 uniform"]
    for i in range(1, r + 1):
        lines += [f"round {i}", "alice op=H targets=M", "alice send M", "bob op=CNOT targets=M,N"]
        if i < r:
            lines.append("bob send M")
    return "\n".join(lines) + "\n"


class TestParse:
    def test_minimal(self):
        spec = P.parse(ONE_QUBIT)
        st = P.comm_stats(spec)
        assert spec.r == 1 and st.m_a == 1 and st.m_b == 0
        assert spec.classical_input_label == "A0"

    def test_superdense_round_trip(self):
        spec = audit.bundled("superdense")
        st = P.comm_stats(spec)
        assert (spec.r, st.m_a, st.m_b) == (1, 1, 0)
        op = spec.rounds[0].alice_ops[0]
        assert op.controlled and op.channel.control_dim == 4
        again = P.parse(P.format_protocol(spec), spec.base_dir)
        assert again == spec
        assert P.format_protocol(again) == P.format_protocol(spec)

    def test_bob_sends_last(self):
        with pytest.raises(ValidationError, match="party A sends the first and the last") as ei:
            P.parse(ONE_QUBIT + "bob send M\n")
        assert ei.value.line == 8

    @pytest.mark.parametrize("src,line", [
        ("protocol p\nsystem A dim=x owner=alice\n", 2),
        ("protocol p\nfrobnicate\n", 2),
        ("protocol p\nsystem A dim=2\n", 2),
        ("system A dim=2 owner=alice\n", 1),
        ("protocol p\nsystem A dim=2 owner=alice\nround 2\n", 3),
        ("protocol p\nalice send A\n", 2),
    ])
    def test_positioned_errors(self, src, line):
        with pytest.raises(ParseError) as ei:
            P.parse(src)
        assert ei.value.line == line
        assert str(ei.value).startswith(f"{line}:")

    def test_column(self):
        with pytest.raises(ParseError) as ei:
            P.parse("protocol p\nsystem A dim=2 owner=carol\n")
        assert ei.value.column == len("system A dim=2 ") + 1

    @pytest.mark.parametrize("patch,msg", [
        ("alice op=X targets=N\n", "held by bob"),
        ("alice op=X targets=A0\n", "must not be a target"),
        ("alice send A0\n", "cannot be sent"),
        ("alice op=CNOT targets=M\n", "dimension"),
        ("alice op=TOFFOLI targets=M\n", "unknown gate"),
    ])
    def test_validation(self, patch, msg):
        src = ("protocol p\nsystem A0 dim=2 classical owner=alice\nsystem M dim=2 owner=alice\n"
               "system N dim=2 owner=bob\ninput cq A0 uniform\nround 1\n" + patch)
        with pytest.raises(ValidationError, match=msg):
            P.parse(src)

    def test_op_after_send_out_of_order(self):
        with pytest.raises(ValidationError, match="out of order"):
            P.parse(ONE_QUBIT + "alice op=X targets=M\n")

    def test_output_must_end_with_bob(self):
        with pytest.raises(ValidationError, match="not held by Bob"):
            P.parse(ONE_QUBIT.replace("input cq A0 uniform", "input cq A0 uniform\noutput A0"))

    def test_kraus_file_op(self, tmp_path):
        z = np.diag([1.0, -1.0])
        save_kraus(tmp_path / "deph.kraus", KrausChannel((np.eye(2) / np.sqrt(2), z / np.sqrt(2))))
        src = ONE_QUBIT.replace("alice op=X targets=M control=A0", "alice op=deph.kraus targets=M")
        (tmp_path / "p.proto").write_text(src)
        spec = P.load(tmp_path / "p.proto")
        assert spec.rounds[0].alice_ops[0].channel.branches[0].kraus[0].shape == (2, 2)

    def test_input_file(self, tmp_path):
        lay = P.parse(ONE_QUBIT).input_layout.select(["M"])
        save_state(tmp_path / "m.state", DensityOperator(lay, np.diag([0.0, 1.0])))
        src = ONE_QUBIT.replace("input cq A0 uniform", "input cq A0 uniform\ninput file m.state")
        (tmp_path / "p.proto").write_text(src)
        rho = P.load(tmp_path / "p.proto").default_input()
        np.testing.assert_allclose(partial_trace(rho, ["M"]).matrix, np.diag([0, 1]))


class TestCommStats:
    def test_ping_pong(self):
        for r in (1, 2, 3):
            st = P.comm_stats(P.parse(ping_pong(r)))
            assert (st.m_a, st.m_b) == (r, r - 1)
            assert len(st.per_round) == r

    def test_empty_messages_cost_nothing(self):
        st = P.comm_stats(audit.bundled("identity"))
        assert st.m_a == 0 and st.m_b == 0


class TestRun:
    def test_identity(self):
        spec = audit.bundled("identity")
        rho = spec.default_input()
        res = P.run(spec, rho)
        np.testing.assert_allclose(res.final.matrix, rho.matrix, atol=1e-14)

    def test_bit_send(self):
        res = P.run(audit.bundled("bitsend"))
        joint = np.diag(partial_trace(res.final, ["A0", "OUT"]).matrix).real
        np.testing.assert_allclose(joint, [0.5, 0, 0, 0.5], atol=1e-12)

    def test_superdense(self):
        res = P.run(audit.bundled("superdense"))
        joint = np.diag(partial_trace(res.final, ["A0", "OUT"]).matrix).real.reshape(4, 4)
        np.testing.assert_allclose(joint, np.eye(4) / 4, atol=1e-12)
        assert res.stats.m_a == 1

    def test_layout_mismatch(self):
        spec = audit.bundled("bitsend")
        with pytest.raises(LayoutMismatch):
            P.run(spec, audit.bundled("superdense").default_input())

    @pytest.mark.parametrize("seed", range(8))
    def test_trace_invariants(self, seed):
        spec, rho, _ = audit.random_protocol(seed)
        res = P.run(spec, rho)
        a0 = partial_trace(rho, ["A0"]).matrix
        assert len(res.trace) == len(res.steps)
        for state in res.trace:
            assert abs(state.trace() - 1) <= 1e-8
            assert state.eigvals().min() >= -1e-8
            np.testing.assert_allclose(partial_trace(state, ["A0"]).matrix, a0, atol=1e-9)

    def test_channel_error_has_round(self):
        spec = audit.bundled("superdense")
        lay = spec.input_layout
        rho = DensityOperator(lay, np.full((lay.total_dim, lay.total_dim), 1 / lay.total_dim))
        with pytest.raises(Exception, match="round 1"):
            P.run(spec, rho)


class TestRunPrefix:
    def test_full(self):
        spec, rho, _ = audit.random_protocol(3, rounds=2)
        np.testing.assert_allclose(P.run_prefix(spec, rho, 2, "B").matrix, P.run(spec, rho).final.matrix,
                                   atol=1e-12)

    def test_identity_a_half(self):
        spec = audit.bundled("identity")
        rho = spec.default_input()
        np.testing.assert_allclose(P.run_prefix(spec, rho, 1, "A").matrix, rho.matrix)

    @pytest.mark.parametrize("k,half", [(1, "A"), (1, "B"), (2, "A"), (3, "B")])
    def test_trace(self, k, half):
        spec, rho, _ = audit.random_protocol(11, rounds=3)
        assert abs(P.run_prefix(spec, rho, k, half).trace() - 1) <= 1e-9

    def test_bad_round(self):
        spec = audit.bundled("identity")
        with pytest.raises(BadRound):
            P.run_prefix(spec, spec.default_input(), 2, "A")
        with pytest.raises(BadRound):
            P.run_prefix(spec, spec.default_input(), 1, "C")


class TestYao:
    def test_no_communication(self):
        spec = audit.bundled("identity")
        bob = PureState.basis(spec.input_layout.select(spec.bob_initial()), 0)
        dec = P.yao_decompose(spec, 1, bob)
        assert dec.term_count == 1
        np.testing.assert_allclose(dec.coefficients, [1.0])

    def test_one_qubit_each_way(self):
        spec = P.parse(ping_pong(2).replace("alice op=H", "alice op=HAAR:3"))
        bob = PureState.basis(spec.input_layout.select(["N"]), 0)
        for x in (0, 1):
            assert P.yao_decompose(spec, x, bob).term_count <= 8
        spec1 = P.parse(ping_pong(1))
        assert P.yao_decompose(spec1, 0, bob).term_count <= 2

    @pytest.mark.parametrize("seed", range(10))
    def test_random_reconstruction(self, seed):
        terms, bound, dist = audit.yao_check(seed)
        assert terms <= bound and dist <= 1e-7

    def test_reconstruct_matches_run(self):
        spec = P.parse(ping_pong(2))
        lay = spec.input_layout
        zeta = PureState.normalized(lay.select(["N"]), ensembles.pure_vector(2, ensembles.rng(1)))
        dec = P.yao_decompose(spec, 1, zeta)
        ket = PureState.basis(lay.select(["A0", "M"]), [1, 0]).tensor(zeta)
        final = P.run(spec, ket.density()).final
        assert trace_distance(dec.reconstruct().density(), final) <= 1e-7

    def test_rejects_non_unitary(self):
        src = ONE_QUBIT.replace("alice op=X targets=M control=A0", "alice op=KRAUS:5 targets=M")
        spec = P.parse(src)
        with pytest.raises(NotUnitaryProtocol):
            P.yao_decompose(spec, 0, PureState.basis(spec.input_layout.select(["M"]), 0))

    def test_rejects_mixed_bob(self):
        spec = P.parse(ping_pong(1))
        mixed = DensityOperator(spec.input_layout.select(["N"]), np.eye(2) / 2)
        with pytest.raises(NotUnitaryProtocol):
            P.yao_decompose(spec, 0, mixed)
