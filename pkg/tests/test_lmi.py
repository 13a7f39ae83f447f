import json

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from tpbr.lmi import (Infeasible, LmiCertificate, VertexData, annihilator, assemble_cb,
                      assemble_phi, assemble_psi, build_feasibility_problem, null_space_basis,
                      problem_from_vertices, scale_law, solve_feasibility, verify_certificate)
from tpbr.lmi import verify as vpath
from tpbr.lmi.assembly import VariableLayout, constraint_row
from tpbr.lmi.problem import to_working
from tpbr.model import DomainError, Polarity, UncertaintyBox


@pytest.fixture(scope="module")
def reduced_box(params):
    """Light-load end cut to 2000 ohm: a box that admits a certificate."""
    box = UncertaintyBox.for_polarity(params, Polarity.POSITIVE)
    return UncertaintyBox((box.R_L_range[0], 2000.0), box.i_eq_range, box.v_in_range)


@pytest.fixture(scope="module")
def reduced_problem(params, reduced_box):
    return build_feasibility_problem(params, Polarity.POSITIVE, box=reduced_box)


@pytest.fixture(scope="module")
def reduced_cert(reduced_problem):
    return solve_feasibility(reduced_problem)


# -- annihilator / null space ----------------------------------------------

def test_annihilator_examples():
    np.testing.assert_array_equal(annihilator([1, 0]), [[0, -1]])
    a = annihilator([0.3, 0.7])
    np.testing.assert_allclose(a, [[0.7, -0.3]])
    assert abs(a @ [0.3, 0.7]).max() < 1e-15
    a3 = annihilator([1, 2, 3])
    assert a3.shape == (3, 3)
    np.testing.assert_array_equal(a3 @ [1, 2, 3], 0)
    with pytest.raises(DomainError):
        annihilator([1.0])


def test_null_space_canonical():
    C_a = constraint_row(2, 2)
    Q = null_space_basis(C_a)
    assert Q.shape == (6, 5)
    np.testing.assert_array_equal(Q[:, :4], np.eye(6)[:, :4])
    np.testing.assert_allclose(Q[:, 4], [0, 0, 0, 0, 2 ** -0.5, -(2 ** -0.5)])
    assert np.abs(C_a @ Q).max() < 1e-12
    _, R, _ = scipy.linalg.qr(Q, pivoting=True)
    assert np.sum(np.abs(np.diag(R)) > 1e-10) == 5


# -- block assembly --------------------------------------------------------

def _random_vertex(rng, n=2, m=2):
    return [rng.standard_normal((n, n)) for _ in range(m)], rng.standard_normal((n, m))


def test_psi_examples(rng):
    A_list, K = _random_vertex(rng)
    psi = assemble_psi(A_list, K, np.eye(2), np.zeros((2, 2)))
    A = np.hstack(A_list)
    P = np.hstack([np.eye(2)] * 2)
    np.testing.assert_allclose(psi[:4, :4], A.T @ P + P.T @ A)
    np.testing.assert_allclose(psi, psi.T, atol=1e-12)
    psi0 = assemble_psi(A_list, np.zeros((2, 2)), np.eye(2), rng.standard_normal((2, 2)))
    np.testing.assert_array_equal(psi0[4:, 4:], 0)
    with pytest.raises(ValueError):
        assemble_psi([np.eye(3), np.eye(3)], K, np.eye(2), np.zeros((2, 2)))


def test_phi_examples():
    np.testing.assert_array_equal(assemble_phi([1e4, 1e4], np.zeros((2, 2))), 0)
    np.testing.assert_array_equal(assemble_phi([0, 0], np.ones((2, 2))), 0)
    phi = assemble_phi([1e4, 1e4], np.eye(2))
    # off-diagonal block 2 alpha' S: rows w_1 (0, 1) and w_2 (2, 3) against mu (4, 5)
    expected = np.zeros((4, 2))
    expected[0, 0] = expected[1, 1] = expected[2, 0] = expected[3, 1] = 2e4
    np.testing.assert_array_equal(phi[:4, 4:], expected)
    np.testing.assert_array_equal(phi[:4, :4], 0)
    np.testing.assert_array_equal(phi, phi.T)


def test_cb_examples():
    I2, Z = np.eye(2), np.zeros((2, 2))
    np.testing.assert_array_equal(assemble_cb([1, 0], 2, 2), np.hstack([0 * I2, -I2, Z]))
    np.testing.assert_array_equal(assemble_cb([0, 1], 2, 2), np.hstack([I2, 0 * I2, Z]))
    theta = np.array([0.25, 0.75])
    xi = np.concatenate([np.kron(theta, [1.5, -2.0]), [9.0, -3.0]])
    np.testing.assert_allclose(assemble_cb(theta, 2, 2) @ xi, 0, atol=1e-15)


def test_solver_and_verifier_assemblies_agree(rng):
    for _ in range(20):
        A_list, K = _random_vertex(rng)
        P0 = rng.standard_normal((2, 2))
        P0 = P0 + P0.T
        S = rng.standard_normal((2, 2))
        alpha = rng.uniform(0, 10, 2)
        theta = rng.dirichlet([1, 1])
        np.testing.assert_allclose(assemble_psi(A_list, K, P0, S),
                                   vpath.psi_matrix(A_list, K, P0, S), atol=1e-10)
        np.testing.assert_allclose(assemble_phi(alpha, S), vpath.phi_matrix(alpha, S), atol=1e-10)
        np.testing.assert_allclose(assemble_cb(theta, 2, 2), vpath.cb_matrix(theta, 2, 2),
                                   atol=1e-15)


# -- problem construction --------------------------------------------------

def test_block_counts(params):
    prob = build_feasibility_problem(params, Polarity.POSITIVE)
    assert len(prob.blocks) == 17
    assert all(b.constant.shape == (5, 5) for b in prob.blocks if b.label["family"] == "decrease")
    box = UncertaintyBox.for_polarity(params, Polarity.POSITIVE)
    flat = UncertaintyBox(box.R_L_range, box.i_eq_range, (170.0, 170.0))
    assert len(build_feasibility_problem(params, Polarity.POSITIVE, box=flat).blocks) == 9
    with pytest.raises(DomainError):
        problem_from_vertices([])


def test_blocks_are_affine_and_symmetric(params, rng):
    prob = build_feasibility_problem(params, Polarity.NEGATIVE)
    size = prob.layout.size
    x, y = rng.standard_normal(size), rng.standard_normal(size)
    for block in prob.blocks:
        lhs = block.evaluate(x + y) - block.evaluate(np.zeros(size))
        rhs = (block.evaluate(x) - block.constant) + (block.evaluate(y) - block.constant)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-10, atol=1e-9 * np.abs(lhs).max())
        M = block.evaluate(x)
        np.testing.assert_allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max()))


def test_layout_roundtrip(rng):
    layout = VariableLayout(2, 2)
    P0 = rng.standard_normal((2, 2))
    P0 = P0 + P0.T
    S = rng.standard_normal((2, 2))
    L = rng.standard_normal(layout.l_shape)
    P0b, Sb, Lb = layout.unpack(layout.pack(P0, S, L))
    np.testing.assert_array_equal(P0b, P0)
    np.testing.assert_array_equal(Sb, S)
    np.testing.assert_array_equal(Lb, L)
    assert layout.l_shape == (6, 2)
    assert layout.trace_row() @ layout.pack(P0, S, L) == pytest.approx(np.trace(P0))


# -- solving ---------------------------------------------------------------

def test_reduced_box_is_certified(reduced_problem, reduced_cert):
    assert reduced_cert.feasible
    assert reduced_cert.margin >= reduced_problem.epsilon
    np.testing.assert_allclose(reduced_cert.S.sum(axis=1), 0, atol=1e-12)
    report = verify_certificate(reduced_cert, reduced_problem, sample_count=1000, seed=1)
    assert report.passed, report.summary()
    assert report.worst_vertex_eig < 0 and report.worst_sample_eig < 0


def test_design_polytope_has_no_margin(params):
    """The full load range admits no certificate; the best margin is frozen here."""
    prob = build_feasibility_problem(params, Polarity.POSITIVE)
    with pytest.raises(Infeasible) as info:
        solve_feasibility(prob)
    best = info.value.best
    assert info.value.reason == "no-margin"
    assert best.margin == pytest.approx(-1.541e-4, rel=5e-3)
    report = verify_certificate(best, prob)
    assert not report.passed


def test_absurd_epsilon_is_infeasible(params, reduced_box):
    prob = build_feasibility_problem(params, Polarity.POSITIVE, epsilon=1e6, box=reduced_box)
    with pytest.raises(Infeasible):
        solve_feasibility(prob)


def test_single_mode_lyapunov_oracle(rng):
    A = np.array([[-2.0, 1.0], [-3.0, -1.0]])
    vertex = VertexData((A,), np.zeros((2, 1)))
    prob = problem_from_vertices([vertex], alpha=[1.0])
    cert = solve_feasibility(prob)
    assert cert.feasible
    np.testing.assert_allclose(cert.S, 0, atol=1e-6)
    assert np.max(np.linalg.eigvalsh(A.T @ cert.P0 + cert.P0 @ A)) < 0
    # independent oracle: Lyapunov-equation solution is a valid certificate too
    P_ly = scipy.linalg.solve_continuous_lyapunov(A.T, -np.eye(2))
    oracle = LmiCertificate(P_ly / np.trace(P_ly), np.zeros((2, 1)), np.zeros(cert.L.shape),
                            0.0, True)
    assert verify_certificate(oracle, prob).passed


def test_negated_s_fails_at_a_vertex(reduced_problem, reduced_cert):
    bad = LmiCertificate(reduced_cert.P0, -reduced_cert.S, reduced_cert.L, 0.0, False,
                         reduced_cert.polarity)
    report = verify_certificate(bad, reduced_problem)
    assert not report.passed
    assert any(v["family"] == "decrease" and "vertex" in v for v in report.violations)


def test_negated_p0_fails_positivity(reduced_problem, reduced_cert):
    bad = LmiCertificate(-reduced_cert.P0, reduced_cert.S, reduced_cert.L, 0.0, False)
    report = verify_certificate(bad, reduced_problem)
    assert not report.passed
    assert report.violations[0]["family"] == "positivity"


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_null_basis_choice_does_not_change_verdict(params, reduced_box, seed):
    rng = np.random.default_rng(seed)
    Q = null_space_basis(constraint_row(2, 2))
    R, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    Q_rot = Q @ R
    ok = build_feasibility_problem(params, Polarity.POSITIVE, box=reduced_box, Q_a=Q_rot)
    assert solve_feasibility(ok).feasible
    bad = build_feasibility_problem(params, Polarity.POSITIVE, Q_a=Q_rot)
    with pytest.raises(Infeasible):
        solve_feasibility(bad)


def test_cvxpy_backend_agrees(reduced_problem, reduced_cert):
    pytest.importorskip("cvxpy")
    other = solve_feasibility(reduced_problem, backend="cvxpy")
    assert other.feasible
    assert verify_certificate(other, reduced_problem).passed
    assert other.margin == pytest.approx(reduced_cert.margin, rel=0.15)


# -- certificate I/O and scaling -------------------------------------------

def test_certificate_json_roundtrip(tmp_path, reduced_cert):
    path = tmp_path / "cert.json"
    reduced_cert.save(path)
    doc = json.loads(path.read_text())
    assert doc["schema"] == "tpbr-certificate/1"
    assert set(doc) >= {"polarity", "P0", "S", "L", "margin", "feasible", "solver"}
    back = LmiCertificate.load(path)
    np.testing.assert_array_equal(back.P0, reduced_cert.P0)
    np.testing.assert_array_equal(back.S, reduced_cert.S)
    np.testing.assert_array_equal(back.L, reduced_cert.L)
    assert back.polarity is Polarity.POSITIVE


@pytest.mark.parametrize("doc", [{}, {"P0": [1, 2], "S": [], "L": [], "margin": 0,
                                      "feasible": True}, {"P0": "x"}])
def test_malformed_certificate(doc):
    with pytest.raises(ValueError, match="malformed"):
        LmiCertificate.from_dict(doc)


def test_scale_law_identity_and_errors(reduced_cert):
    same = scale_law(reduced_cert, np.ones(2))
    np.testing.assert_allclose(same.P0, reduced_cert.P0)
    np.testing.assert_allclose(same.S, reduced_cert.S)
    with pytest.raises(DomainError):
        scale_law(reduced_cert, [1.0, 0.0])
    with pytest.raises(DomainError):
        scale_law(reduced_cert, np.array([[1.0, 0.1], [0.0, 1.0]]))


@given(d=st.tuples(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3)),
       e=st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)))
def test_scale_law_preserves_argmax(reduced_cert, d, e):
    scaled = scale_law(reduced_cert, d)
    e = np.array(e)
    z = np.array(d) * e
    orig = e @ reduced_cert.S
    new = z @ scaled.S
    np.testing.assert_allclose(new, orig, rtol=1e-9, atol=1e-12)
    if abs(orig[0] - orig[1]) > 1e-9 * np.abs(orig).max():
        assert np.argmax(new) == np.argmax(orig)


def test_working_coordinates_roundtrip(reduced_cert, reduced_problem):
    P0z, Sz, Lz = to_working(reduced_cert.P0, reduced_cert.S, reduced_cert.L,
                             reduced_problem.scaling, 2)
    assert np.trace(P0z) == pytest.approx(1.0, abs=1e-7)
