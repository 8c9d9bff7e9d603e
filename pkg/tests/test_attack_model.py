import numpy as np
import pytest

from qkdlab.attack_model import (
    AttackTerm,
    BellDiagonalState,
    PureAttackState,
    assemble_attack,
    attack_from_dict,
    classicalize,
    density_operator_of,
    named_attack,
    random_attack,
)
from qkdlab.bell_algebra import PHI_PLUS, bell_basis_matrix, bell_state, pattern_index
from qkdlab.qstate import partial_trace
from conftest import random_unit


def e(j, d):
    v = np.zeros(d)
    v[j] = 1
    return v


def test_no_attack_state():
    attack = assemble_attack([AttackTerm((0, 0), 1.0, e(0, 2))], n_pairs=2, eve_dim=2)
    expected = np.kron(np.kron(PHI_PLUS, PHI_PLUS), e(0, 2))
    np.testing.assert_allclose(attack.joint.amplitudes, expected, atol=1e-15)


def test_same_pattern_terms_add_per_eve_index():
    c = 1 / np.sqrt(2)
    attack = assemble_attack([AttackTerm("01", c, e(0, 2)), AttackTerm("01", c, e(1, 2))], 2, 2)
    row = attack.bell_amps[pattern_index((0, 1))]
    np.testing.assert_allclose(row, [c, c])
    assert np.count_nonzero(attack.bell_amps) == 2


def test_random_attack_against_outer_product_oracle(rng):
    n_pairs, d_e = 4, 2
    patterns = [tuple(rng.integers(0, 4, size=n_pairs)) for _ in range(5)]
    coeffs = rng.normal(size=5) + 1j * rng.normal(size=5)
    eves = [random_unit(rng, d_e) for _ in range(5)]
    # normalise the assembled joint vector, built independently from Bell vectors
    joint = np.zeros(4**n_pairs * d_e, dtype=complex)
    for p, c, v in zip(patterns, coeffs, eves):
        vec = np.ones(1)
        for k in p:
            vec = np.kron(vec, bell_state(k))
        joint += c * np.kron(vec, v)
    norm = np.linalg.norm(joint)
    attack = assemble_attack([AttackTerm(p, c / norm, v) for p, c, v in zip(patterns, coeffs, eves)], n_pairs, d_e)
    assert abs(np.vdot(attack.joint.amplitudes, attack.joint.amplitudes) - 1) < 1e-12
    joint /= norm
    np.testing.assert_allclose(attack.joint.amplitudes, joint, atol=1e-12)
    rho_oracle = np.einsum("ie,je->ij", joint.reshape(-1, d_e), joint.reshape(-1, d_e).conj())
    np.testing.assert_allclose(density_operator_of(attack).matrix, rho_oracle, atol=1e-12)


def test_assemble_renormalises_small_error():
    attack = assemble_attack([AttackTerm("0", 1 + 1e-9, [1])], 1, 1)
    assert abs(np.linalg.norm(attack.bell_amps) - 1) < 1e-15


@pytest.mark.parametrize(
    "terms, n_pairs, eve_dim",
    [
        ([], 1, 1),
        ([AttackTerm("00", 1, [1])], 1, 1),
        ([AttackTerm("0", 0.5, [1])], 1, 1),
        ([AttackTerm("0", 1, [1, 0])], 1, 1),
        ([AttackTerm("0", 1, [1])], 1, 17),
    ],
)
def test_assemble_rejects(terms, n_pairs, eve_dim):
    with pytest.raises(ValueError):
        assemble_attack(terms, n_pairs, eve_dim)


def test_classicalize_single_term():
    attack = assemble_attack([AttackTerm("31", 1j, e(1, 3))], 2, 3)
    bd = classicalize(attack)
    assert bd.prob("31") == 1.0
    assert bd.support() == {(3, 1): 1.0}


def test_classicalize_weights_are_squared_coefficients():
    c = np.array([0.6, 0.8j])
    attack = assemble_attack([AttackTerm("0", c[0], [1, 0]), AttackTerm("3", c[1], [0.6, 0.8])], 1, 2)
    bd = classicalize(attack)
    np.testing.assert_allclose(bd.probs, [0.36, 0, 0, 0.64], atol=1e-15)


def test_classicalize_normalised(rng):
    for _ in range(50):
        bd = classicalize(random_attack(rng, int(rng.integers(1, 4)), int(rng.integers(1, 5)), 6))
        assert abs(bd.probs.sum() - 1) < 1e-12


def test_classicalize_invariant_under_eve_unitary(rng):
    attack = random_attack(rng, 3, 4, 6)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    rotated = PureAttackState(attack.bell_amps @ q.T)
    np.testing.assert_allclose(classicalize(rotated).probs, classicalize(attack).probs, atol=1e-12)


def test_classicalized_density_is_bell_dephased(rng):
    for _ in range(10):
        attack = random_attack(rng, 2, 2, 5)
        rho = density_operator_of(attack).matrix
        u = bell_basis_matrix(2)
        in_bell = u.conj().T @ rho @ u
        dephased = u @ np.diag(np.diag(in_bell)) @ u.conj().T
        np.testing.assert_allclose(density_operator_of(classicalize(attack)).matrix, dephased, atol=1e-12)


def test_bell_diagonal_density_is_diagonal(rng):
    bd = BellDiagonalState(rng.dirichlet(np.ones(16)))
    rho = density_operator_of(bd).matrix
    u = bell_basis_matrix(2)
    off = u.conj().T @ rho @ u - np.diag(bd.probs)
    assert np.max(np.abs(off)) < 1e-12
    with pytest.raises(ValueError):
        density_operator_of(bd, keep="ABE")


def test_density_traces(rng):
    for _ in range(50):
        attack = random_attack(rng, 2, 3, 4)
        assert abs(np.trace(density_operator_of(attack).matrix) - 1) < 1e-12
        assert abs(np.trace(density_operator_of(attack, "ABE").matrix) - 1) < 1e-12


def test_no_attack_density():
    rho = density_operator_of(named_attack("none", 2)).matrix
    phi2 = np.kron(PHI_PLUS, PHI_PLUS)
    np.testing.assert_allclose(rho, np.outer(phi2, phi2.conj()), atol=1e-15)


def test_named_none_and_flip():
    assert named_attack("none", 2).prob("00") == 1.0
    assert named_attack("bell_flip", 3, pattern="023").prob((0, 2, 3)) == 1.0


def test_pauli_channel_deterministic_x():
    bd = named_attack("pauli_channel", 1, p_x=1.0)
    assert bd.prob("1") == 1.0
    rho = density_operator_of(bd).matrix
    psi_plus = np.array([0, 1, 1, 0]) / np.sqrt(2)
    np.testing.assert_allclose(rho, np.outer(psi_plus, psi_plus), atol=1e-15)


def test_pauli_channel_product():
    bd = named_attack("pauli_channel", 2, p_x=0.1, p_y=0.2, p_z=0.3)
    assert abs(bd.prob("12") - 0.1 * 0.2) < 1e-15
    assert abs(bd.prob("00") - 0.4 * 0.4) < 1e-15


def _bell_weights(rho):
    return np.array([np.real(np.vdot(bell_state(k), rho @ bell_state(k))) for k in range(4)])


def _off_diagonal(rho):
    u = np.column_stack([bell_state(k) for k in range(4)])
    m = u.conj().T @ rho @ u
    return np.max(np.abs(m - np.diag(np.diag(m))))


def test_intercept_resend_unrelated_qubit_is_uniform():
    # Eve keeps Bob's qubit and sends a maximally mixed one: rho = tr_B(Phi+) (x) I/2
    phi = np.outer(PHI_PLUS, PHI_PLUS.conj()).reshape(2, 2, 2, 2)
    rho_a = np.einsum("abcb->ac", phi)
    rho = np.kron(rho_a, np.eye(2) / 2)
    assert _off_diagonal(rho) < 1e-15
    np.testing.assert_allclose(_bell_weights(rho), 0.25, atol=1e-15)
    np.testing.assert_allclose(named_attack("intercept_resend", 1, fraction=1.0).probs, _bell_weights(rho))


def test_intercept_resend_z_measurement():
    # measure Bob in Z and resend: (|00><00| + |11><11|)/2 = (Phi+ + Phi-)/2
    rho = np.diag([0.5, 0, 0, 0.5]).astype(complex)
    assert _off_diagonal(rho) < 1e-15
    np.testing.assert_allclose(_bell_weights(rho), [0.5, 0, 0, 0.5], atol=1e-15)
    got = named_attack("intercept_resend", 1, fraction=1.0, basis="Z").probs
    np.testing.assert_allclose(got, [0.5, 0, 0, 0.5], atol=1e-15)


def test_intercept_resend_bb84_bases():
    # Z gives a Z flip w.p. 1/2, X gives an X flip w.p. 1/2
    got = named_attack("intercept_resend", 1, fraction=1.0, basis="ZX").probs
    np.testing.assert_allclose(got, [0.5, 0.25, 0, 0.25], atol=1e-15)


def test_intercept_resend_fraction():
    got = named_attack("intercept_resend", 1, fraction=0.2).probs
    np.testing.assert_allclose(got, [0.8 + 0.05, 0.05, 0.05, 0.05])


@pytest.mark.parametrize(
    "kind, params",
    [
        ("pauli_channel", {"p_x": 0.6, "p_z": 0.6}),
        ("pauli_channel", {"p_x": -0.1}),
        ("intercept_resend", {"fraction": 1.5}),
        ("intercept_resend", {"fraction": 0.5, "basis": "Q"}),
        ("pauli_channel", {"p_w": 0.1}),
        ("teleport", {}),
    ],
)
def test_named_attack_rejects(kind, params):
    with pytest.raises(ValueError):
        named_attack(kind, 2, **params)


def test_attack_from_dict_terms():
    spec = {
        "n_pairs": 2,
        "eve_dim": 2,
        "terms": [
            {"pattern": "00", "coeff": [0.6, 0.0], "eve_state": [[1, 0], [0, 0]]},
            {"pattern": "13", "coeff": [0.0, 0.8], "eve_state": [[0, 0], [1, 0]]},
        ],
    }
    attack = attack_from_dict(spec)
    assert isinstance(attack, PureAttackState)
    np.testing.assert_allclose(classicalize(attack).prob("13"), 0.64)


def test_attack_from_dict_named():
    bd = attack_from_dict({"named": {"kind": "pauli_channel", "params": {"p_z": 0.5}}}, n_pairs=1)
    np.testing.assert_allclose(bd.probs, [0.5, 0, 0, 0.5])
    with pytest.raises(ValueError):
        attack_from_dict({"named": {"kind": "none"}})
