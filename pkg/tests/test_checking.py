import itertools

import numpy as np
import pytest

from qkdlab.attack_model import (
    BellDiagonalState,
    PureAttackState,
    classicalize,
    named_attack,
    random_attack,
)
from qkdlab.bell_algebra import bell_state, pattern_from_index
from qkdlab.checking import (
    CheckPlan,
    ProtocolConfig,
    error_probability,
    local_equivalence_report,
    local_projector,
    nonlocal_projector,
    outcome_distribution,
    random_plan,
    run_check_phase,
    sample_check,
    sample_error_bits,
)
from qkdlab.qstate import DensityOperator
from qkdlab.rng import trial_streams

KET = {"0": np.array([1, 0]), "1": np.array([0, 1])}
KET["+"] = (KET["0"] + KET["1"]) / np.sqrt(2)
KET["-"] = (KET["0"] - KET["1"]) / np.sqrt(2)


def ket(label):
    v = np.ones(1)
    for c in label:
        v = np.kron(v, KET[c])
    return v


def proj(*labels):
    return sum(np.outer(ket(lab), ket(lab)) for lab in labels)


# Computational/X-basis forms of the pair measurements, independent of Bell vectors.
ORACLE_PROJECTORS = {
    ("Z", 0): proj("00", "11"),
    ("Z", 1): proj("01", "10"),
    ("X", 0): proj("++", "--"),
    ("X", 1): proj("+-", "-+"),
}


def oracle_distribution(attack: PureAttackState, plan: CheckPlan):
    """Brute force: full-space projector products applied to the dense joint vector."""
    psi = attack.joint.amplitudes
    out = {}
    for bits in itertools.product((0, 1), repeat=len(plan.checked_pairs)):
        op = np.ones((1, 1))
        chosen = dict(zip(plan.checked_pairs, zip(plan.bases, bits)))
        for pair in range(attack.n_pairs):
            op = np.kron(op, ORACLE_PROJECTORS[chosen[pair]] if pair in chosen else np.eye(4))
        op = np.kron(op, np.eye(attack.eve_dim))
        out[bits] = float(np.real(np.vdot(psi, op @ psi)))
    return out


@pytest.mark.parametrize("basis", ["Z", "X"])
@pytest.mark.parametrize("outcome", [0, 1])
def test_nonlocal_projectors_match_product_forms(basis, outcome):
    np.testing.assert_allclose(nonlocal_projector(basis, outcome), ORACLE_PROJECTORS[(basis, outcome)], atol=1e-15)


def test_local_projectors_refine_nonlocal():
    for basis in "ZX":
        for e in (0, 1):
            summed = sum(local_projector(basis, a, b) for a in (0, 1) for b in (0, 1) if a ^ b == e)
            np.testing.assert_allclose(summed, nonlocal_projector(basis, e), atol=1e-15)


def test_x_check_maps_separable_to_entangled():
    out = nonlocal_projector("X", 0) @ ket("00")
    np.testing.assert_allclose(out, bell_state(0) / np.sqrt(2), atol=1e-15)


def test_per_bell_state_error_probabilities():
    assert [error_probability(k) for k in (0, 3, 1, 2)] == [0, 0.5, 0.5, 1]
    for k, expected in zip((0, 3, 1, 2), (0, 0.5, 0.5, 1)):
        bd = BellDiagonalState.delta((k,))
        exact = np.mean([outcome_distribution(bd, CheckPlan((0,), (b,)))[(1,)] for b in "ZX"])
        assert abs(exact - expected) < 1e-12


def test_no_attack_never_errors(rng):
    for plan in (CheckPlan((0, 2), ("Z", "X")), CheckPlan((1,), ("X",), "local")):
        dist = outcome_distribution(named_attack("none", 4), plan)
        assert abs(dist[(0,) * len(plan.checked_pairs)] - 1) < 1e-12


@pytest.mark.parametrize("basis", ["Z", "X"])
@pytest.mark.parametrize("mode", ["nonlocal", "local"])
def test_psi_minus_always_errors(basis, mode):
    dist = outcome_distribution(BellDiagonalState.delta("2"), CheckPlan((0,), (basis,), mode))
    assert abs(dist[(1,)] - 1) < 1e-12


def n2_example_attack(rng, eve_dim=2, n_terms=12):
    return random_attack(rng, 4, eve_dim, n_terms)


def closed_form_p00(attack):
    weights = attack.pattern_weights()
    total = 0.0
    for idx, w in enumerate(weights):
        k = pattern_from_index(idx, 4)
        if k[0] in (0, 3) and k[2] in (0, 1):
            total += w
    return total


def test_worked_example_p00(rng):
    plan = CheckPlan((0, 2), ("Z", "X"))
    for _ in range(10):
        attack = n2_example_attack(rng)
        dist = outcome_distribution(attack, plan)
        assert abs(dist[(0, 0)] - closed_form_p00(attack)) < 1e-12
        oracle = oracle_distribution(attack, plan)
        for bits in dist:
            assert abs(dist[bits] - oracle[bits]) < 1e-12


def test_worked_example_collapse(rng):
    plan = CheckPlan((0, 2), ("Z", "X"))
    attack = n2_example_attack(rng)
    sample = sample_check(attack, plan, rng, outcome=(0, 0))
    p00 = closed_form_p00(attack)
    assert abs(sample.probability - p00) < 1e-12
    for idx in range(256):
        k = pattern_from_index(idx, 4)
        expected = attack.bell_amps[idx] / np.sqrt(p00) if k[0] in (0, 3) and k[2] in (0, 1) else 0
        np.testing.assert_allclose(sample.collapsed.bell_amps[idx], expected, atol=1e-12)
    # the mixed counterpart keeps the same weights, renormalised by 1/p00
    mixed = sample_check(classicalize(attack), plan, rng, outcome=(0, 0)).collapsed
    np.testing.assert_allclose(mixed.probs, classicalize(sample.collapsed).probs, atol=1e-12)


def test_collapse_of_delta_is_unchanged(rng):
    bd = BellDiagonalState.delta("0312")
    plan = CheckPlan((1, 3), ("X", "Z"))
    sample = sample_check(bd, plan, rng)
    assert sample.error_bits == (1, 1)
    np.testing.assert_array_equal(sample.collapsed.probs, bd.probs)


def test_forced_zero_probability_outcome_rejected(rng):
    with pytest.raises(ValueError):
        sample_check(named_attack("none", 2), CheckPlan((0,), ("Z",)), rng, outcome=(1,))


def test_plan_validation():
    with pytest.raises(ValueError):
        CheckPlan((0, 0), ("Z", "X"))
    with pytest.raises(ValueError):
        CheckPlan((0,), ("Y",))
    with pytest.raises(ValueError):
        CheckPlan((0,), ("Z", "X"))
    with pytest.raises(ValueError):
        outcome_distribution(named_attack("none", 2), CheckPlan((2,), ("Z",)))
    plan = CheckPlan((3, 1), ("X", "Z"))
    assert plan.checked_pairs == (1, 3) and plan.bases == ("Z", "X")


def test_sampling_matches_distribution(rng):
    attack = random_attack(rng, 3, 2, 6)
    plan = CheckPlan((0, 2), ("X", "Z"))
    dist = outcome_distribution(attack, plan)
    draws = 10_000
    counts = dict.fromkeys(dist, 0)
    for _ in range(draws):
        counts[sample_check(classicalize(attack), plan, rng).error_bits] += 1
    for bits, p in dist.items():
        sigma = np.sqrt(p * (1 - p) / draws)
        assert abs(counts[bits] / draws - p) <= 3 * sigma + 1e-12


def test_pure_sampling_matches_distribution(rng):
    attack = random_attack(rng, 2, 2, 4)
    plan = CheckPlan((0,), ("X",))
    p1 = outcome_distribution(attack, plan)[(1,)]
    draws = 2000
    hits = sum(sample_check(attack, plan, rng).error_bits[0] for _ in range(draws))
    assert abs(hits / draws - p1) <= 3 * np.sqrt(p1 * (1 - p1) / draws) + 1e-12


def test_classicalization_statistics(rng):
    for _ in range(20):
        n_pairs = int(rng.integers(2, 5))
        attack = random_attack(rng, n_pairs, int(rng.choice([1, 2, 4])), int(rng.integers(1, 9)))
        plan = random_plan(n_pairs, int(rng.integers(1, n_pairs + 1)), rng)
        pure = outcome_distribution(attack, plan)
        classical = outcome_distribution(classicalize(attack), plan)
        assert max(abs(pure[b] - classical[b]) for b in pure) < 1e-10


def test_collapse_similarity(rng):
    for _ in range(10):
        attack = random_attack(rng, 3, 2, 6)
        plan = random_plan(3, 2, rng)
        for bits, p in outcome_distribution(attack, plan).items():
            if p < 1e-9:
                continue
            pure = sample_check(attack, plan, rng, outcome=bits).collapsed
            classical = sample_check(classicalize(attack), plan, rng, outcome=bits).collapsed
            np.testing.assert_allclose(classicalize(pure).probs, classical.probs, atol=1e-12)
            surviving = set(np.flatnonzero(pure.pattern_weights() > 1e-14))
            assert surviving == set(np.flatnonzero(classical.probs > 1e-14))


def test_local_mode_records_raw_outcomes(rng):
    config = ProtocolConfig(4, 0.25, 0.3)
    attack = random_attack(rng, 4, 2, 5)
    outcome = run_check_phase(attack, config, trial_streams(7, 0), mode="local")
    for rec in outcome.records:
        a, b = rec.raw_local_outcomes
        assert rec.error_bit == a ^ b


def test_bell_diagonal_local_mode_returns_density(rng):
    bd = classicalize(random_attack(rng, 2, 2, 4))
    sample = sample_check(bd, CheckPlan((0,), ("Z",), "local"), rng)
    assert isinstance(sample.collapsed, DensityOperator)
    a, b = sample.raw[0]
    assert sample.error_bits == (a ^ b,)


def test_run_check_phase_no_attack():
    config = ProtocolConfig(8, 0.1, 0.15)
    out = run_check_phase(named_attack("none", 8), config, trial_streams(1, 0))
    assert out.error_rate == 0 and out.accepted
    assert len(out.plan.checked_pairs) == 4
    assert out.residual.prob("0000") == 1.0


def test_run_check_phase_no_attack_pure():
    config = ProtocolConfig(4, 0.1, 0.15)
    attack = PureAttackState(np.eye(256, 1))
    out = run_check_phase(attack, config, trial_streams(1, 0))
    assert out.accepted
    assert isinstance(out.residual, PureAttackState)
    assert out.residual.n_pairs == 2
    assert abs(classicalize(out.residual).prob("00") - 1) < 1e-12


def test_run_check_phase_all_psi_minus():
    config = ProtocolConfig(6, 0.9, 0.95)
    for trial in range(20):
        out = run_check_phase(BellDiagonalState.delta("222222"), config, trial_streams(3, trial))
        assert out.error_rate == 1.0 and not out.accepted


def test_error_rate_grid_and_accept(rng):
    config = ProtocolConfig(6, 1 / 3, 0.5)
    attack = named_attack("pauli_channel", 6, p_x=0.3, p_z=0.2)
    for trial in range(50):
        out = run_check_phase(attack, config, trial_streams(11, trial))
        assert out.error_rate in (0, 1 / 3, 2 / 3, 1)
        assert out.accepted == (out.error_rate <= config.e_check)


def test_pauli_x_channel_error_rate():
    p_x = 0.1
    config = ProtocolConfig(8, 0.1, 0.15)
    attack = named_attack("pauli_channel", 8, p_x=p_x)
    rates = np.array([run_check_phase(attack, config, trial_streams(5, t)).error_rate for t in range(10_000)])
    # X flips show up only in Z-basis checks
    expected = p_x / 2
    per_pair_var = expected * (1 - expected)
    sigma = np.sqrt(per_pair_var / config.n_checked / len(rates))
    assert abs(rates.mean() - expected) <= 3 * sigma


def test_determinism():
    config = ProtocolConfig(8, 0.1, 0.15)
    attack = named_attack("pauli_channel", 8, p_x=0.2, p_z=0.1)
    a = run_check_phase(attack, config, trial_streams(99, 4))
    b = run_check_phase(attack, config, trial_streams(99, 4))
    assert a.plan == b.plan and a.records == b.records


def test_sample_error_bits_vectorised(rng):
    bases, bits = sample_error_bits(BellDiagonalState.delta("3"), 1000, rng)
    np.testing.assert_array_equal(bits, bases)  # Phi- errors exactly in the X basis


def test_local_equivalence_phi_minus():
    bd = named_attack("bell_flip", 1, pattern="3")
    z = local_equivalence_report(bd, CheckPlan((0,), ("Z",)))
    assert z.nonlocal_distribution[(1,)] == pytest.approx(0, abs=1e-12)
    assert z.local_distribution[(1,)] == pytest.approx(0, abs=1e-12)
    x = local_equivalence_report(bd, CheckPlan((0,), ("X",)))
    assert x.nonlocal_distribution[(1,)] == pytest.approx(1, abs=1e-12)
    assert x.local_distribution[(1,)] == pytest.approx(1, abs=1e-12)


def test_local_and_nonlocal_collapse_differ():
    # same statistics, different post-measurement states
    phi = PureAttackState(np.eye(4, 1))
    plan = CheckPlan((0,), ("Z",))
    nl = sample_check(phi, plan, np.random.default_rng(0), outcome=(0,)).collapsed
    loc = sample_check(phi, plan.with_mode("local"), np.random.default_rng(0), outcome=((0, 0),)).collapsed
    assert abs(classicalize(nl).prob("0") - 1) < 1e-12
    assert abs(classicalize(loc).prob("0") - 0.5) < 1e-12


def test_local_equivalence_random(rng):
    for _ in range(50):
        attack = random_attack(rng, 3, int(rng.integers(1, 4)), int(rng.integers(1, 7)))
        plan = random_plan(3, 1, rng)
        report = local_equivalence_report(attack, plan)
        assert report.ok(1e-10), report.max_deviation
        classical = local_equivalence_report(classicalize(attack), plan)
        assert classical.ok(1e-10)
