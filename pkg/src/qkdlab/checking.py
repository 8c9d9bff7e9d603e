"""Checking phase of the entanglement-based protocol.

Alice and Bob pick ``n`` of their ``2n`` pairs and measure each in the Z or X
basis. In *nonlocal* mode the pair is measured with the two-outcome
projectors

    Z:  {Phi+, Phi-} vs {Psi+, Psi-}      (|00>,|11>  vs  |01>,|10>)
    X:  {Phi+, Psi+} vs {Phi-, Psi-}      (|++>,|-->  vs  |+->,|-+>)

and the second outcome counts as an error. In *local* mode each side
measures its own qubit and the error bit is the XOR of the two results.

Pure attack states are measured on their dense computational-basis vector;
Bell-diagonal states in nonlocal mode are measured by restricting the
pattern distribution, which is what makes the two routes independent.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .attack_model import BellDiagonalState, PureAttackState, density_operator_of
from .bell_algebra import bell_state, bell_to_computational, computational_to_bell, single_qubit_basis
from .qstate import DensityOperator, pair_layout, reduce_matrix, reduce_vector
from .rng import TrialStreams, as_streams

BASES = ("Z", "X")
MODES = ("nonlocal", "local")

# Error bit of Bell vector k (Pauli index) under each nonlocal measurement.
ERROR_BIT = {"Z": (0, 1, 1, 0), "X": (0, 0, 1, 1)}


def nonlocal_projector(basis: str, outcome: int) -> np.ndarray:
    """Projector of the nonlocal measurement, built from Bell vectors."""
    if basis not in ERROR_BIT:
        raise ValueError(f"checking basis must be 'Z' or 'X', got {basis!r}")
    ks = [k for k in range(4) if ERROR_BIT[basis][k] == outcome]
    if not ks:
        raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
    return sum(np.outer(bell_state(k), bell_state(k).conj()) for k in ks)


def local_projector(basis: str, a: int, b: int) -> np.ndarray:
    """Projector onto Alice's outcome ``a`` and Bob's outcome ``b`` in ``basis``."""
    if basis not in ERROR_BIT:
        raise ValueError(f"checking basis must be 'Z' or 'X', got {basis!r}")
    vecs = single_qubit_basis(basis)
    v = np.kron(vecs[a], vecs[b])
    return np.outer(v, v.conj())


def error_probability(k: int) -> float:
    """Chance that Bell vector ``k`` shows an error under a uniformly random basis."""
    return 0.5 * (ERROR_BIT["Z"][k] + ERROR_BIT["X"][k])


@dataclass(frozen=True)
class CheckPlan:
    """Which pairs (0-based) are checked, in which basis, and how."""

    checked_pairs: tuple[int, ...]
    bases: tuple[str, ...]
    mode: str = "nonlocal"

    def __post_init__(self):
        pairs = tuple(int(p) for p in self.checked_pairs)
        bases = tuple(self.bases)
        if len(pairs) != len(bases):
            raise ValueError("every checked pair needs exactly one basis")
        if len(set(pairs)) != len(pairs):
            raise ValueError(f"checked pairs must be distinct, got {pairs}")
        if any(b not in BASES for b in bases):
            raise ValueError(f"bases must be 'Z' or 'X', got {bases}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        order = sorted(range(len(pairs)), key=pairs.__getitem__)
        object.__setattr__(self, "checked_pairs", tuple(pairs[i] for i in order))
        object.__setattr__(self, "bases", tuple(bases[i] for i in order))

    @property
    def basis_per_pair(self) -> dict[int, str]:
        return dict(zip(self.checked_pairs, self.bases))

    def validate(self, n_pairs: int) -> None:
        if not self.checked_pairs:
            raise ValueError("a check plan needs at least one pair")
        if any(not 0 <= p < n_pairs for p in self.checked_pairs):
            raise ValueError(f"checked pairs {self.checked_pairs} out of range for {n_pairs} pairs")

    def info_pairs(self, n_pairs: int) -> tuple[int, ...]:
        checked = set(self.checked_pairs)
        return tuple(p for p in range(n_pairs) if p not in checked)

    def with_mode(self, mode: str) -> CheckPlan:
        return CheckPlan(self.checked_pairs, self.bases, mode)


def random_plan(n_pairs: int, n_checked: int, rng: np.random.Generator, mode: str = "nonlocal") -> CheckPlan:
    pairs = np.sort(rng.choice(n_pairs, size=n_checked, replace=False))
    bases = [BASES[b] for b in rng.integers(0, 2, size=n_checked)]
    return CheckPlan(tuple(int(p) for p in pairs), tuple(bases), mode)


@dataclass(frozen=True)
class CheckRecord:
    pair: int
    basis: str
    error_bit: int
    raw_local_outcomes: tuple[int, int] | None = None


@dataclass(frozen=True)
class ProtocolConfig:
    n_pairs_total: int
    e_check: float
    e_cor: float
    seed: int = 0
    trials: int = 1

    def __post_init__(self):
        if self.n_pairs_total < 2 or self.n_pairs_total % 2:
            raise ValueError(f"n_pairs_total must be a positive even number, got {self.n_pairs_total}")
        if not 0.0 <= self.e_check < 1.0:
            raise ValueError(f"e_check must be in [0, 1), got {self.e_check}")
        if not self.e_check < self.e_cor:
            raise ValueError(f"e_check ({self.e_check}) must be below e_cor ({self.e_cor})")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.trials < 1:
            raise ValueError("trials must be positive")

    @property
    def n_checked(self) -> int:
        return self.n_pairs_total // 2

    def accepts(self, n_errors: int) -> bool:
        return n_errors / self.n_checked <= self.e_check

    @property
    def max_passing_errors(self) -> int:
        """Largest error count that still passes the check."""
        return max(j for j in range(self.n_checked + 1) if self.accepts(j))


@dataclass
class ProtocolOutcome:
    plan: CheckPlan
    records: list[CheckRecord]
    error_rate: float
    accepted: bool
    residual: PureAttackState | BellDiagonalState | DensityOperator = field(repr=False)

    @property
    def n_errors(self) -> int:
        return sum(r.error_bit for r in self.records)


# --- dense branch engine ---------------------------------------------------


def _apply_to_pair(op: np.ndarray, tensor: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(op, tensor, axes=([1], [axis])), 0, axis)


def _pair_ops(basis: str, mode: str) -> list[tuple[object, np.ndarray]]:
    if mode == "nonlocal":
        return [(e, nonlocal_projector(basis, e)) for e in (0, 1)]
    return [((a, b), local_projector(basis, a, b)) for a, b in product((0, 1), repeat=2)]


def _error_bits(labels: tuple, mode: str) -> tuple[int, ...]:
    if mode == "nonlocal":
        return tuple(labels)
    return tuple(a ^ b for a, b in labels)


def _vector_branches(tensor: np.ndarray, plan: CheckPlan) -> list[tuple[tuple, np.ndarray]]:
    branches = [((), tensor)]
    for pair, basis in zip(plan.checked_pairs, plan.bases):
        ops = _pair_ops(basis, plan.mode)
        branches = [(labels + (lab,), _apply_to_pair(op, t, pair)) for labels, t in branches for lab, op in ops]
    return branches


def _matrix_branches(tensor: np.ndarray, plan: CheckPlan, n_pairs: int) -> list[tuple[tuple, np.ndarray]]:
    branches = [((), tensor)]
    for pair, basis in zip(plan.checked_pairs, plan.bases):
        ops = _pair_ops(basis, plan.mode)
        new = []
        for labels, t in branches:
            for lab, op in ops:
                out = _apply_to_pair(op, t, pair)
                out = _apply_to_pair(op.conj(), out, n_pairs + pair)
                new.append((labels + (lab,), out))
        branches = new
    return branches


def _vector_tensor(state: PureAttackState) -> np.ndarray:
    return bell_to_computational(state.bell_amps).reshape((4,) * state.n_pairs + (state.eve_dim,))


def _matrix_tensor(state: BellDiagonalState | DensityOperator, n_pairs: int) -> np.ndarray:
    rho = state if isinstance(state, DensityOperator) else density_operator_of(state)
    return rho.matrix.reshape((4,) * (2 * n_pairs))


def _n_pairs(state) -> int:
    if isinstance(state, (PureAttackState, BellDiagonalState)):
        return state.n_pairs
    if isinstance(state, DensityOperator):
        if any(d != 4 for d in state.layout.dims):
            raise ValueError("density operator must be laid out as pairs only")
        return len(state.layout.dims)
    raise TypeError(f"unsupported state type {type(state).__name__}")


def _classical_marginal(state: BellDiagonalState, pairs: Sequence[int]) -> np.ndarray:
    """Pattern distribution of ``pairs`` (in the given order), other pairs summed out."""
    n = state.n_pairs
    pairs = list(pairs)
    other = [i for i in range(n) if i not in pairs]
    probs = state.probs.reshape((4,) * n).transpose(pairs + other)
    return probs.reshape(4 ** len(pairs), -1).sum(axis=1).reshape((4,) * len(pairs))


def _branch_weights(state, plan: CheckPlan) -> list[tuple[tuple, float]]:
    """(labels, probability) for each outcome branch of ``plan`` on a dense state."""
    n_pairs = _n_pairs(state)
    if isinstance(state, PureAttackState):
        return [(lab, float(np.sum(np.abs(t) ** 2))) for lab, t in _vector_branches(_vector_tensor(state), plan)]
    branches = _matrix_branches(_matrix_tensor(state, n_pairs), plan, n_pairs)
    return [(lab, float(np.real(reduce_matrix(t, [])[0, 0]))) for lab, t in branches]


def raw_outcome_distribution(state, plan: CheckPlan) -> dict[tuple, float]:
    """Distribution of raw branch labels: error bits (nonlocal) or ``(a, b)`` tuples (local)."""
    plan.validate(_n_pairs(state))
    if isinstance(state, BellDiagonalState) and plan.mode == "nonlocal":
        return _classical_distribution(state, plan)
    return dict(_branch_weights(state, plan))


def _classical_distribution(state: BellDiagonalState, plan: CheckPlan) -> dict[tuple, float]:
    m = len(plan.checked_pairs)
    marginal = _classical_marginal(state, plan.checked_pairs)
    code = np.zeros((4,) * m, dtype=np.int64)
    for axis, basis in enumerate(plan.bases):
        shape = [1] * m
        shape[axis] = 4
        code = code + (np.array(ERROR_BIT[basis]) << (m - 1 - axis)).reshape(shape)
    weights = np.bincount(code.reshape(-1), weights=marginal.reshape(-1), minlength=2**m)
    return {bits: float(w) for bits, w in zip(product((0, 1), repeat=m), weights)}


def outcome_distribution(state, plan: CheckPlan) -> dict[tuple[int, ...], float]:
    """Exact joint distribution of the error bits of the checked pairs.

    Keys are tuples of error bits in increasing pair order. Local-mode raw
    outcomes are marginalised to their XOR.
    """
    raw = raw_outcome_distribution(state, plan)
    out = {bits: 0.0 for bits in product((0, 1), repeat=len(plan.checked_pairs))}
    for labels, p in raw.items():
        out[_error_bits(labels, plan.mode)] += p
    return out


def _draw(dist: dict[tuple, float], rng: np.random.Generator) -> tuple:
    keys = list(dist)
    cum = np.cumsum([max(dist[k], 0.0) for k in keys])
    i = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
    return keys[min(i, len(keys) - 1)]


@dataclass(frozen=True)
class CheckSample:
    error_bits: tuple[int, ...]
    raw: tuple | None
    probability: float
    collapsed: PureAttackState | BellDiagonalState | DensityOperator = field(repr=False)


def sample_check(state, plan: CheckPlan, rng: np.random.Generator, outcome: tuple | None = None) -> CheckSample:
    """Sample a checking outcome and return the normalised post-measurement state.

    ``outcome`` forces the result instead of sampling it: error bits in
    nonlocal mode, ``(a, b)`` tuples per pair in local mode.
    """
    n_pairs = _n_pairs(state)
    plan.validate(n_pairs)
    raw = raw_outcome_distribution(state, plan)
    if outcome is None:
        label = _draw(raw, rng)
    else:
        label = tuple(tuple(o) for o in outcome) if plan.mode == "local" else tuple(int(o) for o in outcome)
        if label not in raw:
            raise ValueError(f"outcome {outcome!r} is not a valid label for this plan")
    prob = raw[label]
    if prob <= 1e-15:
        raise ValueError(f"outcome {label!r} has zero probability")
    collapsed = _collapse(state, plan, label, prob, n_pairs)
    return CheckSample(_error_bits(label, plan.mode), label if plan.mode == "local" else None, prob, collapsed)


def _collapse(state, plan, label, prob, n_pairs):
    if isinstance(state, BellDiagonalState) and plan.mode == "nonlocal":
        patterns = state.probs.reshape((4,) * n_pairs)
        mask = np.ones_like(patterns, dtype=bool)
        for pair, basis, bit in zip(plan.checked_pairs, plan.bases, label):
            allowed = np.array([ERROR_BIT[basis][k] == bit for k in range(4)])
            shape = [1] * n_pairs
            shape[pair] = 4
            mask &= allowed.reshape(shape)
        kept = np.where(mask, patterns, 0.0).reshape(-1)
        return BellDiagonalState(kept / kept.sum())
    if isinstance(state, PureAttackState):
        tensor = _vector_tensor(state)
        for pair, basis, lab in zip(plan.checked_pairs, plan.bases, label):
            op = nonlocal_projector(basis, lab) if plan.mode == "nonlocal" else local_projector(basis, *lab)
            tensor = _apply_to_pair(op, tensor, pair)
        amps = tensor.reshape(4**n_pairs, state.eve_dim) / np.sqrt(prob)
        return PureAttackState(computational_to_bell(amps))
    tensor = _matrix_tensor(state, n_pairs)
    for pair, basis, lab in zip(plan.checked_pairs, plan.bases, label):
        op = nonlocal_projector(basis, lab) if plan.mode == "nonlocal" else local_projector(basis, *lab)
        tensor = _apply_to_pair(op, tensor, pair)
        tensor = _apply_to_pair(op.conj(), tensor, n_pairs + pair)
    d = 4**n_pairs
    return DensityOperator(tensor.reshape(d, d) / prob, pair_layout(n_pairs))


def discard_pairs(state, pairs: Sequence[int]):
    """Drop checked pairs, keeping the rest in their original order.

    Bell-diagonal states and density operators are marginalised. For a pure
    attack the discarded pairs are handed to Eve, so the residual stays pure
    with Eve dimension ``eve_dim * 4**len(pairs)``.
    """
    n_pairs = _n_pairs(state)
    pairs = sorted(set(int(p) for p in pairs))
    keep = [p for p in range(n_pairs) if p not in pairs]
    if not keep:
        raise ValueError("cannot discard every pair")
    if isinstance(state, BellDiagonalState):
        return BellDiagonalState(_classical_marginal(state, keep).reshape(-1))
    if isinstance(state, PureAttackState):
        tensor = state.bell_amps.reshape((4,) * n_pairs + (state.eve_dim,))
        tensor = np.transpose(tensor, keep + pairs + [n_pairs])
        return PureAttackState(tensor.reshape(4 ** len(keep), -1))
    tensor = state.matrix.reshape((4,) * (2 * n_pairs))
    return DensityOperator(reduce_matrix(tensor, keep), pair_layout(len(keep)))


def run_check_phase(
    state, config: ProtocolConfig, rng: TrialStreams | np.random.Generator, mode: str = "nonlocal"
) -> ProtocolOutcome:
    """One checking round: random half of the pairs, random Z/X bases, sampled outcomes.

    With :class:`~qkdlab.rng.TrialStreams` the pair choice, basis choice and
    outcome sampling each draw from their own substream.
    """
    streams = as_streams(rng)
    n_pairs = _n_pairs(state)
    if n_pairs != config.n_pairs_total:
        raise ValueError(f"state has {n_pairs} pairs, config expects {config.n_pairs_total}")
    n = config.n_checked
    pairs = np.sort(streams.plan.choice(n_pairs, size=n, replace=False))
    bases = [BASES[b] for b in streams.basis.integers(0, 2, size=n)]
    plan = CheckPlan(tuple(int(p) for p in pairs), tuple(bases), mode)
    sample = sample_check(state, plan, streams.outcome)
    raws = sample.raw if sample.raw is not None else (None,) * n
    records = [
        CheckRecord(pair, basis, bit, raw)
        for pair, basis, bit, raw in zip(plan.checked_pairs, plan.bases, sample.error_bits, raws)
    ]
    n_errors = sum(sample.error_bits)
    return ProtocolOutcome(
        plan=plan,
        records=records,
        error_rate=n_errors / n,
        accepted=config.accepts(n_errors),
        residual=discard_pairs(sample.collapsed, plan.checked_pairs),
    )


def sample_error_bits(
    state: BellDiagonalState, n_samples: int, rng: np.random.Generator, pair: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised single-pair checks on a Bell-diagonal state.

    Each sample picks a uniformly random basis (0=Z, 1=X) and draws the
    pair's Bell vector from its marginal. Returns ``(bases, error_bits)``.
    """
    marginal = _classical_marginal(state, [pair]).reshape(4)
    bases = rng.integers(0, 2, size=n_samples)
    ks = rng.choice(4, size=n_samples, p=marginal / marginal.sum())
    table = np.array([ERROR_BIT["Z"], ERROR_BIT["X"]])
    return bases, table[bases, ks]


@dataclass
class LocalEquivalenceReport:
    plan: CheckPlan
    nonlocal_distribution: dict[tuple[int, ...], float]
    local_distribution: dict[tuple[int, ...], float]
    info_before: np.ndarray = field(repr=False)
    info_after_nonlocal: np.ndarray = field(repr=False)
    info_after_local: np.ndarray = field(repr=False)

    @property
    def distribution_deviation(self) -> float:
        return max(abs(self.nonlocal_distribution[k] - self.local_distribution[k]) for k in self.nonlocal_distribution)

    @property
    def nonlocal_invariance_deviation(self) -> float:
        return float(np.max(np.abs(self.info_after_nonlocal - self.info_before)))

    @property
    def local_invariance_deviation(self) -> float:
        return float(np.max(np.abs(self.info_after_local - self.info_before)))

    @property
    def max_deviation(self) -> float:
        return max(self.distribution_deviation, self.nonlocal_invariance_deviation, self.local_invariance_deviation)

    def ok(self, tol: float = 1e-10) -> bool:
        return self.max_deviation < tol


def _info_state_after(state, plan: CheckPlan, n_pairs: int) -> np.ndarray:
    info = list(plan.info_pairs(n_pairs))
    if isinstance(state, PureAttackState):
        return sum(reduce_vector(t, info) for _, t in _vector_branches(_vector_tensor(state), plan))
    return sum(reduce_matrix(t, info) for _, t in _matrix_branches(_matrix_tensor(state, n_pairs), plan, n_pairs))


def local_equivalence_report(state, plan: CheckPlan) -> LocalEquivalenceReport:
    """Compare nonlocal and local checking of the same pairs in the same bases.

    Both the error-bit statistics and the outcome-averaged reduced state of
    the unchecked pairs are computed for each mode; the latter is also
    computed with no measurement at all.
    """
    n_pairs = _n_pairs(state)
    plan.validate(n_pairs)
    nonlocal_plan, local_plan = plan.with_mode("nonlocal"), plan.with_mode("local")
    info = list(plan.info_pairs(n_pairs))
    if isinstance(state, PureAttackState):
        before = reduce_vector(_vector_tensor(state), info)
    else:
        before = reduce_matrix(_matrix_tensor(state, n_pairs), info)
    return LocalEquivalenceReport(
        plan=plan,
        nonlocal_distribution=outcome_distribution(state, nonlocal_plan),
        local_distribution=outcome_distribution(state, local_plan),
        info_before=before,
        info_after_nonlocal=_info_state_after(state, nonlocal_plan, n_pairs),
        info_after_local=_info_state_after(state, local_plan, n_pairs),
    )
