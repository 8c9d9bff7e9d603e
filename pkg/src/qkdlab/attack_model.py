"""Eve's attack states.

A general attack is a pure state on the pairs plus Eve's ancilla, written in
the multi-pair Bell basis,

    |psi_ABE> = sum_k C_k (Pauli pattern k on Bob's side)|Phi+>^n |E_k>,

and stored as an amplitude array indexed by ``(pattern index, Eve index)``.
Its classical counterpart is the Bell-diagonal mixture with weights
``P_k = |C_k|^2``.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .bell_algebra import (
    PHI_PLUS,
    as_pattern,
    bell_basis_matrix,
    bell_state,
    bell_to_computational,
    computational_to_bell,
    n_pairs_of,
    pattern_from_index,
    pattern_index,
    single_qubit_basis,
)
from .qstate import DensityOperator, PureState, pair_labels, pair_layout, partial_trace

DEFAULT_EVE_DIM = 4
MAX_EVE_DIM = 16
NORMALIZATION_TOL = 1e-8
PROB_TOL = 1e-10
# Bell-diagonal states are stored densely: 4**n_pairs probabilities.
MAX_CLASSICAL_PAIRS = 10


@dataclass(frozen=True)
class AttackTerm:
    pattern: tuple[int, ...]
    coeff: complex
    eve_state: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pattern", as_pattern(self.pattern))
        object.__setattr__(self, "coeff", complex(self.coeff))
        eve = np.asarray(self.eve_state, dtype=complex).reshape(-1)
        if abs(np.linalg.norm(eve) - 1.0) > 1e-10:
            raise ValueError("Eve's state in an attack term must be normalised")
        eve.setflags(write=False)
        object.__setattr__(self, "eve_state", eve)


@dataclass(frozen=True)
class PureAttackState:
    """Joint pair/Eve state as Bell-basis amplitudes of shape ``(4**n_pairs, eve_dim)``."""

    bell_amps: np.ndarray

    def __post_init__(self):
        amps = np.array(self.bell_amps, dtype=complex)
        if amps.ndim == 1:
            amps = amps[:, None]
        if amps.ndim != 2:
            raise ValueError("bell_amps must be (4**n_pairs, eve_dim)")
        n_pairs_of(amps.shape[0])
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > 1e-10:
            raise ValueError(f"attack state is not normalised (norm={norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "bell_amps", amps)

    @property
    def n_pairs(self) -> int:
        return n_pairs_of(self.bell_amps.shape[0])

    @property
    def eve_dim(self) -> int:
        return self.bell_amps.shape[1]

    @property
    def layout(self):
        return pair_layout(self.n_pairs, self.eve_dim)

    @property
    def joint(self) -> PureState:
        """The same state in the computational basis of every pair, Eve last."""
        return PureState(bell_to_computational(self.bell_amps).reshape(-1), self.layout)

    @classmethod
    def from_joint(cls, state: PureState) -> PureAttackState:
        labels = pair_labels(state.layout)
        if list(state.layout.labels[: len(labels)]) != labels or len(state.layout.labels) != len(labels) + 1:
            raise ValueError("joint state must be laid out as pair-1..pair-n followed by one Eve subsystem")
        n_pairs = len(labels)
        amps = state.amplitudes.reshape(4**n_pairs, state.layout.dims[-1])
        return cls(computational_to_bell(amps))

    def pattern_weights(self) -> np.ndarray:
        return np.sum(np.abs(self.bell_amps) ** 2, axis=1)


def _dense_size(n_pairs: int) -> int:
    if n_pairs > MAX_CLASSICAL_PAIRS:
        raise ValueError(f"{n_pairs} pairs exceeds MAX_CLASSICAL_PAIRS={MAX_CLASSICAL_PAIRS}")
    return 4**n_pairs


@dataclass(frozen=True)
class BellDiagonalState:
    """Probability distribution over Pauli patterns, stored densely in index order."""

    probs: np.ndarray

    def __post_init__(self):
        probs = np.array(self.probs, dtype=float).reshape(-1)
        n_pairs_of(probs.shape[0])
        if probs.min() < -PROB_TOL:
            raise ValueError("pattern probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"pattern probabilities sum to {probs.sum()!r}, expected 1")
        probs = np.clip(probs, 0.0, None)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def n_pairs(self) -> int:
        return n_pairs_of(self.probs.shape[0])

    def prob(self, pattern: Sequence[int] | str) -> float:
        return float(self.probs[pattern_index(as_pattern(pattern, self.n_pairs))])

    def support(self, atol: float = 0.0) -> dict[tuple[int, ...], float]:
        idx = np.flatnonzero(self.probs > atol)
        return {pattern_from_index(int(i), self.n_pairs): float(self.probs[i]) for i in idx}

    @classmethod
    def from_mapping(cls, n_pairs: int, probs: Mapping) -> BellDiagonalState:
        dense = np.zeros(_dense_size(n_pairs))
        for pattern, p in probs.items():
            dense[pattern_index(as_pattern(pattern, n_pairs))] += p
        return cls(dense)

    @classmethod
    def delta(cls, pattern: Sequence[int] | str) -> BellDiagonalState:
        pattern = as_pattern(pattern)
        dense = np.zeros(_dense_size(len(pattern)))
        dense[pattern_index(pattern)] = 1.0
        return cls(dense)


def assemble_attack(terms: Sequence[AttackTerm], n_pairs: int, eve_dim: int = DEFAULT_EVE_DIM) -> PureAttackState:
    """Build the joint state ``sum_k C_k |B_k> |E_k>`` from attack terms.

    Terms sharing a pattern add up per Eve index. The assembled state must
    have unit norm to within ``NORMALIZATION_TOL``; small deviations are
    renormalised, larger ones rejected.
    """
    if not terms:
        raise ValueError("an attack needs at least one term")
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    if not 1 <= eve_dim <= MAX_EVE_DIM:
        raise ValueError(f"eve_dim must be in [1, {MAX_EVE_DIM}], got {eve_dim}")
    amps = np.zeros((4**n_pairs, eve_dim), dtype=complex)
    for term in terms:
        if len(term.pattern) != n_pairs:
            raise ValueError(f"term pattern {term.pattern} does not have {n_pairs} entries")
        if term.eve_state.shape[0] != eve_dim:
            raise ValueError(f"Eve state has dimension {term.eve_state.shape[0]}, expected {eve_dim}")
        amps[pattern_index(term.pattern)] += term.coeff * term.eve_state
    norm_sq = float(np.sum(np.abs(amps) ** 2))
    if abs(norm_sq - 1.0) > NORMALIZATION_TOL:
        raise ValueError(f"attack has squared norm {norm_sq!r}; coefficients must be normalised")
    return PureAttackState(amps / np.sqrt(norm_sq))


def classicalize(attack: PureAttackState) -> BellDiagonalState:
    """Bell-diagonal state with ``P_k`` = weight of pattern ``k`` in the attack."""
    weights = attack.pattern_weights()
    return BellDiagonalState(weights / weights.sum())


def _product_distribution(per_pair: np.ndarray, n_pairs: int) -> np.ndarray:
    out = np.ones(1)
    for _ in range(n_pairs):
        out = np.kron(out, per_pair)
    return out


def intercept_resend_distribution(basis: str | None) -> np.ndarray:
    """Bell-diagonal weights of ``|Phi+>`` after Eve intercepts Bob's qubit.

    ``basis=None`` models Eve resending a qubit unrelated to what she took,
    which leaves the maximally mixed state (uniform weights). Otherwise Eve
    measures in ``basis`` (``"Z"``, ``"X"``, ``"Y"``, or ``"ZX"`` for a
    uniformly random choice of the two) and resends the eigenstate she saw.
    """
    if basis is None:
        return np.full(4, 0.25)
    if basis not in ("Z", "X", "Y", "ZX"):
        raise ValueError(f"unknown intercept basis {basis!r}")
    bases = ["Z", "X"] if basis == "ZX" else [basis]
    rho_in = np.outer(PHI_PLUS, PHI_PLUS.conj())
    rho = np.zeros((4, 4), dtype=complex)
    for b in bases:
        for v in single_qubit_basis(b):
            proj = np.kron(np.eye(2), np.outer(v, v.conj()))
            rho += proj @ rho_in @ proj / len(bases)
    probs = np.array([np.real(np.vdot(bell_state(k), rho @ bell_state(k))) for k in range(4)])
    return np.clip(probs, 0.0, None)


def named_attack(kind: str, n_pairs: int, **params) -> BellDiagonalState:
    """Standard i.i.d. attack families as Bell-diagonal states.

    ``kind`` is one of ``"none"``, ``"intercept_resend"`` (``fraction``,
    optional ``basis``), ``"pauli_channel"`` (``p_x``, ``p_y``, ``p_z``) or
    ``"bell_flip"`` (``pattern``).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    _dense_size(n_pairs)
    if kind == "none":
        _no_params(kind, params)
        return BellDiagonalState.delta((0,) * n_pairs)
    if kind == "bell_flip":
        pattern = as_pattern(params.pop("pattern"), n_pairs)
        _no_params(kind, params)
        return BellDiagonalState.delta(pattern)
    if kind == "pauli_channel":
        p_x = float(params.pop("p_x", 0.0))
        p_y = float(params.pop("p_y", 0.0))
        p_z = float(params.pop("p_z", 0.0))
        _no_params(kind, params)
        ps = (p_x, p_y, p_z)
        if any(not 0.0 <= p <= 1.0 for p in ps) or sum(ps) > 1.0 + 1e-12:
            raise ValueError(f"invalid Pauli channel probabilities {ps}")
        per_pair = np.array([max(0.0, 1.0 - sum(ps)), p_x, p_y, p_z])
        return BellDiagonalState(_product_distribution(per_pair, n_pairs))
    if kind == "intercept_resend":
        fraction = float(params.pop("fraction"))
        basis = params.pop("basis", None)
        _no_params(kind, params)
        if not 0.0 <= fraction <= 1.0:
            raise ValueError(f"intercept fraction must be in [0, 1], got {fraction}")
        per_pair = fraction * intercept_resend_distribution(basis)
        per_pair[0] += 1.0 - fraction
        return BellDiagonalState(_product_distribution(per_pair, n_pairs))
    raise ValueError(f"unknown attack kind {kind!r}")


def _no_params(kind, params):
    if params:
        raise ValueError(f"unexpected parameters for {kind!r}: {sorted(params)}")


def density_operator_of(attack: PureAttackState | BellDiagonalState, keep: str = "AB") -> DensityOperator:
    """Density operator of an attack in the computational basis.

    ``keep="ABE"`` is only meaningful for a pure attack; Bell-diagonal states
    have no Eve subsystem.
    """
    if keep not in ("AB", "ABE"):
        raise ValueError(f"keep must be 'AB' or 'ABE', got {keep!r}")
    if isinstance(attack, BellDiagonalState):
        if keep == "ABE":
            raise ValueError("a Bell-diagonal state carries no Eve subsystem")
        basis = bell_basis_matrix(attack.n_pairs)
        return DensityOperator((basis * attack.probs) @ basis.conj().T, pair_layout(attack.n_pairs))
    joint = attack.joint
    if keep == "ABE":
        return joint.density()
    return partial_trace(joint, pair_labels(joint.layout))


def random_attack(
    rng: np.random.Generator, n_pairs: int, eve_dim: int = DEFAULT_EVE_DIM, n_terms: int = 5
) -> PureAttackState:
    """Random attack with ``n_terms`` Gaussian-weighted terms and Haar-like Eve states."""
    patterns = rng.integers(0, 4**n_pairs, size=n_terms)
    coeffs = rng.normal(size=n_terms) + 1j * rng.normal(size=n_terms)
    eves = rng.normal(size=(n_terms, eve_dim)) + 1j * rng.normal(size=(n_terms, eve_dim))
    eves /= np.linalg.norm(eves, axis=1, keepdims=True)
    amps = np.zeros((4**n_pairs, eve_dim), dtype=complex)
    for p, c, e in zip(patterns, coeffs, eves):
        amps[p] += c * e
    return PureAttackState(amps / np.linalg.norm(amps))


def attack_from_dict(desc: Mapping, n_pairs: int | None = None):
    """Parse the JSON attack description.

    Either explicit terms::

        {"n_pairs": 2, "eve_dim": 2,
         "terms": [{"pattern": "03", "coeff": [0.6, 0.0], "eve_state": [[1, 0], [0, 0]]}, ...]}

    or a named family::

        {"named": {"kind": "pauli_channel", "params": {"p_x": 0.1}}}

    ``n_pairs`` supplies the pair count when the description leaves it out.
    """
    n_pairs = desc.get("n_pairs", n_pairs)
    if n_pairs is None:
        raise ValueError("attack description needs n_pairs")
    if "named" in desc:
        named = desc["named"]
        return named_attack(named["kind"], int(n_pairs), **dict(named.get("params", {})))
    if "terms" in desc:
        terms = [
            AttackTerm(
                pattern=as_pattern(t["pattern"]),
                coeff=complex(*t["coeff"]),
                eve_state=np.array([complex(*z) for z in t["eve_state"]]),
            )
            for t in desc["terms"]
        ]
        return assemble_attack(terms, int(n_pairs), int(desc.get("eve_dim", DEFAULT_EVE_DIM)))
    raise ValueError("attack description needs 'terms' or 'named'")
