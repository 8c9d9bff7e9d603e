"""Entropic security quantities for the distilled pairs.

Eve's information about the key is measured by the Holevo quantity of the
key variable against everything outside the pairs (her ancilla and, for
purified ensembles, her index register). For a pure joint state this is
bounded by ``S(rho_E) = S(rho_AB)``, which in turn is bounded through the
fidelity of ``rho_AB`` to the ideal ``|Phi+>`` pairs.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .attack_model import PureAttackState
from .bell_algebra import PHI_PLUS
from .qstate import (
    DensityOperator,
    PureState,
    SubsystemLayout,
    fidelity_to_pure,
    max_entropy_given_fidelity,
    pair_labels,
    pair_layout,
    partial_trace,
    von_neumann_entropy,
)

PURITY_TOL = 1e-8
REGISTER_LABEL = "R"


def ideal_pairs(n_pairs: int) -> PureState:
    amps = np.ones(1, dtype=complex)
    for _ in range(n_pairs):
        amps = np.kron(amps, PHI_PLUS)
    return PureState(amps, pair_layout(n_pairs))


def alice_z_key_projectors(n_pairs: int) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Projectors for Alice's Z outcome on every pair; the key is her bit string."""
    alice = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    out = []
    for bits in product((0, 1), repeat=n_pairs):
        proj = np.ones((1, 1))
        for b in bits:
            proj = np.kron(proj, np.kron(alice[b], np.eye(2)))
        out.append((bits, proj.astype(complex)))
    return out


def _as_pure(state: PureState | DensityOperator | PureAttackState) -> PureState:
    if isinstance(state, PureAttackState):
        return state.joint
    if isinstance(state, PureState):
        return state
    purity = float(np.real(np.trace(state.matrix @ state.matrix)))
    if purity < 1.0 - PURITY_TOL:
        raise ValueError(f"expected a pure state, purity is {purity!r}")
    vals, vecs = np.linalg.eigh(state.matrix)
    return PureState(vecs[:, -1], state.layout)


def _split(state: PureState) -> tuple[np.ndarray, list[str], list[str]]:
    """Amplitudes as an ``(AB, Eve side)`` matrix, plus both label lists."""
    layout = state.layout
    ab = pair_labels(layout)
    eve = [lab for lab in layout.labels if lab not in ab]
    if not ab or not eve:
        raise ValueError("state needs pair subsystems and at least one Eve-side subsystem")
    ab_axes, eve_axes = layout.axes(ab), layout.axes(eve)
    mat = np.transpose(state.tensor(), ab_axes + eve_axes).reshape(layout.dim_of(ab), layout.dim_of(eve))
    return mat, ab, eve


def _eve_matrix(block: np.ndarray) -> np.ndarray:
    return block.T @ block.conj()


@dataclass(frozen=True)
class SecurityReport:
    S_AB: float
    S_E: float
    chi: float
    fidelity: float
    entropy_bound: float
    key_probabilities: dict = field(repr=False, default_factory=dict)

    def violations(self, tol: float = 1e-9) -> list[str]:
        out = []
        if abs(self.S_AB - self.S_E) > tol:
            out.append(f"|S_AB - S_E| = {abs(self.S_AB - self.S_E):.3e}")
        if self.chi < -tol:
            out.append(f"chi = {self.chi:.3e} < 0")
        if self.chi > self.S_E + tol:
            out.append(f"chi = {self.chi!r} > S_E = {self.S_E!r}")
        if self.S_AB > self.entropy_bound + tol:
            out.append(f"S_AB = {self.S_AB!r} > bound {self.entropy_bound!r}")
        return out


def holevo_chi(state: PureState, key_projectors=None) -> tuple[float, dict]:
    """Holevo quantity of the key measurement against the Eve side of ``state``."""
    mat, ab, _ = _split(state)
    if key_projectors is None:
        key_projectors = alice_z_key_projectors(len(ab))
    rho_e = _eve_matrix(mat)
    s_e = von_neumann_entropy(rho_e)
    conditional = 0.0
    probs = {}
    for label, proj in key_projectors:
        block = proj @ mat
        p = float(np.sum(np.abs(block) ** 2))
        probs[label] = p
        if p > 1e-14:
            conditional += p * von_neumann_entropy(_eve_matrix(block) / p)
    return s_e - conditional, probs


def holevo_report(state: PureState | DensityOperator | PureAttackState, key_projectors=None) -> SecurityReport:
    """Entropies, Holevo quantity and fidelity bound for a pure pairs+Eve state.

    ``key_projectors`` is a list of ``(key value, projector on the pairs)``;
    by default Alice's Z outcome on every pair.
    """
    psi = _as_pure(state)
    _, ab, eve = _split(psi)
    rho_ab = partial_trace(psi, ab)
    rho_e = partial_trace(psi, eve)
    chi, probs = holevo_chi(psi, key_projectors)
    fid = fidelity_to_pure(rho_ab, ideal_pairs(len(ab)))
    bound = max_entropy_given_fidelity(min(max(fid, 0.0), 1.0), rho_ab.dim)
    return SecurityReport(
        S_AB=von_neumann_entropy(rho_ab),
        S_E=von_neumann_entropy(rho_e),
        chi=chi,
        fidelity=fid,
        entropy_bound=bound,
        key_probabilities=probs,
    )


@dataclass(frozen=True)
class LabeledEnsemble:
    """States ``psi_i`` Eve can tell apart, occurring with probabilities ``p_i``."""

    elements: tuple[tuple[float, PureState], ...]

    def __post_init__(self):
        elements = tuple((float(p), s) for p, s in self.elements)
        if not elements:
            raise ValueError("ensemble must have at least one element")
        probs = np.array([p for p, _ in elements])
        if probs.min() < 0 or abs(probs.sum() - 1.0) > 1e-10:
            raise ValueError(f"ensemble probabilities must be non-negative and sum to 1, got {probs}")
        layout = elements[0][1].layout
        if any(s.layout != layout for _, s in elements):
            raise ValueError("all ensemble states must share one layout")
        if REGISTER_LABEL in layout.labels:
            raise ValueError(f"label {REGISTER_LABEL!r} is reserved for the index register")
        object.__setattr__(self, "elements", elements)

    @property
    def probs(self) -> np.ndarray:
        return np.array([p for p, _ in self.elements])

    @property
    def states(self) -> list[PureState]:
        return [s for _, s in self.elements]

    @property
    def layout(self) -> SubsystemLayout:
        return self.elements[0][1].layout


def mix_ensemble(ens: LabeledEnsemble) -> DensityOperator:
    """``sum_i p_i tr_E |psi_i><psi_i|`` on the pairs."""
    ab = pair_labels(ens.layout)
    mats = [p * partial_trace(s, ab).matrix for p, s in ens.elements]
    return DensityOperator(sum(mats), ens.layout.restrict(ab))


@dataclass(frozen=True)
class FidelityDecomposition:
    probs: np.ndarray
    fidelities: np.ndarray
    mixed_fidelity: float
    epsilon: float

    @property
    def average_fidelity(self) -> float:
        return float(np.dot(self.probs, self.fidelities))

    @property
    def identity_deviation(self) -> float:
        return abs(self.mixed_fidelity - self.average_fidelity)

    def precondition_met(self, tol: float = 1e-12) -> bool:
        return self.mixed_fidelity >= 1.0 - self.epsilon - tol

    @property
    def term_defects(self) -> np.ndarray:
        """``p_i (1 - F_i)`` for every element."""
        return self.probs * (1.0 - self.fidelities)

    def term_bound_holds(self, tol: float = 1e-12) -> bool:
        """Every defect is at most ``epsilon``, which the averaging identity implies."""
        return bool(np.all(self.term_defects <= self.epsilon + tol))

    def reversed_bound_holds(self) -> bool:
        """The opposite reading, every defect at least ``epsilon``; generally false."""
        return bool(np.all(self.term_defects >= self.epsilon))


def fidelity_decomposition_check(
    ens: LabeledEnsemble, target: PureState | None = None, epsilon: float | None = None
) -> FidelityDecomposition:
    """Per-element fidelities against the mixture's fidelity.

    ``target`` defaults to ``|Phi+>`` on every pair; ``epsilon`` defaults to
    ``1 - F(mixture, target)``, the tightest value the precondition allows.
    """
    rho = mix_ensemble(ens)
    if target is None:
        target = ideal_pairs(len(rho.layout.dims))
    ab = pair_labels(ens.layout)
    fids = np.array([fidelity_to_pure(partial_trace(s, ab), target) for s in ens.states])
    mixed = fidelity_to_pure(rho, target)
    if epsilon is None:
        epsilon = 1.0 - mixed
    return FidelityDecomposition(ens.probs, fids, mixed, float(epsilon))


def purify(ens: LabeledEnsemble) -> PureState:
    """``sum_i sqrt(p_i) |i>_R |psi_i>`` with the register ``R`` on Eve's side."""
    k = len(ens.elements)
    amps = sum(np.kron(np.sqrt(p) * np.eye(k)[i], s.amplitudes) for i, (p, s) in enumerate(ens.elements))
    layout = SubsystemLayout((k,), (REGISTER_LABEL,)) + ens.layout
    return PureState(amps, layout)


@dataclass
class RegisterMeasurementReport:
    probabilities: np.ndarray
    conditional_states: list[PureState | None] = field(repr=False)
    element_fidelities: np.ndarray | None
    S_AB: float
    chis: np.ndarray

    @property
    def weighted_chi(self) -> float:
        return float(np.dot(self.probabilities, self.chis))

    def bound_holds(self, tol: float = 1e-9) -> bool:
        return self.weighted_chi <= self.S_AB + tol


def register_measurement_equivalence(
    purified: PureState, ens: LabeledEnsemble | None = None, key_projectors=None
) -> RegisterMeasurementReport:
    """Measure Eve's register of a purified ensemble.

    Reports the outcome probabilities, the conditional states (and their
    overlap with the original elements when ``ens`` is given), the entropy of
    the pairs in the purified state, and Eve's Holevo quantity for each
    outcome.
    """
    layout = purified.layout
    if layout.labels[0] != REGISTER_LABEL:
        raise ValueError("purified state must start with the index register")
    inner = SubsystemLayout(layout.dims[1:], layout.labels[1:])
    rows = purified.amplitudes.reshape(layout.dims[0], -1)
    probs = np.sum(np.abs(rows) ** 2, axis=1)
    states = [PureState(row / np.sqrt(p), inner) if p > 1e-15 else None for row, p in zip(rows, probs)]
    chis = np.array([holevo_chi(s, key_projectors)[0] if s is not None else 0.0 for s in states])
    fids = None
    if ens is not None:
        fids = np.array(
            [abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2 if a is not None else 0.0 for a, b in zip(states, ens.states)]
        )
    s_ab = von_neumann_entropy(partial_trace(purified, pair_labels(layout)))
    return RegisterMeasurementReport(probs, states, fids, s_ab, chis)


def random_ensemble(
    rng: np.random.Generator, n_elements: int, n_pairs: int, eve_dim: int
) -> LabeledEnsemble:
    """Random ensemble of pure pairs+Eve states with Dirichlet weights."""
    probs = rng.dirichlet(np.ones(n_elements))
    layout = pair_layout(n_pairs, eve_dim)
    states = []
    for _ in range(n_elements):
        v = rng.normal(size=layout.dim) + 1j * rng.normal(size=layout.dim)
        states.append(PureState(v / np.linalg.norm(v), layout))
    return LabeledEnsemble(tuple(zip(probs, states)))
