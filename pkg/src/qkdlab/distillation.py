"""Error correction and sifting at desk scale.

The code is modelled only by its correction radius: a Bell-diagonal pattern
with at most ``t_x`` X-type and ``t_z`` Z-type entries is mapped back to the
all-``Phi+`` pattern, anything else is left where it was.

Sifting looks at a state whose pattern has ``m`` illegitimate pairs of one
Pauli type. ``n`` of the ``2n`` pairs are checked in random bases, and the
check passes when the error rate does not exceed ``e_check``. The exact pass
probability mixes a hypergeometric count of checked illegitimate pairs with
a binomial count of detections; the Monte Carlo version simulates actual
subsets and bases.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .attack_model import BellDiagonalState
from .bell_algebra import as_pattern
from .checking import ERROR_BIT, ProtocolConfig, error_probability
from .rng import TrialStreams, as_streams

X_TYPE = np.array([0, 1, 1, 0])
Z_TYPE = np.array([0, 0, 1, 1])

# Rows of trials simulated at once; part of the reproducible draw order.
CHUNK_TRIALS = 20_000


@dataclass(frozen=True)
class ErrorTypeCounts:
    x_type: int
    z_type: int


def error_type_counts(pattern: Sequence[int] | str) -> ErrorTypeCounts:
    """Count X-type (X or Y) and Z-type (Z or Y) entries of a pattern."""
    pattern = np.array(as_pattern(pattern))
    return ErrorTypeCounts(int(X_TYPE[pattern].sum()), int(Z_TYPE[pattern].sum()))


def _type_counts_all(n_pairs: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(4**n_pairs)
    x = np.zeros(idx.shape, dtype=np.int32)
    z = np.zeros(idx.shape, dtype=np.int32)
    for shift in range(0, 2 * n_pairs, 2):
        digit = (idx >> shift) & 3
        x += X_TYPE[digit]
        z += Z_TYPE[digit]
    return x, z


@dataclass(frozen=True)
class CodeModel:
    t_x: int
    t_z: int
    n_info: int

    def __post_init__(self):
        if self.n_info < 1:
            raise ValueError("n_info must be positive")
        if not (0 <= self.t_x <= self.n_info and 0 <= self.t_z <= self.n_info):
            raise ValueError(f"correction radii must lie in [0, {self.n_info}]")


def apply_code(residual: BellDiagonalState, code: CodeModel) -> tuple[float, BellDiagonalState]:
    """Correct every pattern inside the code's radius.

    Returns ``(final_fidelity, corrected_state)``; the fidelity is the
    corrected mass, i.e. the weight of the all-``Phi+`` pattern afterwards.
    """
    if residual.n_pairs != code.n_info:
        raise ValueError(f"residual has {residual.n_pairs} pairs, code expects {code.n_info}")
    x, z = _type_counts_all(code.n_info)
    correctable = (x <= code.t_x) & (z <= code.t_z)
    out = np.where(correctable, 0.0, residual.probs)
    out[0] = residual.probs[correctable].sum()
    return float(out[0]), BellDiagonalState(out)


def illegitimate_threshold(config: ProtocolConfig) -> float:
    """``4n * e_cor``: the illegitimate-pair count the check is meant to sift out."""
    return 2 * config.n_pairs_total * config.e_cor


def _detection_prob(kind: int) -> float:
    if kind not in (1, 2, 3):
        raise ValueError(f"illegitimate pair kind must be 1, 2 or 3, got {kind!r}")
    return error_probability(kind)


def _pass_joint(m: int, config: ProtocolConfig, kind: int) -> np.ndarray:
    """``P(j illegitimate pairs checked and check passes)`` for ``j = 0..n``."""
    n_total, n = config.n_pairs_total, config.n_checked
    j = np.arange(n + 1)
    hyper = stats.hypergeom.pmf(j, n_total, m, n)
    passes = stats.binom.cdf(config.max_passing_errors, j, _detection_prob(kind))
    return hyper * passes


def exact_pass_probability(m: int, config: ProtocolConfig, kind: int = 1) -> float:
    _check_m(m, config)
    return float(np.clip(_pass_joint(m, config, kind).sum(), 0.0, 1.0))


def _check_m(m, config):
    if not 0 <= m <= config.n_pairs_total:
        raise ValueError(f"m must lie in [0, {config.n_pairs_total}], got {m}")


def _simulate_chunk(streams: TrialStreams, trials: int, n_total: int, n: int, kind: int):
    """Cumulative detected errors and unchecked illegitimate pairs for m = 0..2n.

    Illegitimate pairs occupy positions ``0..m-1``; the random subset makes
    the choice of positions irrelevant, and nesting them couples all ``m``
    to the same draws.
    """
    keys = streams.plan.random((trials, n_total))
    checked = np.argsort(np.argsort(keys, axis=1), axis=1) < n
    bases = streams.basis.integers(0, 2, size=(trials, n_total))
    detect_table = np.array([ERROR_BIT["Z"][kind], ERROR_BIT["X"][kind]], dtype=np.int16)
    detected = checked * detect_table[bases]
    zeros = np.zeros((trials, 1), dtype=np.int16)
    errors = np.concatenate([zeros, np.cumsum(detected, axis=1, dtype=np.int16)], axis=1)
    unchecked = np.concatenate([zeros, np.cumsum(~checked, axis=1, dtype=np.int16)], axis=1)
    return errors, unchecked


@dataclass
class SiftSweep:
    config: ProtocolConfig
    kind: int
    trials: int
    pass_counts: np.ndarray
    # residual_counts[m, r]: passing trials whose unchecked pairs hold r illegitimate ones
    residual_counts: np.ndarray = field(repr=False)

    @property
    def pass_probability(self) -> np.ndarray:
        return self.pass_counts / self.trials

    @property
    def standard_error(self) -> np.ndarray:
        p = self.pass_probability
        return np.sqrt(p * (1 - p) / self.trials)

    def residual_distribution(self, m: int) -> dict[float, float]:
        counts = self.residual_counts[m]
        total = counts.sum()
        if total == 0:
            return {}
        n = self.config.n_checked
        return {r / n: c / total for r, c in enumerate(counts) if c}


def sift_sweep(
    config: ProtocolConfig, trials: int, rng: TrialStreams | np.random.Generator, kind: int = 1
) -> SiftSweep:
    """Monte Carlo pass probability for every ``m`` in ``0..2n`` from shared draws."""
    if trials < 1:
        raise ValueError("trials must be positive")
    _detection_prob(kind)
    streams = as_streams(rng)
    n_total, n = config.n_pairs_total, config.n_checked
    max_err = config.max_passing_errors
    pass_counts = np.zeros(n_total + 1, dtype=np.int64)
    residual_counts = np.zeros((n_total + 1, n + 1), dtype=np.int64)
    m_index = np.arange(n_total + 1)
    done = 0
    while done < trials:
        size = min(CHUNK_TRIALS, trials - done)
        errors, unchecked = _simulate_chunk(streams, size, n_total, n, kind)
        passed = errors <= max_err
        pass_counts += passed.sum(axis=0)
        flat = (m_index[None, :] * (n + 1) + unchecked)[passed]
        residual_counts += np.bincount(flat, minlength=(n_total + 1) * (n + 1)).reshape(n_total + 1, n + 1)
        done += size
    return SiftSweep(config, kind, trials, pass_counts, residual_counts)


@dataclass(frozen=True)
class SiftResult:
    m: int
    pass_probability: float
    standard_error: float
    residual_distribution: dict[float, float]


def sift_probability(
    m: int, config: ProtocolConfig, trials: int, rng: TrialStreams | np.random.Generator, kind: int = 1
) -> SiftResult:
    """Monte Carlo pass probability for a pattern with ``m`` illegitimate pairs of Pauli type ``kind``.

    Also returns the distribution of the illegitimate ratio among the
    unchecked pairs, conditioned on passing.
    """
    _check_m(m, config)
    sweep = sift_sweep(config, trials, rng, kind)
    return SiftResult(
        m, float(sweep.pass_probability[m]), float(sweep.standard_error[m]), sweep.residual_distribution(m)
    )


@dataclass
class BayesPosterior:
    config: ProtocolConfig
    pass_probability: float
    # posterior[r]: P(r illegitimate unchecked pairs | pass); None when the check never passes
    posterior: np.ndarray | None

    @property
    def never_passes(self) -> bool:
        return self.posterior is None

    @property
    def ratios(self) -> np.ndarray:
        return np.arange(self.config.n_checked + 1) / self.config.n_checked

    def tail_probability(self, ratio: float | None = None) -> float:
        """``P(residual ratio > ratio | pass)``; defaults to ``2 * e_cor``."""
        if self.posterior is None:
            raise ValueError("the check never passes; the posterior is undefined")
        ratio = 2 * self.config.e_cor if ratio is None else ratio
        return float(self.posterior[self.ratios > ratio].sum())


def _check_prior(prior, config) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (config.n_pairs_total + 1,):
        raise ValueError(f"prior must have {config.n_pairs_total + 1} entries (m = 0..2n)")
    if prior.min() < 0 or abs(prior.sum() - 1.0) > 1e-10:
        raise ValueError("prior must be a probability vector")
    return prior


def bayes_residual_bound(prior: Sequence[float], config: ProtocolConfig, kind: int = 1) -> BayesPosterior:
    """Exact posterior over the residual illegitimate ratio given that the check passed."""
    prior = _check_prior(prior, config)
    n = config.n_checked
    joint = np.zeros(n + 1)
    for m in np.flatnonzero(prior):
        for j, w in enumerate(_pass_joint(int(m), config, kind)):
            if w > 0:
                joint[m - j] += prior[m] * w
    total = float(joint.sum())
    if total <= 0.0:
        return BayesPosterior(config, 0.0, None)
    return BayesPosterior(config, total, joint / total)


def bayes_residual_monte_carlo(
    prior: Sequence[float], config: ProtocolConfig, trials: int, rng: TrialStreams | np.random.Generator, kind: int = 1
) -> tuple[float, np.ndarray, int]:
    """Sample ``m`` from the prior and simulate the check.

    Returns ``(pass fraction, counts of residual illegitimate pairs among
    passing trials, number of passing trials)``.
    """
    prior = _check_prior(prior, config)
    if trials < 1:
        raise ValueError("trials must be positive")
    streams = as_streams(rng)
    n_total, n = config.n_pairs_total, config.n_checked
    counts = np.zeros(n + 1, dtype=np.int64)
    passes = 0
    done = 0
    while done < trials:
        size = min(CHUNK_TRIALS, trials - done)
        ms = streams.attack.choice(n_total + 1, size=size, p=prior)
        errors, unchecked = _simulate_chunk(streams, size, n_total, n, kind)
        rows = np.arange(size)
        passed = errors[rows, ms] <= config.max_passing_errors
        counts += np.bincount(unchecked[rows, ms][passed], minlength=n + 1)
        passes += int(passed.sum())
        done += size
    return passes / trials, counts, passes
