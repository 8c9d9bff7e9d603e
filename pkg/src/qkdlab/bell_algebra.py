"""Pauli operators, Bell vectors and the Bell <-> computational change of basis.

Conventions used everywhere in the package:

* Pauli index ``k``: 0=I, 1=X, 2=Y, 3=Z.
* Bell vector ``k`` is literally ``(I (x) sigma_k)|Phi+>``. For ``k=2`` this
  carries a global phase, ``(I (x) Y)|Phi+> = i|Psi->``.
* Inside a pair, Alice's qubit is the high bit: amplitudes are ordered
  ``|00>, |01>, |10>, |11>`` with the first label belonging to Alice.
* A pattern of length ``L`` is a tuple of Pauli indices, one per pair; pair 1
  is the most significant base-4 digit of its integer index.
"""

from __future__ import annotations

from collections.abc import Iterable, Sequence

import numpy as np

SQRT_HALF = 1.0 / np.sqrt(2.0)

IDENTITY = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (IDENTITY, PAULI_X, PAULI_Y, PAULI_Z)

PAULI_LABELS = ("I", "X", "Y", "Z")
BELL_LABELS = ("Phi+", "Psi+", "i*Psi-", "Phi-")

PHI_PLUS = SQRT_HALF * np.array([1, 0, 0, 1], dtype=complex)

Pattern = tuple[int, ...]


def check_pauli_index(k: int) -> int:
    if isinstance(k, (bool, np.bool_)) or int(k) != k or not 0 <= k <= 3:
        raise ValueError(f"Pauli index must be one of 0, 1, 2, 3, got {k!r}")
    return int(k)


def bell_state(k: int) -> np.ndarray:
    """Return ``(I (x) sigma_k)|Phi+>`` as four computational amplitudes."""
    k = check_pauli_index(k)
    return np.kron(IDENTITY, PAULIS[k]) @ PHI_PLUS


# Column k holds bell_state(k); unitary.
BELL_MATRIX = np.column_stack([bell_state(k) for k in range(4)])


def single_qubit_basis(basis: str) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal single-qubit basis for ``"Z"``, ``"X"`` or ``"Y"``.

    The X basis is ``(|0> +/- |1>)/sqrt(2)`` and the Y basis is
    ``(|0> +/- i|1>)/sqrt(2)``.
    """
    if basis == "Z":
        return np.array([1, 0], dtype=complex), np.array([0, 1], dtype=complex)
    if basis == "X":
        return SQRT_HALF * np.array([1, 1], dtype=complex), SQRT_HALF * np.array([1, -1], dtype=complex)
    if basis == "Y":
        return SQRT_HALF * np.array([1, 1j], dtype=complex), SQRT_HALF * np.array([1, -1j], dtype=complex)
    raise ValueError(f"unknown basis {basis!r}; expected 'Z', 'X' or 'Y'")


def as_pattern(entries: Iterable[int] | str, length: int | None = None) -> Pattern:
    """Validate and normalise a Pauli pattern.

    Accepts any iterable of Pauli indices or a string of base-4 digits
    (``"0310"``). If ``length`` is given the pattern must have exactly that
    many entries.
    """
    if isinstance(entries, str):
        if not entries or any(c not in "0123" for c in entries):
            raise ValueError(f"pattern string must be base-4 digits, got {entries!r}")
        pattern = tuple(int(c) for c in entries)
    else:
        pattern = tuple(check_pauli_index(k) for k in entries)
    if not pattern:
        raise ValueError("pattern must be non-empty")
    if length is not None and len(pattern) != length:
        raise ValueError(f"pattern has {len(pattern)} entries, expected {length}")
    return pattern


def pattern_to_str(pattern: Sequence[int]) -> str:
    return "".join(str(int(k)) for k in pattern)


def pattern_index(pattern: Sequence[int]) -> int:
    """Base-4 big-endian index of a pattern (pair 1 is the top digit)."""
    index = 0
    for k in as_pattern(pattern):
        index = 4 * index + k
    return index


def pattern_from_index(index: int, length: int) -> Pattern:
    """Inverse of :func:`pattern_index` for patterns of ``length`` pairs."""
    if length < 1:
        raise ValueError("pattern length must be positive")
    if not 0 <= index < 4**length:
        raise ValueError(f"index {index} out of range for length-{length} patterns")
    digits = []
    for _ in range(length):
        index, k = divmod(index, 4)
        digits.append(k)
    return tuple(reversed(digits))


def all_patterns(length: int) -> np.ndarray:
    """Every length-``length`` pattern as rows of a ``(4**length, length)`` array, in index order."""
    idx = np.arange(4**length)
    shifts = 2 * np.arange(length - 1, -1, -1)
    return (idx[:, None] >> shifts) & 3


def n_pairs_of(dim: int) -> int:
    """Number of pairs ``L`` with ``4**L == dim``."""
    n_pairs = 0
    size = 1
    while size < dim:
        size *= 4
        n_pairs += 1
    if size != dim or dim < 4:
        raise ValueError(f"length {dim} is not a positive power of 4")
    return n_pairs


def _apply_per_pair(amps: np.ndarray, op: np.ndarray) -> np.ndarray:
    n_pairs = n_pairs_of(amps.shape[0])
    tail = amps.shape[1:]
    tensor = amps.reshape((4,) * n_pairs + tail)
    for axis in range(n_pairs):
        tensor = np.moveaxis(np.tensordot(op, tensor, axes=([1], [axis])), 0, axis)
    return tensor.reshape(amps.shape)


def bell_to_computational(amps: np.ndarray) -> np.ndarray:
    """Map Bell-basis amplitudes (indexed by pattern) to computational amplitudes.

    Extra trailing axes (e.g. Eve's subsystem) are carried along untouched.
    """
    amps = np.asarray(amps, dtype=complex)
    return _apply_per_pair(amps, BELL_MATRIX)


def computational_to_bell(amps: np.ndarray) -> np.ndarray:
    """Inverse of :func:`bell_to_computational`."""
    amps = np.asarray(amps, dtype=complex)
    return _apply_per_pair(amps, BELL_MATRIX.conj().T)


def bell_basis_matrix(n_pairs: int) -> np.ndarray:
    """Unitary whose column ``pattern_index(p)`` is the multi-pair Bell vector of ``p``."""
    out = np.ones((1, 1), dtype=complex)
    for _ in range(n_pairs):
        out = np.kron(out, BELL_MATRIX)
    return out
