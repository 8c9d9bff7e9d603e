"""Dense pure states and density operators over labelled subsystem layouts."""

from __future__ import annotations

import string
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

# Largest ambient dimension for state vectors / density matrices.
MAX_DIM = 2**14
MAX_DENSITY_DIM = 2**12

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-10
PSD_TOL = 1e-10
NORM_TOL = 1e-10


@dataclass(frozen=True)
class SubsystemLayout:
    dims: tuple[int, ...]
    labels: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "labels", tuple(str(lab) for lab in self.labels))
        if not self.dims:
            raise ValueError("layout needs at least one subsystem")
        if len(self.dims) != len(self.labels):
            raise ValueError("dims and labels must have the same length")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"subsystem dimensions must be positive, got {self.dims}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate subsystem labels in {self.labels}")

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims))

    def axes(self, labels: Sequence[str]) -> list[int]:
        """Positions of ``labels`` in the layout, in layout order."""
        unknown = [lab for lab in labels if lab not in self.labels]
        if unknown:
            raise ValueError(f"unknown subsystem label(s) {unknown}; layout has {self.labels}")
        wanted = set(labels)
        return [i for i, lab in enumerate(self.labels) if lab in wanted]

    def restrict(self, labels: Sequence[str]) -> SubsystemLayout:
        axes = self.axes(labels)
        return SubsystemLayout(tuple(self.dims[i] for i in axes), tuple(self.labels[i] for i in axes))

    def dim_of(self, labels: Sequence[str]) -> int:
        return int(np.prod([self.dims[i] for i in self.axes(labels)]))

    def __add__(self, other: SubsystemLayout) -> SubsystemLayout:
        return SubsystemLayout(self.dims + other.dims, self.labels + other.labels)


def pair_layout(n_pairs: int, eve_dim: int | None = None, eve_label: str = "E") -> SubsystemLayout:
    """Layout ``pair-1 .. pair-n`` (dimension 4 each), optionally followed by Eve."""
    dims = [4] * n_pairs
    labels = [f"pair-{i + 1}" for i in range(n_pairs)]
    if eve_dim is not None:
        dims.append(eve_dim)
        labels.append(eve_label)
    return SubsystemLayout(tuple(dims), tuple(labels))


def pair_labels(layout: SubsystemLayout) -> list[str]:
    return [lab for lab in layout.labels if lab.startswith("pair-")]


@dataclass(frozen=True)
class PureState:
    amplitudes: np.ndarray
    layout: SubsystemLayout

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.shape[0] != self.layout.dim:
            raise ValueError(f"{amps.shape[0]} amplitudes do not match layout dimension {self.layout.dim}")
        if amps.shape[0] > MAX_DIM:
            raise ValueError(f"dimension {amps.shape[0]} exceeds MAX_DIM={MAX_DIM}")
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > NORM_TOL:
            raise ValueError(f"state is not normalised (norm={norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def density(self) -> DensityOperator:
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.layout)


@dataclass(frozen=True)
class DensityOperator:
    matrix: np.ndarray
    layout: SubsystemLayout
    check: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.layout.dim
        if mat.shape != (d, d):
            raise ValueError(f"matrix shape {mat.shape} does not match layout dimension {d}")
        if d > MAX_DENSITY_DIM:
            raise ValueError(f"dimension {d} exceeds MAX_DENSITY_DIM={MAX_DENSITY_DIM}")
        if self.check:
            _check_density(mat)
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)


def _check_density(mat: np.ndarray) -> None:
    if np.max(np.abs(mat - mat.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("density operator is not Hermitian")
    tr = np.trace(mat)
    if abs(tr - 1.0) > TRACE_TOL:
        raise ValueError(f"density operator has trace {tr!r}, expected 1")
    if np.linalg.eigvalsh(mat)[0] < -PSD_TOL:
        raise ValueError("density operator has a negative eigenvalue")


def reduce_vector(tensor: np.ndarray, keep_axes: Sequence[int]) -> np.ndarray:
    """Reduced matrix ``tr_rest |v><v|`` of an (unnormalised) vector tensor."""
    keep_axes = list(keep_axes)
    rest = [i for i in range(tensor.ndim) if i not in keep_axes]
    d_keep = int(np.prod([tensor.shape[i] for i in keep_axes]))
    mat = np.transpose(tensor, keep_axes + rest).reshape(d_keep, -1)
    return mat @ mat.conj().T


def reduce_matrix(tensor: np.ndarray, keep_axes: Sequence[int]) -> np.ndarray:
    """Partial trace of a matrix given as a ``dims + dims`` tensor."""
    n = tensor.ndim // 2
    keep_axes = list(keep_axes)
    letters = list(string.ascii_letters[: 2 * n])
    row = letters[:n]
    col = [row[i] if i not in keep_axes else letters[n + i] for i in range(n)]
    out = [row[i] for i in keep_axes] + [col[i] for i in keep_axes]
    subscripts = "".join(row) + "".join(col) + "->" + "".join(out)
    reduced = np.einsum(subscripts, tensor)
    d_keep = int(np.prod([tensor.shape[i] for i in keep_axes]))
    return reduced.reshape(d_keep, d_keep)


def partial_trace(state: PureState | DensityOperator, keep: Sequence[str]) -> DensityOperator:
    """Trace out every subsystem whose label is not in ``keep``.

    Kept subsystems stay in layout order regardless of the order of ``keep``.
    """
    if isinstance(keep, str):
        keep = [keep]
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    layout = state.layout
    axes = layout.axes(keep)
    if isinstance(state, PureState):
        reduced = reduce_vector(state.tensor(), axes)
    else:
        reduced = reduce_matrix(state.matrix.reshape(layout.dims + layout.dims), axes)
    return DensityOperator(reduced, layout.restrict(keep))


def shannon_entropy(probs: np.ndarray) -> float:
    probs = np.asarray(probs, dtype=float)
    probs = probs[probs > 0]
    return float(-np.sum(probs * np.log2(probs)))


def von_neumann_entropy(rho: DensityOperator | np.ndarray) -> float:
    """Entropy in bits, from the spectrum with ``0 log 0 = 0``."""
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    if np.max(np.abs(mat - mat.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("von_neumann_entropy needs a Hermitian matrix")
    eigs = np.linalg.eigvalsh(mat)
    if eigs[0] < -PSD_TOL:
        raise ValueError("von_neumann_entropy needs a positive semidefinite matrix")
    eigs = np.clip(eigs, 0.0, None)
    return shannon_entropy(eigs)


def fidelity_to_pure(rho: DensityOperator | np.ndarray, psi: PureState | np.ndarray) -> float:
    """Squared-overlap fidelity ``<psi|rho|psi>``.

    This convention is linear in ``rho``, which the ensemble arguments in
    :mod:`qkdlab.security` rely on.
    """
    mat = rho.matrix if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    vec = psi.amplitudes if isinstance(psi, PureState) else np.asarray(psi, dtype=complex).reshape(-1)
    if mat.shape != (vec.shape[0], vec.shape[0]):
        raise ValueError(f"dimension mismatch: rho is {mat.shape}, psi has {vec.shape[0]} amplitudes")
    return float(np.real(np.vdot(vec, mat @ vec)))


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def max_entropy_given_fidelity(fidelity: float, d: int) -> float:
    """Largest entropy (bits) of a ``d``-dimensional state with ``<psi|rho|psi> = fidelity``.

    The maximiser puts weight ``fidelity`` on ``psi`` and spreads the rest
    evenly over the orthogonal complement, giving
    ``h(F) + (1 - F) log2(d - 1)``.
    """
    if not 0.0 <= fidelity <= 1.0:
        raise ValueError(f"fidelity must lie in [0, 1], got {fidelity!r}")
    if d < 2:
        raise ValueError(f"dimension must be at least 2, got {d}")
    return binary_entropy(fidelity) + (1.0 - fidelity) * float(np.log2(d - 1))


def product_state(states: Sequence[PureState]) -> PureState:
    amps = np.ones(1, dtype=complex)
    layout = None
    for s in states:
        amps = np.kron(amps, s.amplitudes)
        layout = s.layout if layout is None else layout + s.layout
    return PureState(amps, layout)
