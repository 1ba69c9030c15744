"""Truncated Hilbert-space machinery for the qubit-cavity-qubit bus.

Conventions used everywhere in the package:

* qubit basis is ordered ``(|e>, |g>)``; the Pauli set is chosen so that
  ``sigma_+ |g> = |e>`` and ``sigma_z |g> = +|g>``.  With
  ``H_0 = -(omega/2) sigma_z`` this puts ``|e>`` at energy ``+omega/2``, and the
  north pole of the Bloch ball (z = +1) is the ground state.
* composite ordering is ``R`` (optional reference, slowest), ``Q1``, ``C``,
  ``Q2`` (fastest), i.e. ``numpy.kron`` order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

ATOL = 1e-10

QUBIT_E = 0
QUBIT_G = 1


@dataclass(frozen=True)
class Layout:
    """Ordered subsystem labels and their dimensions."""

    labels: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.labels) != len(self.dims):
            raise ValueError("labels and dims differ in length")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"duplicate labels in {self.labels}")
        if any(d < 1 for d in self.dims):
            raise ValueError(f"non-positive dimension in {self.dims}")

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown subsystem {label!r}; layout has {self.labels}") from None

    def dim(self, label: str) -> int:
        return self.dims[self.index(label)]

    def select(self, labels: Iterable[str]) -> "Layout":
        keep = [lab for lab in self.labels if lab in set(labels)]
        return Layout(tuple(keep), tuple(self.dim(lab) for lab in keep))


def bus_layout(n_max: int, reference_dim: int | None = None) -> Layout:
    """Layout ``[R?, Q1, C, Q2]`` with a cavity of ``n_max + 1`` Fock levels."""
    check_cutoff(n_max)
    labels: tuple[str, ...] = ("Q1", "C", "Q2")
    dims: tuple[int, ...] = (2, n_max + 1, 2)
    if reference_dim is not None:
        labels = ("R",) + labels
        dims = (reference_dim,) + dims
    return Layout(labels, dims)


def check_cutoff(n_max: int) -> int:
    if int(n_max) != n_max or n_max < 1:
        raise ValueError(f"Fock cutoff must be an integer >= 1, got {n_max}")
    return int(n_max)


@dataclass(frozen=True, eq=False)
class PureState:
    amplitudes: np.ndarray
    layout: Layout

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.size != self.layout.size:
            raise ValueError(f"state has {amp.size} amplitudes, layout needs {self.layout.size}")
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def check(self, atol: float = ATOL) -> "PureState":
        if abs(self.norm - 1.0) > atol:
            raise ValueError(f"state norm {self.norm!r} differs from 1")
        return self

    def density(self) -> "DensityMatrix":
        v = self.amplitudes
        return DensityMatrix(np.outer(v, v.conj()), self.layout)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    layout: Layout

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.layout.size
        if m.shape != (n, n):
            raise ValueError(f"matrix shape {m.shape} does not match layout size {n}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def check(self, atol: float = ATOL) -> "DensityMatrix":
        m = self.matrix
        herm = np.max(np.abs(m - m.conj().T), initial=0.0)
        if herm > atol:
            raise ValueError(f"density matrix not Hermitian (deviation {herm:.3g})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > atol:
            raise ValueError(f"density matrix trace {tr!r} differs from 1")
        lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min()
        if lo < -atol:
            raise ValueError(f"density matrix has negative eigenvalue {lo:.3g}")
        return self


def qubit_density(matrix, label: str = "Q1") -> DensityMatrix:
    return DensityMatrix(matrix, Layout((label,), (2,)))


def fock_ladder(n_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(a, a_dag)`` on Fock levels ``0..n_max``.

    ``a_dag |n_max>`` is truncated to zero.
    """
    n_max = check_cutoff(n_max)
    a = np.diag(np.sqrt(np.arange(1, n_max + 1, dtype=float)), k=1).astype(complex)
    return a, a.conj().T.copy()


def qubit_ops() -> dict[str, np.ndarray]:
    sp = np.zeros((2, 2), dtype=complex)
    sp[QUBIT_E, QUBIT_G] = 1.0
    sm = sp.conj().T.copy()
    sx = sp + sm
    sy = 1j * (sp - sm)
    sz = np.diag([-1.0, 1.0]).astype(complex)
    return {"x": sx, "y": sy, "z": sz, "+": sp, "-": sm, "I": np.eye(2, dtype=complex)}


PAULI = qubit_ops()


def basis_vector(dim: int, k: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[k] = 1.0
    return v


def product_state(layout: Layout, factors: dict[str, np.ndarray]) -> PureState:
    """Tensor product of per-subsystem vectors (missing subsystems default to index 0)."""
    vecs = []
    for lab, d in zip(layout.labels, layout.dims):
        vecs.append(np.asarray(factors.get(lab, basis_vector(d, 0)), dtype=complex))
    return PureState(reduce(np.kron, vecs), layout)


def embed(op: np.ndarray, target: str, layout: Layout) -> np.ndarray:
    """``op`` on ``target`` tensored with identities elsewhere."""
    op = np.asarray(op)
    d = layout.dim(target)
    if op.shape != (d, d):
        raise ValueError(f"operator shape {op.shape} does not fit {target!r} of dimension {d}")
    factors = [op if lab == target else np.eye(dim) for lab, dim in zip(layout.labels, layout.dims)]
    return reduce(np.kron, factors)


def partial_trace(state: PureState | DensityMatrix, keep: Sequence[str]) -> DensityMatrix:
    keep = list(keep)
    if not keep:
        raise ValueError("keep must name at least one subsystem")
    layout = state.layout
    for lab in keep:
        layout.index(lab)
    kept = layout.select(keep)
    axes_keep = [layout.index(lab) for lab in kept.labels]
    axes_drop = [i for i in range(len(layout.dims)) if i not in axes_keep]
    dk = kept.size
    if isinstance(state, PureState):
        psi = state.amplitudes.reshape(layout.dims)
        psi = np.transpose(psi, axes_keep + axes_drop).reshape(dk, -1)
        rho = psi @ psi.conj().T
    else:
        nsub = len(layout.dims)
        t = state.matrix.reshape(layout.dims + layout.dims)
        perm = axes_keep + axes_drop
        t = np.transpose(t, perm + [nsub + p for p in perm])
        dd = layout.size // dk
        rho = np.einsum("ajbj->ab", t.reshape(dk, dd, dk, dd))
    return DensityMatrix(rho, kept)


def clipped_eigh(rho: np.ndarray, clip: float = -1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian eigendecomposition with tiny negative eigenvalues clipped to zero."""
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    w = np.where((w < 0) & (w >= clip), 0.0, w)
    return w, v


def purify(rho: DensityMatrix) -> PureState:
    """Spectral purification ``sum_i sqrt(l_i) |i>_R |v_i>`` with R leading."""
    rho.check()
    w, v = clipped_eigh(rho.matrix)
    w = np.clip(w, 0.0, None)
    d = rho.layout.size
    # row i of the R-major amplitude matrix holds sqrt(l_i) v_i
    amp = (np.sqrt(w)[:, None] * v.T).reshape(-1)
    layout = Layout(("R",) + rho.layout.labels, (d,) + rho.layout.dims)
    return PureState(amp, layout)


def mean_photon_number(state: PureState | DensityMatrix, cavity: str = "C") -> float:
    rho_c = partial_trace(state, [cavity]).matrix
    return float(np.real(np.diag(rho_c)) @ np.arange(rho_c.shape[0]))


def bloch_vector(rho) -> np.ndarray:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return np.array([np.trace(m @ PAULI[k]).real for k in "xyz"])


def bloch_density(r) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return 0.5 * (PAULI["I"] + r[0] * PAULI["x"] + r[1] * PAULI["y"] + r[2] * PAULI["z"])
