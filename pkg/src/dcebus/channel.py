"""Qubit channels extracted from the bus dynamics.

Choi matrices use the ordering ``input (x) output`` and the normalization
``J = sum_ij |i><j| (x) E(|i><j|)``, so ``Tr_out J = I_in``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dynamics import (
    ModelParams,
    PropagatorConfig,
    ProtocolSchedule,
    channel_isometry,
    output_label,
    run_protocol,
)
from .hilbert import (
    PAULI,
    DensityMatrix,
    PureState,
    bloch_density,
    bloch_vector,
    bus_layout,
    partial_trace,
    qubit_density,
)

PAULI_BASIS = [PAULI["I"], PAULI["x"], PAULI["y"], PAULI["z"]]


def sphere_points(n: int = 100) -> np.ndarray:
    """Deterministic, roughly uniform unit vectors (Fibonacci lattice)."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = np.pi * (1.0 + 5**0.5) * k
    rho = np.sqrt(1.0 - z**2)
    return np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)


@dataclass(frozen=True, eq=False)
class AffineMap:
    """Bloch-vector map ``r -> M r + a``."""

    M: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        M = np.array(self.M, dtype=float)
        a = np.array(self.a, dtype=float).reshape(-1)
        if M.shape != (3, 3) or a.shape != (3,):
            raise ValueError("affine map needs a 3x3 matrix and a 3-vector")
        M.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "a", a)

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(np.eye(3), np.zeros(3))

    def __call__(self, r) -> np.ndarray:
        return self.M @ np.asarray(r, dtype=float) + self.a

    def compose(self, inner: "AffineMap") -> "AffineMap":
        """``self o inner``."""
        return AffineMap(self.M @ inner.M, self.M @ inner.a + self.a)

    def homogeneous(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.M
        out[:3, 3] = self.a
        return out

    def transfer_matrix(self) -> np.ndarray:
        """4x4 Pauli transfer matrix in the basis (I, x, y, z)."""
        out = np.zeros((4, 4))
        out[0, 0] = 1.0
        out[1:, 0] = self.a
        out[1:, 1:] = self.M
        return out

    def to_choi(self) -> "ChoiMatrix":
        ptm = self.transfer_matrix()
        j = np.zeros((4, 4), dtype=complex)
        for i in range(2):
            for k in range(2):
                unit = np.zeros((2, 2), dtype=complex)
                unit[i, k] = 1.0
                coeff = np.array([np.trace(p @ unit) / 2 for p in PAULI_BASIS])
                image = sum(c * p for c, p in zip(ptm @ coeff, PAULI_BASIS))
                j += np.kron(unit, image)
        return ChoiMatrix(j, 2, 2)

    def maps_ball_into_itself(self, samples: int = 100, atol: float = 1e-8) -> bool:
        pts = sphere_points(samples) @ self.M.T + self.a
        return bool(np.all(np.linalg.norm(pts, axis=1) <= 1.0 + atol))

    def is_completely_positive(self, atol: float = 1e-8) -> bool:
        return self.to_choi().is_cp(atol)


@dataclass(frozen=True, eq=False)
class ChoiMatrix:
    matrix: np.ndarray
    d_in: int
    d_out: int

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        n = self.d_in * self.d_out
        if m.shape != (n, n):
            raise ValueError(f"Choi matrix shape {m.shape} does not match {self.d_in}x{self.d_out}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, d: int) -> "ChoiMatrix":
        phi = np.eye(d).reshape(-1)
        return cls(np.outer(phi, phi), d, d)

    def _tensor(self) -> np.ndarray:
        # indices (i_in, k_out, j_in, l_out)
        return self.matrix.reshape(self.d_in, self.d_out, self.d_in, self.d_out)

    def eigenvalues(self) -> np.ndarray:
        m = self.matrix
        return np.linalg.eigvalsh(0.5 * (m + m.conj().T))

    def is_cp(self, atol: float = 1e-8) -> bool:
        return bool(self.eigenvalues().min() >= -atol)

    def tp_residual(self) -> float:
        tr_out = np.einsum("ikjk->ij", self._tensor())
        return float(np.max(np.abs(tr_out - np.eye(self.d_in))))

    def is_tp(self, atol: float = 1e-8) -> bool:
        return self.tp_residual() <= atol

    def rank(self, threshold: float = 1e-6) -> int:
        w = self.eigenvalues() / self.d_in
        return int(np.sum(w > threshold))

    def apply(self, rho) -> np.ndarray:
        rho = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
        return np.einsum("ij,ikjl->kl", rho, self._tensor())

    def kraus(self, cutoff: float = 1e-10) -> list[np.ndarray]:
        w, v = np.linalg.eigh(0.5 * (self.matrix + self.matrix.conj().T))
        ops = []
        for lam, vec in zip(w[::-1], v.T[::-1]):
            if lam <= cutoff:
                break
            # vec indexed (i_in, k_out) -> K[k, i]
            ops.append(np.sqrt(lam) * vec.reshape(self.d_in, self.d_out).T)
        return ops


def output_bloch(rho_in: DensityMatrix, params, schedule, config) -> np.ndarray:
    out = run_protocol(rho_in, params, schedule, config)
    return bloch_vector(partial_trace(out, [output_label(schedule)]))


def tomography(params: ModelParams, schedule: ProtocolSchedule, config: PropagatorConfig) -> AffineMap:
    """Affine map from the unpolarized input and the three +1 Pauli eigenstates."""
    if schedule.stage != "full":
        raise ValueError("tomography needs the full qubit-to-qubit channel")
    a = output_bloch(qubit_density(PAULI["I"] / 2), params, schedule, config)
    cols = []
    for axis in range(3):
        r = np.zeros(3)
        r[axis] = 1.0
        cols.append(output_bloch(qubit_density(bloch_density(r)), params, schedule, config) - a)
    return AffineMap(np.stack(cols, axis=1), a)


def choi_of_protocol(params: ModelParams, schedule: ProtocolSchedule, config: PropagatorConfig) -> ChoiMatrix:
    """``d_in (I (x) E)(|Phi+><Phi+|)`` for the selected stage."""
    v = channel_isometry(params, schedule, config)
    d_in = v.shape[1]
    joint = PureState(v.T.reshape(-1) / np.sqrt(d_in), bus_layout(config.n_max, reference_dim=d_in))
    out = output_label(schedule)
    rho = partial_trace(joint, ["R", out]).matrix
    return ChoiMatrix(d_in * rho, d_in, joint.layout.dim(out))


def apply_affine(amap: AffineMap, rho: DensityMatrix) -> DensityMatrix:
    if rho.layout.size != 2:
        raise ValueError("affine maps act on single qubits")
    out = qubit_density(bloch_density(amap(bloch_vector(rho))), rho.layout.labels[0])
    try:
        return out.check(1e-8)
    except ValueError as exc:
        raise ValueError(f"affine map output is not a state; map is not CP: {exc}") from None


def stage_compose(e1: ChoiMatrix, e2: ChoiMatrix) -> ChoiMatrix:
    """Choi matrix of ``e2 o e1``."""
    if e1.d_out != e2.d_in:
        raise ValueError(f"cannot compose: e1 outputs dimension {e1.d_out}, e2 takes {e2.d_in}")
    t = np.einsum("ikjl,kmln->imjn", e1._tensor(), e2._tensor())
    n = e1.d_in * e2.d_out
    return ChoiMatrix(t.reshape(n, n), e1.d_in, e2.d_out)


def stage_channels(params, schedule, config) -> tuple[ChoiMatrix, ChoiMatrix]:
    """Choi matrices of the Q1 -> C and C -> Q2 stages."""
    return (
        choi_of_protocol(params, replace(schedule, stage="E1_only"), config),
        choi_of_protocol(params, replace(schedule, stage="E2_only"), config),
    )
