"""Factor a z-covariant qubit affine map into elementary Bloch-ball moves.

The map is written as displacement o rotation o deformation o rotation:
``M = M1 o M2 o M3 o M4`` where M4 and M2 rotate about z, M3 scales the
axes, and M1 shrinks the ball and pushes its center along z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .channel import AffineMap, ChoiMatrix
from .hilbert import PAULI, QUBIT_E, QUBIT_G

STRUCTURE_TOL = 1e-7
SKIP_DISPLACEMENT = 1e-10

# entries that vanish for the bus channel: M_xz, M_yz, M_zx, M_zy, a_x, a_y
_ZERO_ENTRIES = ((0, 2), (1, 2), (2, 0), (2, 1))


class DecompositionError(ValueError):
    pass


def structural_residuals(amap: AffineMap) -> np.ndarray:
    """The six entries that vanish for a z-covariant channel, in the order
    M_xz, M_yz, M_zx, M_zy, a_x, a_y."""
    return np.array([amap.M[i, j] for i, j in _ZERO_ENTRIES] + [amap.a[0], amap.a[1]])


def check_structure(amap: AffineMap, tol: float = STRUCTURE_TOL) -> None:
    res = np.abs(structural_residuals(amap))
    if res.max() > tol:
        raise DecompositionError(f"map is not z-covariant: structural residual {res.max():.3g} > {tol}")


def z_rotation(phi: float) -> np.ndarray:
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_angle(o: np.ndarray) -> float:
    return math.atan2(o[1, 0], o[0, 0])


@dataclass(frozen=True)
class Displacement:
    theta: float
    direction: int  # +1 toward +z (ground pole, damping), -1 toward -z (excitation)

    def affine(self) -> AffineMap:
        c = math.cos(self.theta)
        s2 = math.sin(self.theta) ** 2
        return AffineMap(np.diag([c, c, c * c]), [0.0, 0.0, self.direction * s2])


def split_displacement(amap: AffineMap, tol: float = STRUCTURE_TOL) -> tuple[Displacement, AffineMap]:
    """Return ``(M1, M')`` with ``amap = M1 o M'`` and M' unital."""
    check_structure(amap, tol)
    az = float(amap.a[2])
    if abs(az) > 1.0:
        raise DecompositionError(f"|a_z| = {abs(az):.6g} exceeds 1")
    if abs(az) < SKIP_DISPLACEMENT:
        return Displacement(0.0, 1), AffineMap(amap.M, np.zeros(3))
    theta = math.asin(math.sqrt(abs(az)))
    direction = 1 if az > 0 else -1
    c = math.cos(theta)
    if c < 1e-12:
        if np.max(np.abs(amap.M)) > 1e-12:
            raise DecompositionError("full displacement with a nonzero linear part cannot be factored")
        return Displacement(math.pi / 2, direction), AffineMap(np.zeros((3, 3)), np.zeros(3))
    mp = np.zeros((3, 3))
    mp[:2, :2] = amap.M[:2, :2] / c
    mp[2, 2] = amap.M[2, 2] / c**2
    return Displacement(theta, direction), AffineMap(mp, np.zeros(3))


def svd_split(m_prime: np.ndarray, tol: float = STRUCTURE_TOL) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``M' = O1 diag(D) O2^T`` with O1, O2 proper rotations about z.

    Reflections are pushed into the sign of the second xy singular value.
    Degenerate xy singular values fix the gauge to ``O2 = I``.
    """
    m = np.asarray(m_prime, dtype=float)
    if m.shape != (3, 3) or max(abs(m[i, j]) for i, j in _ZERO_ENTRIES) > tol:
        raise DecompositionError("M' must be block diagonal (xy block plus zz entry)")
    b = m[:2, :2]
    u, s, vt = np.linalg.svd(b)
    v = vt.T
    flip = np.diag([1.0, -1.0])
    sign = 1.0
    if s[0] - s[1] <= 1e-12 * max(1.0, s[0]):
        sig = 0.5 * (s[0] + s[1])
        sign = 1.0 if np.linalg.det(b) >= 0 else -1.0
        o1 = b / sig @ (flip if sign < 0 else np.eye(2)) if sig > 0 else np.eye(2)
        u, v, s = o1, np.eye(2), np.array([sig, sig])
    else:
        if np.linalg.det(u) < 0:
            u, sign = u @ flip, -sign
        if np.linalg.det(v) < 0:
            v, sign = v @ flip, -sign
    d = np.array([s[0], sign * s[1], m[2, 2]])
    o1 = np.eye(3)
    o2 = np.eye(3)
    o1[:2, :2] = u
    o2[:2, :2] = v
    return o1, d, o2


@dataclass(frozen=True)
class ElementaryMapSequence:
    displacement: Displacement
    rotation_outer: float  # M2, applied after the deformation
    scaling: tuple[float, float, float]  # M3
    rotation_inner: float  # M4, applied first

    @property
    def n_parameters(self) -> int:
        return 6

    def maps(self) -> list[AffineMap]:
        """``[M1, M2, M3, M4]``; the channel applies them right to left."""
        zero = np.zeros(3)
        return [
            self.displacement.affine(),
            AffineMap(z_rotation(self.rotation_outer), zero),
            AffineMap(np.diag(self.scaling), zero),
            AffineMap(z_rotation(self.rotation_inner), zero),
        ]

    def affine(self) -> AffineMap:
        m1, m2, m3, m4 = self.maps()
        return m1.compose(m2.compose(m3.compose(m4)))


def elementary_sequence(amap: AffineMap, tol: float = STRUCTURE_TOL) -> ElementaryMapSequence:
    disp, mp = split_displacement(amap, tol)
    o1, d, o2 = svd_split(mp.M, tol)
    return ElementaryMapSequence(disp, rotation_angle(o1), tuple(float(x) for x in d), -rotation_angle(o2))


def rotation_kraus(phi: float) -> list[np.ndarray]:
    """Unitary rotating Bloch vectors by ``phi`` about z."""
    sz = PAULI["z"]
    return [math.cos(phi / 2) * np.eye(2) - 1j * math.sin(phi / 2) * sz]


def displacement_kraus(disp: Displacement) -> list[np.ndarray]:
    """Amplitude damping with probability sin^2(theta) toward the selected pole."""
    gamma = math.sin(disp.theta) ** 2
    if gamma == 0:
        return [np.eye(2, dtype=complex)]
    target, source = (QUBIT_G, QUBIT_E) if disp.direction > 0 else (QUBIT_E, QUBIT_G)
    k0 = np.zeros((2, 2), dtype=complex)
    k0[target, target] = 1.0
    k0[source, source] = math.sqrt(1.0 - gamma)
    k1 = np.zeros((2, 2), dtype=complex)
    k1[target, source] = math.sqrt(gamma)
    return [k0, k1]


def scaling_kraus(scaling, atol: float = 1e-8) -> list[np.ndarray]:
    choi = AffineMap(np.diag(scaling), np.zeros(3)).to_choi()
    lo = choi.eigenvalues().min()
    if lo < -atol:
        raise DecompositionError(f"deformation {tuple(scaling)} is not completely positive (Choi eigenvalue {lo:.3g})")
    return choi.kraus()


def _compose(outer: list[np.ndarray], inner: list[np.ndarray]) -> list[np.ndarray]:
    return [a @ b for a in outer for b in inner]


def kraus_choi(ops: list[np.ndarray]) -> ChoiMatrix:
    d_out, d_in = ops[0].shape
    j = sum(np.outer(k.T.reshape(-1), k.T.reshape(-1).conj()) for k in ops)
    return ChoiMatrix(j, d_in, d_out)


def kraus_from_sequence(seq: ElementaryMapSequence, cutoff: float = 1e-10) -> list[np.ndarray]:
    """Kraus set of ``M1 o M2 o M3 o M4`` reduced to at most four operators."""
    ops = rotation_kraus(seq.rotation_inner)
    ops = _compose(scaling_kraus(seq.scaling), ops)
    ops = _compose(rotation_kraus(seq.rotation_outer), ops)
    ops = _compose(displacement_kraus(seq.displacement), ops)
    return kraus_choi(ops).kraus(cutoff)


def apply_kraus(ops: list[np.ndarray], rho: np.ndarray) -> np.ndarray:
    return sum(k @ rho @ k.conj().T for k in ops)


def completeness_residual(ops: list[np.ndarray]) -> float:
    total = sum(k.conj().T @ k for k in ops)
    return float(np.max(np.abs(total - np.eye(total.shape[0]))))
