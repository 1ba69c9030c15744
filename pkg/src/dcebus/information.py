"""Entropic figures of merit for the bus channel and the optimizers built on them."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from itertools import product

import numpy as np
from scipy.optimize import minimize

from .dynamics import (
    ModelParams,
    PropagatorConfig,
    ProtocolSchedule,
    channel_isometry,
    input_label,
    output_label,
)
from .hilbert import PAULI, DensityMatrix, PureState, bloch_density, bus_layout, clipped_eigh, partial_trace, qubit_density

log = logging.getLogger(__name__)

SIMPLEX_MAXITER = 500
SIMPLEX_XATOL = 1e-6
SIMPLEX_FATOL = 1e-9


def entropy(rho) -> float:
    """von Neumann entropy in bits, with 0 log 0 = 0."""
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    w, _ = clipped_eigh(m)
    w = w[w > 0]
    return float(max(-np.sum(w * np.log2(w)), 0.0))


def joint_state(params, schedule, config, rho: DensityMatrix) -> PureState:
    """Purify ``rho`` onto R and push the system half through the stage."""
    v = channel_isometry(params, schedule, config)
    if rho.layout.size != v.shape[1]:
        raise ValueError(f"input of dimension {rho.layout.size} does not fit stage input {v.shape[1]}")
    w, vecs = clipped_eigh(rho.matrix)
    cols = v @ (vecs * np.sqrt(np.clip(w, 0.0, None)))
    return PureState(cols.T.reshape(-1), bus_layout(config.n_max, reference_dim=v.shape[1]))


def _entropies(psi: PureState, schedule: ProtocolSchedule) -> tuple[float, float, float]:
    """``S(out)``, ``S(R out)``, ``S(complement of R out)``."""
    out = output_label(schedule)
    rest = [lab for lab in ("Q1", "C", "Q2") if lab != out]
    return (
        entropy(partial_trace(psi, [out])),
        entropy(partial_trace(psi, ["R", out])),
        entropy(partial_trace(psi, rest)),
    )


def entropy_exchange(params, schedule, config, rho: DensityMatrix, via: str = "reference") -> float:
    """Entropy of R(x)output; ``via='complement'`` uses the traced-out environment instead."""
    psi = joint_state(params, schedule, config, rho)
    out = output_label(schedule)
    if via == "reference":
        return entropy(partial_trace(psi, ["R", out]))
    if via == "complement":
        return entropy(partial_trace(psi, [lab for lab in ("Q1", "C", "Q2") if lab != out]))
    raise ValueError(f"unknown route {via!r}")


def coherent_information(params, schedule, config, rho: DensityMatrix) -> float:
    s_out, s_joint, _ = _entropies(joint_state(params, schedule, config, rho), schedule)
    return s_out - s_joint


def unpolarized(label: str = "Q1") -> DensityMatrix:
    return qubit_density(PAULI["I"] / 2, label)


def _ball(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x)
    return x / n if n > 1.0 else x


def bloch_grid() -> np.ndarray:
    """Origin plus three shells of 18 directions: poles, equator, two tilted rings."""
    dirs = [(0.0, 0.0, 1.0), (0.0, 0.0, -1.0)]
    for k in range(8):
        phi = 2 * math.pi * k / 8
        dirs.append((math.cos(phi), math.sin(phi), 0.0))
    for z in (1.0, -1.0):
        for k in range(4):
            phi = 2 * math.pi * (k + 0.5) / 4
            s = math.sqrt(0.5)
            dirs.append((s * math.cos(phi), s * math.sin(phi), z * s))
    dirs = np.array(dirs)
    shells = [r * dirs for r in (1 / 3, 2 / 3, 1.0)]
    return np.vstack([np.zeros((1, 3))] + shells)


@dataclass(frozen=True)
class InputOptimum:
    ic: float
    bloch: np.ndarray
    converged: bool

    @property
    def q1(self) -> float:
        return max(self.ic, 0.0)


def _order(values, points):
    # best first; ties broken lexicographically on the parameters
    return sorted(range(len(values)), key=lambda i: (-values[i], tuple(points[i])))


def maximize_coherent_information(params, schedule, config, n_starts: int = 3) -> InputOptimum:
    """Maximize I_c over the Bloch ball of the stage's qubit input."""
    if input_label(schedule) != "Q1":
        raise ValueError("input optimization needs a qubit input stage")

    def ic(r):
        return coherent_information(params, schedule, config, qubit_density(bloch_density(_ball(r))))

    grid = bloch_grid()
    values = [ic(r) for r in grid]
    order = _order(values, grid)
    best_val, best_r = values[order[0]], grid[order[0]]
    converged = True
    for i in order[:n_starts]:
        x0 = grid[i]
        simplex = np.vstack([x0] + [x0 + 0.1 * e for e in np.eye(3)])
        res = minimize(
            lambda x: -ic(x),
            x0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxiter": SIMPLEX_MAXITER,
                "xatol": SIMPLEX_XATOL,
                "fatol": SIMPLEX_FATOL,
            },
        )
        converged &= bool(res.success)
        if -res.fun > best_val:
            best_val, best_r = float(-res.fun), _ball(res.x)
    if not converged:
        log.warning("input optimization hit the iteration cap at g=%s", params.g)
    return InputOptimum(float(best_val), np.asarray(best_r), converged)


def q1(params, schedule, config) -> float:
    """Single-shot capacity ``max(max_rho I_c, 0)``."""
    return maximize_coherent_information(params, schedule, config).q1


def q1_stage_e1(params, schedule, config) -> float:
    """Single-shot capacity of the Q1 -> C stage alone."""
    return q1(params, replace(schedule, stage="E1_only"), config)


def transmission_rate(params, schedule, config, rho: DensityMatrix | None = None) -> float:
    """Coherent information per unit protocol time."""
    if schedule.total == 0:
        raise ValueError("protocol duration is zero")
    ic = coherent_information(params, schedule, config, rho or unpolarized())
    return ic / schedule.total


# -- timing optimization ------------------------------------------------------

T_REL_BOUNDS = (0.8, 1.2)
TC_BOUNDS = (0.0, 2 * math.pi)


@dataclass(frozen=True)
class TimingCandidate:
    """T1, T2 in units of the swap time pi/(2g); Tc in absolute time."""

    T1: float
    Tc: float
    T2: float

    def schedule(self, g: float, base: ProtocolSchedule | None = None) -> ProtocolSchedule:
        tau = math.pi / (2 * g)
        base = base or ProtocolSchedule.standard(g)
        return replace(base, T1=self.T1 * tau, Tc=self.Tc, T2=self.T2 * tau)

    def as_array(self) -> np.ndarray:
        return np.array([self.T1, self.Tc, self.T2])


@dataclass(frozen=True)
class TimingOptimum:
    timing: TimingCandidate
    ic: float
    standard_ic: float
    converged: bool


def timing_grid(n_t: int = 5, n_c: int = 8) -> np.ndarray:
    t = np.linspace(*T_REL_BOUNDS, n_t)
    c = np.linspace(*TC_BOUNDS, n_c)
    return np.array([(t1, tc, t2) for t1, tc, t2 in product(t, c, t)])


def optimize_timing(params: ModelParams, config: PropagatorConfig, base=None, n_starts: int = 3) -> TimingOptimum:
    """Maximize I_c(rho_u) over (T1, Tc, T2); never worse than the standard timing."""
    if not params.g > 0:
        raise ValueError("optimize_timing needs g > 0")
    rho_u = unpolarized()
    base = base or ProtocolSchedule.standard(params.g)

    def ic(x):
        x = np.clip(x, [T_REL_BOUNDS[0], TC_BOUNDS[0], T_REL_BOUNDS[0]], [T_REL_BOUNDS[1], TC_BOUNDS[1], T_REL_BOUNDS[1]])
        return coherent_information(params, TimingCandidate(*x).schedule(params.g, base), config, rho_u)

    standard = ic(np.array([1.0, 0.0, 1.0]))
    grid = timing_grid()
    values = [ic(x) for x in grid]
    order = _order(values, grid)
    best_val, best_x = values[order[0]], grid[order[0]]
    if standard >= best_val:
        best_val, best_x = standard, np.array([1.0, 0.0, 1.0])
    bounds = [T_REL_BOUNDS, TC_BOUNDS, T_REL_BOUNDS]
    converged = True
    for i in order[:n_starts]:
        x0 = grid[i]
        step = np.array([0.05, 0.25, 0.05])
        simplex = np.vstack([x0] + [x0 + s * e if x0 @ e + s <= b[1] else x0 - s * e for s, e, b in zip(step, np.eye(3), bounds)])
        res = minimize(
            lambda x: -ic(x),
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "initial_simplex": simplex,
                "maxiter": SIMPLEX_MAXITER,
                "xatol": SIMPLEX_XATOL,
                "fatol": SIMPLEX_FATOL,
            },
        )
        converged &= bool(res.success)
        if -res.fun > best_val:
            best_val, best_x = float(-res.fun), np.clip(res.x, [b[0] for b in bounds], [b[1] for b in bounds])
    if not converged:
        log.warning("timing optimization hit the iteration cap at g=%s", params.g)
    return TimingOptimum(TimingCandidate(*map(float, best_x)), float(best_val), float(standard), converged)
