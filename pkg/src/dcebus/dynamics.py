"""Time evolution of the Q1-C-Q2 bus in the interaction picture.

The Schroedinger-picture coupling for qubit k is ``f_k(t) g sigma_x^(k) (a + a_dag)``.
In the interaction picture every matrix element picks up ``exp(i (E_i - E_j) t)``;
because ``H_0`` is harmonic only three frequencies occur (0, +2w, -2w), so the
propagator stores one matrix per frequency instead of re-exponentiating.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .hilbert import (
    PAULI,
    QUBIT_E,
    QUBIT_G,
    DensityMatrix,
    Layout,
    PureState,
    basis_vector,
    bus_layout,
    check_cutoff,
    clipped_eigh,
    fock_ladder,
    mean_photon_number,
    partial_trace,
)

STAGES = ("full", "E1_only", "E2_only")
WINDOWS = ("rectangular", "hamming")
METHODS = ("auto", "adaptive", "exact")

NORM_DRIFT_LIMIT = 1e-6


class PropagationError(RuntimeError):
    """Integrator failure: step-size underflow or excessive norm drift."""


@dataclass(frozen=True)
class ModelParams:
    g: float
    omega: float = 1.0
    rwa: bool = False

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not self.g >= 0:
            raise ValueError(f"g must be non-negative, got {self.g}")

    @property
    def tau(self) -> float:
        """Swap time pi/(2g)."""
        return math.pi / (2.0 * self.g)


@dataclass(frozen=True)
class CouplingWindow:
    family: str = "rectangular"
    xi: float = 0.0

    def __post_init__(self):
        if self.family not in WINDOWS:
            raise ValueError(f"unknown window family {self.family!r}")
        if not 0.0 <= self.xi <= 1.0:
            raise ValueError(f"xi must lie in [0, 1], got {self.xi}")

    @property
    def piecewise_constant(self) -> bool:
        return self.family == "rectangular" or self.xi == 0.0


@dataclass(frozen=True)
class ProtocolSchedule:
    T1: float
    Tc: float
    T2: float
    window: CouplingWindow = field(default_factory=CouplingWindow)
    stage: str = "full"

    def __post_init__(self):
        if min(self.T1, self.Tc, self.T2) < 0:
            raise ValueError("stage durations must be non-negative")
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")

    @classmethod
    def standard(cls, g: float, window: CouplingWindow | None = None, stage: str = "full"):
        """T1 = T2 = pi/(2g), Tc = 0."""
        tau = math.pi / (2.0 * g)
        return cls(tau, 0.0, tau, window or CouplingWindow(), stage)

    @property
    def total(self) -> float:
        return self.T1 + self.Tc + self.T2

    @property
    def t2_start(self) -> float:
        return self.T1 + self.Tc

    def segments(self) -> list[tuple[float, float, int | None]]:
        """``(start, end, active qubit)`` for coupling, idle, coupling."""
        return [
            (0.0, self.T1, 1),
            (self.T1, self.t2_start, None),
            (self.t2_start, self.total, 2),
        ]

    def span(self) -> tuple[float, float]:
        """Time interval simulated for the selected stage."""
        if self.stage == "E1_only":
            return 0.0, self.T1
        if self.stage == "E2_only":
            return self.t2_start, self.total
        return 0.0, self.total


@dataclass(frozen=True)
class PropagatorConfig:
    n_max: int = 32
    method: str = "auto"
    tol: float = 1e-10
    dt_initial: float = 1e-2
    convergence_threshold: float = 1e-6
    max_n_max: int = 128

    def __post_init__(self):
        check_cutoff(self.n_max)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.tol > 0 and self.dt_initial > 0):
            raise ValueError("tol and dt_initial must be positive")

    def with_cutoff(self, n_max: int) -> "PropagatorConfig":
        return replace(self, n_max=n_max)


def window_value(window: CouplingWindow, t_k: float, T_k: float) -> float:
    if not T_k > 0:
        raise ValueError(f"window length must be positive, got {T_k}")
    if t_k < 0 or t_k > T_k:
        return 0.0
    if window.family == "rectangular":
        return 1.0
    return 1.0 - window.xi * math.cos(2.0 * math.pi * t_k / T_k)


def coupling_strengths(t: float, schedule: ProtocolSchedule) -> tuple[float, float]:
    """``(f_1(t), f_2(t))``."""
    f1 = window_value(schedule.window, t, schedule.T1) if schedule.T1 > 0 else 0.0
    t2 = t - schedule.t2_start
    f2 = window_value(schedule.window, t2, schedule.T2) if schedule.T2 > 0 else 0.0
    return f1, f2


def bare_energies(n_max: int, omega: float = 1.0) -> np.ndarray:
    """Diagonal of H_0 on Q1 x C x Q2, shifted so that |g,0,g> has zero energy."""
    q = np.zeros(2)
    q[QUBIT_E] = omega
    n = omega * np.arange(n_max + 1, dtype=float)
    return (q[:, None, None] + n[None, :, None] + q[None, None, :]).reshape(-1)


@lru_cache(maxsize=32)
def _coupling_parts(n_max: int, qubit: int) -> tuple[np.ndarray, np.ndarray]:
    """Resonant part ``s+ a + s- a_dag`` and counter-rotating part ``s+ a_dag`` for one qubit."""
    a, ad = fock_ladder(n_max)
    sp, sm = PAULI["+"], PAULI["-"]
    eye2 = np.eye(2)

    def lift(s, c):
        return np.kron(np.kron(s, c), eye2) if qubit == 1 else np.kron(np.kron(eye2, c), s)

    resonant = lift(sp, a) + lift(sm, ad)
    counter = lift(sp, ad)
    for m in (resonant, counter):
        m.setflags(write=False)
    return resonant, counter


def schrodinger_coupling(params: ModelParams, n_max: int, qubit: int) -> np.ndarray:
    """``g sigma_x (a + a_dag)`` on the bus, with counter-rotating blocks removed under RWA."""
    resonant, counter = _coupling_parts(n_max, qubit)
    h = resonant.copy()
    if not params.rwa:
        h = h + counter + counter.conj().T
    return params.g * h


def _with_reference(op: np.ndarray, reference_dim: int | None) -> np.ndarray:
    return op if reference_dim is None else np.kron(np.eye(reference_dim), op)


def interaction_hamiltonian(
    t: float,
    params: ModelParams,
    schedule: ProtocolSchedule,
    n_max: int,
    reference_dim: int | None = None,
) -> np.ndarray:
    """``exp(i H_0 t) H_I(t) exp(-i H_0 t)`` as a dense matrix."""
    f1, f2 = coupling_strengths(t, schedule)
    h = np.zeros((4 * (n_max + 1),) * 2, dtype=complex)
    if f1:
        h += f1 * schrodinger_coupling(params, n_max, 1)
    if f2:
        h += f2 * schrodinger_coupling(params, n_max, 2)
    e = bare_energies(n_max, params.omega)
    h = h * np.exp(1j * np.subtract.outer(e, e) * t)
    return _with_reference(h, reference_dim)


# -- adaptive integrator ------------------------------------------------------


def _stage_pieces(schedule: ProtocolSchedule, t0: float, t1: float):
    for start, end, qubit in schedule.segments():
        lo, hi = max(start, t0), min(end, t1)
        if hi > lo:
            yield lo, hi, qubit


def _rhs_factory(params: ModelParams, schedule: ProtocolSchedule, n_max: int, qubit: int, ncol: int):
    resonant, counter = _coupling_parts(n_max, qubit)
    g, w2 = params.g, 2.0 * params.omega
    counter_h = counter.conj().T
    window = schedule.window
    if qubit == 1:
        offset, length = 0.0, schedule.T1
    else:
        offset, length = schedule.t2_start, schedule.T2
    rwa = params.rwa
    shape = (resonant.shape[0], ncol)

    def rhs(t, y):
        f = window_value(window, t - offset, length)
        y = y.reshape(shape)
        out = resonant @ y
        if not rwa:
            ph = complex(math.cos(w2 * t), math.sin(w2 * t))
            out += ph * (counter @ y) + ph.conjugate() * (counter_h @ y)
        return (-1j * g * f) * out.reshape(-1)

    return rhs


def evolve(
    columns: np.ndarray,
    t0: float,
    t1: float,
    params: ModelParams,
    schedule: ProtocolSchedule,
    config: PropagatorConfig,
) -> tuple[np.ndarray, float]:
    """Integrate every column of ``columns`` (bus vectors) from t0 to t1.

    Returns the renormalized columns and the largest relative norm drift seen
    before renormalization.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    y = np.array(columns, dtype=complex)
    vector = y.ndim == 1
    if vector:
        y = y[:, None]
    n_max = config.n_max
    if y.shape[0] != 4 * (n_max + 1):
        raise ValueError(f"columns have dimension {y.shape[0]}, bus needs {4 * (n_max + 1)}")
    norms0 = np.linalg.norm(y, axis=0)
    drift = 0.0
    if params.g == 0:
        return (y[:, 0] if vector else y), drift
    for lo, hi, qubit in _stage_pieces(schedule, t0, t1):
        if qubit is None:
            continue
        rhs = _rhs_factory(params, schedule, n_max, qubit, y.shape[1])
        sol = solve_ivp(
            rhs,
            (lo, hi),
            y.reshape(-1),
            method="DOP853",
            rtol=config.tol,
            atol=config.tol * 1e-2,
            first_step=min(config.dt_initial, hi - lo),
        )
        if sol.status != 0:
            raise PropagationError(f"integration stopped at t={sol.t[-1]:.6g}: {sol.message}")
        y = sol.y[:, -1].reshape(y.shape)
        norms = np.linalg.norm(y, axis=0)
        rel = np.abs(norms - norms0) / np.where(norms0 > 0, norms0, 1.0)
        drift = max(drift, float(rel.max(initial=0.0)))
        if drift > NORM_DRIFT_LIMIT:
            raise PropagationError(f"norm drift {drift:.3g} at t={hi:.6g} exceeds {NORM_DRIFT_LIMIT}")
        scale = np.where(norms > 0, norms0 / np.where(norms > 0, norms, 1.0), 0.0)
        y = y * scale
    return (y[:, 0] if vector else y), drift


def _bus_columns(state: PureState, n_max: int) -> np.ndarray:
    """Reshape amplitudes to (bus, reference) columns."""
    d = 4 * (n_max + 1)
    if state.layout.labels[-3:] != ("Q1", "C", "Q2") or state.layout.dims[-3:] != (2, n_max + 1, 2):
        raise ValueError(f"layout {state.layout} is not a bus layout with n_max={n_max}")
    return state.amplitudes.reshape(-1, d).T


def _from_columns(cols: np.ndarray, layout: Layout) -> PureState:
    return PureState(cols.T.reshape(-1), layout)


def propagate(
    state: PureState,
    t0: float,
    t1: float,
    params: ModelParams,
    schedule: ProtocolSchedule,
    config: PropagatorConfig,
) -> PureState:
    state.check()
    cols = _bus_columns(state, config.n_max)
    out, _ = evolve(cols, t0, t1, params, schedule, config)
    return _from_columns(out, state.layout)


# -- oracles ------------------------------------------------------------------


@lru_cache(maxsize=64)
def _stage_eigh(g: float, omega: float, rwa: bool, n_max: int, qubit: int):
    params = ModelParams(g, omega, rwa)
    h = np.diag(bare_energies(n_max, omega)).astype(complex) + schrodinger_coupling(params, n_max, qubit)
    w, v = np.linalg.eigh(h)
    w.setflags(write=False)
    v.setflags(write=False)
    return w, v


def _exact_columns(cols, t0, t1, params, qubit, n_max):
    e = bare_energies(n_max, params.omega)
    if qubit is None or params.g == 0 or t1 == t0:
        return cols
    w, v = _stage_eigh(params.g, params.omega, params.rwa, n_max, qubit)
    s = np.exp(-1j * e * t0)[:, None] * cols
    s = v @ (np.exp(-1j * w * (t1 - t0))[:, None] * (v.conj().T @ s))
    return np.exp(1j * e * t1)[:, None] * s


def _constant_stage(schedule: ProtocolSchedule, t0: float, t1: float) -> int | None:
    if not schedule.window.piecewise_constant:
        raise ValueError("exact stepping needs rectangular windows")
    pieces = [p for p in _stage_pieces(schedule, t0, t1) if p[2] is not None]
    if len(pieces) > 1:
        raise ValueError(f"[{t0}, {t1}] spans more than one coupling stage")
    return pieces[0][2] if pieces else None


def exact_step_oracle(
    state: PureState,
    t0: float,
    t1: float,
    params: ModelParams,
    schedule: ProtocolSchedule,
    config: PropagatorConfig,
) -> PureState:
    """Exact propagation through one constant-coupling interval.

    Goes to the Schroedinger picture at t0, applies ``exp(-i H (t1 - t0))``
    with ``H = H_0 + g X_k`` diagonalized once, and rotates back at t1.
    """
    if t1 < t0:
        raise ValueError("t1 must not precede t0")
    qubit = _constant_stage(schedule, t0, t1)
    cols = _bus_columns(state, config.n_max)
    out = _exact_columns(cols, t0, t1, params, qubit, config.n_max)
    return _from_columns(out, state.layout)


def coefficient_ode_oracle(
    g: float,
    omega: float,
    coefficients: np.ndarray,
    duration: float,
    config: PropagatorConfig,
    t0: float = 0.0,
) -> np.ndarray:
    """Integrate the single qubit-cavity amplitude equations directly.

    ``coefficients[l, n]`` is the amplitude of ``|l, n>`` with ``l`` in the
    qubit order (e, g).  Each ``C_{g,n}`` couples resonantly to ``C_{e,n-1}``
    with rate ``g sqrt(n)`` and to ``C_{e,n+1}`` through the counter-rotating
    term carrying ``exp(-2 i w t)``.
    """
    c0 = np.array(coefficients, dtype=complex)
    if c0.ndim != 2 or c0.shape[0] != 2:
        raise ValueError("coefficients must have shape (2, n_max + 1)")
    norm0 = np.linalg.norm(c0)
    if abs(norm0 - 1.0) > 1e-10:
        raise ValueError("coefficients must be normalized")
    nlev = c0.shape[1]
    rabi = g * np.sqrt(np.arange(nlev + 1, dtype=float))  # rabi[n] = g sqrt(n)

    def rhs(t, y):
        ce, cg = y[:nlev], y[nlev:]
        ph = np.exp(-2j * omega * t)
        dg = np.zeros(nlev, dtype=complex)
        de = np.zeros(nlev, dtype=complex)
        # i dC_{g,n} = W_n C_{e,n-1} + W_{n+1} e^{-2iwt} C_{e,n+1}
        dg[1:] += rabi[1:nlev] * ce[:-1]
        dg[:-1] += rabi[1:nlev] * ph * ce[1:]
        # i dC_{e,m} = W_{m+1} C_{g,m+1} + W_m e^{+2iwt} C_{g,m-1}
        de[:-1] += rabi[1:nlev] * cg[1:]
        de[1:] += rabi[1:nlev] * np.conj(ph) * cg[:-1]
        return -1j * np.concatenate([de, dg])

    y0 = np.concatenate([c0[QUBIT_E], c0[QUBIT_G]])
    if duration == 0 or g == 0:
        return c0
    sol = solve_ivp(rhs, (t0, t0 + duration), y0, method="DOP853", rtol=config.tol, atol=config.tol * 1e-2)
    if sol.status != 0:
        raise PropagationError(f"coefficient integration failed at t={sol.t[-1]:.6g}: {sol.message}")
    y = sol.y[:, -1]
    if abs(np.linalg.norm(y) - norm0) > NORM_DRIFT_LIMIT:
        raise PropagationError("coefficient norm drift exceeds tolerance")
    out = np.empty_like(c0)
    out[QUBIT_E], out[QUBIT_G] = y[:nlev], y[nlev:]
    return out


# -- protocol -----------------------------------------------------------------


def resolve_method(schedule: ProtocolSchedule, config: PropagatorConfig) -> str:
    if config.method == "auto":
        return "exact" if schedule.window.piecewise_constant else "adaptive"
    if config.method == "exact" and not schedule.window.piecewise_constant:
        raise ValueError("exact method needs rectangular windows")
    return config.method


def evolve_protocol(columns: np.ndarray, params, schedule, config) -> np.ndarray:
    """Run the selected stage span on bus columns with the configured method."""
    t0, t1 = schedule.span()
    if resolve_method(schedule, config) == "adaptive":
        out, _ = evolve(columns, t0, t1, params, schedule, config)
        return out
    out = columns
    for lo, hi, qubit in _stage_pieces(schedule, t0, t1):
        out = _exact_columns(out, lo, hi, params, qubit, config.n_max)
    return out


def input_columns(schedule: ProtocolSchedule, n_max: int) -> np.ndarray:
    """Bus vectors for each basis state of the stage's input system.

    Qubit input (full, E1_only): ``|l>_1 |0> |g>_2`` for l in (e, g).
    Cavity input (E2_only): ``|g>_1 |k> |g>_2`` for k = 0..n_max.
    """
    nc = n_max + 1
    g_vec = basis_vector(2, QUBIT_G)
    if schedule.stage == "E2_only":
        return np.stack([np.kron(np.kron(g_vec, basis_vector(nc, k)), g_vec) for k in range(nc)], axis=1)
    vac = basis_vector(nc, 0)
    return np.stack([np.kron(np.kron(basis_vector(2, l), vac), g_vec) for l in (QUBIT_E, QUBIT_G)], axis=1)


@lru_cache(maxsize=256)
def channel_isometry(params: ModelParams, schedule: ProtocolSchedule, config: PropagatorConfig) -> np.ndarray:
    """Columns ``U |i>_in |env_0>`` for the input basis of the selected stage."""
    cols = evolve_protocol(input_columns(schedule, config.n_max), params, schedule, config)
    cols = np.ascontiguousarray(cols)
    cols.setflags(write=False)
    return cols


def input_label(schedule: ProtocolSchedule) -> str:
    return "C" if schedule.stage == "E2_only" else "Q1"


def output_label(schedule: ProtocolSchedule) -> str:
    return "C" if schedule.stage == "E1_only" else "Q2"


def run_protocol(
    rho_in: DensityMatrix,
    params: ModelParams,
    schedule: ProtocolSchedule,
    config: PropagatorConfig,
    attach_reference: bool = False,
) -> PureState | DensityMatrix:
    """Final joint state of the bus after the selected stage(s).

    For E2_only ``rho_in`` is the cavity state; both qubits start in |g>.
    With ``attach_reference`` the input is purified onto R first and the joint
    pure state on ``[R, Q1, C, Q2]`` is returned; otherwise the bus density
    matrix.
    """
    d_in = 2 if schedule.stage != "E2_only" else config.n_max + 1
    if rho_in.layout.size != d_in or len(rho_in.layout.dims) != 1:
        raise ValueError(
            f"stage {schedule.stage!r} expects a single {d_in}-dimensional input, got layout {rho_in.layout}"
        )
    rho_in.check()
    v = channel_isometry(params, schedule, config)
    layout = bus_layout(config.n_max)
    if attach_reference:
        w, vecs = clipped_eigh(rho_in.matrix)
        w = np.clip(w, 0.0, None)
        out = v @ (vecs * np.sqrt(w))  # column i: sqrt(l_i) V |v_i>
        return _from_columns(out, bus_layout(config.n_max, reference_dim=d_in))
    return DensityMatrix(v @ rho_in.matrix @ v.conj().T, layout)


def dce_photons(params: ModelParams, config: PropagatorConfig, at: str = "pure_dce", schedule=None) -> float:
    """Mean cavity photon number for pure DCE or at the end of the protocol.

    ``pure_dce``: Q1 and C start in the ground state and only the Q1-C stage runs.
    ``end_of_protocol``: full protocol with the unpolarized input.
    """
    if not params.g > 0:
        raise ValueError("dce_photons needs g > 0")
    base = schedule or ProtocolSchedule.standard(params.g)
    v_stage = "E1_only" if at == "pure_dce" else "full"
    if at not in ("pure_dce", "end_of_protocol"):
        raise ValueError(f"unknown observable point {at!r}")
    sched = replace(base, stage=v_stage)
    v = channel_isometry(params, sched, config)
    layout = bus_layout(config.n_max)
    if at == "pure_dce":
        return mean_photon_number(PureState(v[:, QUBIT_G], layout))
    return 0.5 * sum(mean_photon_number(PureState(v[:, k], layout)) for k in range(2))


def converged_cutoff(
    evaluate: Callable[[PropagatorConfig], np.ndarray],
    config: PropagatorConfig,
) -> tuple[int, np.ndarray, bool]:
    """Double ``n_max`` until every observable moves by less than the threshold.

    Returns the smallest passing cutoff on the doubling ladder, the observables
    evaluated there, and whether the policy passed before ``max_n_max``.
    """
    n = config.n_max
    cur = np.asarray(evaluate(config), dtype=float)
    while 2 * n <= config.max_n_max:
        nxt = np.asarray(evaluate(config.with_cutoff(2 * n)), dtype=float)
        if np.all(np.abs(nxt - cur) < config.convergence_threshold):
            return n, cur, True
        n, cur = 2 * n, nxt
    return n, cur, False


def reduced_output(state: PureState | DensityMatrix, schedule: ProtocolSchedule) -> DensityMatrix:
    return partial_trace(state, [output_label(schedule)])
