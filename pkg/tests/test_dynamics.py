import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from dcebus.channel import output_bloch
from dcebus.dynamics import (
    CouplingWindow,
    ModelParams,
    PropagationError,
    PropagatorConfig,
    ProtocolSchedule,
    channel_isometry,
    coefficient_ode_oracle,
    converged_cutoff,
    dce_photons,
    evolve,
    exact_step_oracle,
    interaction_hamiltonian,
    propagate,
    run_protocol,
    schrodinger_coupling,
    window_value,
)
from dcebus.hilbert import (
    PAULI,
    QUBIT_E,
    QUBIT_G,
    PureState,
    basis_vector,
    bloch_density,
    bus_layout,
    fock_ladder,
    mean_photon_number,
    product_state,
    qubit_density,
)
from dcebus.information import coherent_information, unpolarized

from tests.helpers import random_state

E, G = basis_vector(2, QUBIT_E), basis_vector(2, QUBIT_G)


def bus_state(n_max, q1, n, q2):
    return product_state(bus_layout(n_max), {"Q1": q1, "C": basis_vector(n_max + 1, n), "Q2": q2})


def excitations(n_max):
    """Diagonal of the total excitation number on Q1 x C x Q2."""
    q = np.zeros(2)
    q[QUBIT_E] = 1
    n = np.arange(n_max + 1)
    return (q[:, None, None] + n[None, :, None] + q[None, None, :]).reshape(-1)


# -- parameters and windows ---------------------------------------------------


def test_parameter_validation():
    with pytest.raises(ValueError):
        ModelParams(-0.1)
    with pytest.raises(ValueError):
        ModelParams(0.1, omega=0)
    with pytest.raises(ValueError):
        CouplingWindow("hamming", 1.5)
    with pytest.raises(ValueError):
        ProtocolSchedule(-1, 0, 1)
    with pytest.raises(ValueError):
        PropagatorConfig(tol=0)
    with pytest.raises(ValueError):
        PropagatorConfig(method="rk4")


def test_standard_schedule():
    s = ProtocolSchedule.standard(0.25)
    assert s.T1 == s.T2 == pytest.approx(2 * math.pi)
    assert s.total == pytest.approx(math.pi / 0.25)
    assert ModelParams(0.25).tau == pytest.approx(s.T1)


def test_window_values():
    ham0 = CouplingWindow("hamming", 0.0)
    assert all(window_value(ham0, t, 2.0) == 1.0 for t in np.linspace(0, 2, 7))
    assert window_value(CouplingWindow("hamming", 1.0), 0.0, 2.0) == pytest.approx(0.0)
    assert window_value(CouplingWindow("hamming", 0.5), 1.0, 2.0) == pytest.approx(1.5)
    rect = CouplingWindow()
    assert window_value(rect, 1.0, 2.0) == 1.0
    assert window_value(rect, 2.5, 2.0) == 0.0
    with pytest.raises(ValueError):
        window_value(rect, 0.0, 0.0)


@given(st.floats(0.0, 1.0), st.floats(0.5, 20.0))
def test_hamming_area_matches_rectangle(xi, length):
    w = CouplingWindow("hamming", xi)
    area, _ = quad(lambda t: window_value(w, t, length), 0, length)
    assert area == pytest.approx(length, rel=1e-9)


# -- Hamiltonian --------------------------------------------------------------


def test_idle_hamiltonian_vanishes():
    s = ProtocolSchedule(1.0, 2.0, 1.0)
    assert np.all(interaction_hamiltonian(2.0, ModelParams(0.5), s, 3) == 0)


@given(st.floats(0.0, 12.0))
def test_hamiltonian_hermitian(t):
    s = ProtocolSchedule.standard(0.5)
    h = interaction_hamiltonian(t, ModelParams(0.5), s, 4)
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_rwa_coupling_matches_jaynes_cummings():
    g, n_max = 0.3, 2
    a, ad = fock_ladder(n_max)
    jc = g * np.kron(np.kron(PAULI["+"], a) + np.kron(PAULI["-"], ad), np.eye(2))
    np.testing.assert_array_equal(schrodinger_coupling(ModelParams(g, rwa=True), n_max, 1), jc)
    rabi = jc + g * np.kron(np.kron(PAULI["+"], ad) + np.kron(PAULI["-"], a), np.eye(2))
    np.testing.assert_allclose(schrodinger_coupling(ModelParams(g), n_max, 1), rabi)
    np.testing.assert_allclose(rabi, g * np.kron(np.kron(PAULI["x"], a + ad), np.eye(2)))


def test_rwa_block_sparsity():
    n_max = 2
    s = ProtocolSchedule.standard(0.3)
    h = interaction_hamiltonian(0.7, ModelParams(0.3, rwa=True), s, n_max)
    n_exc = excitations(n_max)
    changes = np.subtract.outer(n_exc, n_exc) != 0
    assert np.all(h[changes] == 0)
    # every <e,n+1|H|g,n> element is exactly zero
    lay = bus_layout(n_max)
    for n in range(n_max):
        bra = bus_state(n_max, E, n + 1, G).amplitudes
        ket = bus_state(n_max, G, n, G).amplitudes
        assert bra.conj() @ h @ ket == 0
    assert lay.size == h.shape[0]


def test_interaction_phases_follow_bare_energies():
    # <e,0,g|H|g,1,g> is resonant; <e,1,g|H|g,0,g> rotates at 2w
    g, t = 0.2, 0.9
    s = ProtocolSchedule.standard(g)
    h = interaction_hamiltonian(t, ModelParams(g), s, 2)
    res = bus_state(2, E, 0, G).amplitudes @ h @ bus_state(2, G, 1, G).amplitudes
    ctr = bus_state(2, E, 1, G).amplitudes @ h @ bus_state(2, G, 0, G).amplitudes
    assert res == pytest.approx(g)
    assert ctr == pytest.approx(g * np.exp(2j * t))


# -- propagation --------------------------------------------------------------


def test_zero_coupling_is_identity(rng):
    pc = PropagatorConfig(n_max=3)
    psi = PureState(random_state(rng, 16), bus_layout(3))
    out = propagate(psi, 0.0, 5.0, ModelParams(0.0), ProtocolSchedule(3, 1, 3), pc)
    np.testing.assert_array_equal(out.amplitudes, psi.amplitudes)


def test_rwa_swap_to_cavity():
    g = 0.2
    p, pc = ModelParams(g, rwa=True), PropagatorConfig(n_max=4)
    s = ProtocolSchedule.standard(g)
    out = propagate(bus_state(4, E, 0, G), 0.0, p.tau, p, s, pc)
    assert mean_photon_number(out) == pytest.approx(1.0, abs=1e-8)
    ex = exact_step_oracle(bus_state(4, E, 0, G), 0.0, p.tau, p, s, pc)
    assert abs(np.vdot(ex.amplitudes, out.amplitudes)) == pytest.approx(1.0, abs=1e-10)


def test_norm_drift_below_limit():
    g = 0.5
    p, pc = ModelParams(g), PropagatorConfig(n_max=16)
    s = ProtocolSchedule.standard(g)
    cols = np.stack([bus_state(16, E, 0, G).amplitudes, bus_state(16, G, 0, G).amplitudes], axis=1)
    _, drift = evolve(cols, 0.0, s.total, p, s, pc)
    assert drift < 1e-8


def test_drift_guard_is_a_hard_error():
    p = ModelParams(0.5)
    s = ProtocolSchedule.standard(0.5)
    loose = PropagatorConfig(n_max=8, tol=1e-1)
    with pytest.raises(PropagationError):
        evolve(bus_state(8, E, 0, G).amplitudes, 0.0, s.total, p, s, loose)


def test_unitarity_on_a_basis():
    n_max, g = 4, 0.7
    p, pc = ModelParams(g), PropagatorConfig(n_max=n_max)
    s = ProtocolSchedule.standard(g)
    u, _ = evolve(np.eye(4 * (n_max + 1), dtype=complex), 0.0, s.total, p, s, pc)
    assert np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) < 1e-7


def test_parity_superselection():
    n_max, g = 16, 0.6
    p, pc = ModelParams(g), PropagatorConfig(n_max=n_max)
    s = ProtocolSchedule.standard(g)
    odd = excitations(n_max) % 2 == 1
    psi = bus_state(n_max, G, 0, G)
    times = np.linspace(0.0, s.total, 6)
    for t0, t1 in zip(times, times[1:]):
        psi = propagate(psi, t0, t1, p, s, pc)
        assert np.max(np.abs(psi.amplitudes[odd])) < 1e-10


def test_rwa_conserves_excitations(rng):
    n_max, g = 6, 0.4
    p, pc = ModelParams(g, rwa=True), PropagatorConfig(n_max=n_max)
    s = ProtocolSchedule(1.3, 0.4, 2.1)
    n_exc = excitations(n_max)
    v = random_state(rng, 4 * (n_max + 1))
    v[n_exc > n_max] = 0
    psi = PureState(v / np.linalg.norm(v), bus_layout(n_max))
    before = float(np.abs(psi.amplitudes) ** 2 @ n_exc)
    for t1 in (1.0, 2.0, s.total):
        out = propagate(psi, 0.0, t1, p, s, pc)
        assert float(np.abs(out.amplitudes) ** 2 @ n_exc) == pytest.approx(before, abs=1e-9)


def test_idle_stage_is_noop():
    p, pc = ModelParams(0.3), PropagatorConfig(n_max=6)
    s = ProtocolSchedule(2.0, 3.0, 2.0)
    psi = propagate(bus_state(6, E, 0, G), 0.0, 2.0, p, s, pc)
    idle = propagate(psi, 2.0, 5.0, p, s, pc)
    np.testing.assert_array_equal(idle.amplitudes, psi.amplitudes)


# -- oracles ------------------------------------------------------------------


@pytest.mark.parametrize("g", [0.1, 0.3, 0.5, 1.0])
@pytest.mark.parametrize("qubit", ["e", "g"])
def test_propagate_matches_oracles(g, qubit):
    n_max = 24
    p, pc = ModelParams(g), PropagatorConfig(n_max=n_max)
    s = ProtocolSchedule.standard(g)
    start = bus_state(n_max, E if qubit == "e" else G, 0, G)
    got = propagate(start, 0.0, p.tau, p, s, pc)
    exact = exact_step_oracle(start, 0.0, p.tau, p, s, pc)
    assert abs(np.vdot(exact.amplitudes, got.amplitudes)) == pytest.approx(1.0, abs=1e-7)
    c0 = start.amplitudes.reshape(2, n_max + 1, 2)[:, :, QUBIT_G]
    coeffs = coefficient_ode_oracle(g, 1.0, c0, p.tau, pc)
    sub = got.amplitudes.reshape(2, n_max + 1, 2)[:, :, QUBIT_G]
    assert abs(np.vdot(coeffs.reshape(-1), sub.reshape(-1))) == pytest.approx(1.0, abs=1e-7)
    # Q2 untouched during the first stage
    assert np.max(np.abs(got.amplitudes.reshape(2, n_max + 1, 2)[:, :, QUBIT_E])) < 1e-12


def test_second_stage_matches_exact_oracle():
    g, n_max = 0.4, 16
    p, pc = ModelParams(g), PropagatorConfig(n_max=n_max)
    s = ProtocolSchedule(p.tau, 0.7, p.tau)
    psi = exact_step_oracle(bus_state(n_max, E, 0, G), 0.0, s.T1, p, s, pc)
    got = propagate(psi, s.t2_start, s.total, p, s, pc)
    exact = exact_step_oracle(psi, s.t2_start, s.total, p, s, pc)
    assert abs(np.vdot(exact.amplitudes, got.amplitudes)) == pytest.approx(1.0, abs=1e-8)


def test_exact_oracle_guards():
    p, pc = ModelParams(0.3), PropagatorConfig(n_max=4)
    psi = bus_state(4, E, 0, G)
    s = ProtocolSchedule.standard(0.3)
    same = exact_step_oracle(psi, 1.0, 1.0, p, s, pc)
    np.testing.assert_array_equal(same.amplitudes, psi.amplitudes)
    with pytest.raises(ValueError):
        exact_step_oracle(psi, 0.0, s.total, p, s, pc)
    with pytest.raises(ValueError):
        exact_step_oracle(psi, 0.0, 1.0, p, ProtocolSchedule.standard(0.3, CouplingWindow("hamming", 0.5)), pc)


def test_coefficient_oracle_limits():
    pc = PropagatorConfig(n_max=8)
    c0 = np.zeros((2, 9), dtype=complex)
    c0[QUBIT_G, 0] = 1.0
    np.testing.assert_array_equal(coefficient_ode_oracle(0.0, 1.0, c0, 3.0, pc), c0)
    g = 0.01
    out = coefficient_ode_oracle(g, 1.0, c0, math.pi / (2 * g), pc)
    assert abs(out[QUBIT_G, 0]) ** 2 > 0.999
    with pytest.raises(ValueError):
        coefficient_ode_oracle(g, 1.0, 2 * c0, 1.0, pc)


def test_coefficient_oracle_pure_dce_photons():
    g, n_max = 0.5, 32
    p, pc = ModelParams(g), PropagatorConfig(n_max=n_max)
    c0 = np.zeros((2, n_max + 1), dtype=complex)
    c0[QUBIT_G, 0] = 1.0
    out = coefficient_ode_oracle(g, 1.0, c0, p.tau, pc)
    n_oracle = float((np.abs(out) ** 2).sum(axis=0) @ np.arange(n_max + 1))
    assert dce_photons(p, pc) == pytest.approx(n_oracle, abs=1e-7)
    # frozen regression value
    assert n_oracle == pytest.approx(0.3303244581, abs=1e-8)


def test_hamming_zero_depth_matches_rectangular():
    g = 0.3
    p = ModelParams(g)
    s_rect = ProtocolSchedule.standard(g)
    s_ham = ProtocolSchedule.standard(g, CouplingWindow("hamming", 0.0))
    a = channel_isometry(p, s_rect, PropagatorConfig(n_max=16, method="exact"))
    b = channel_isometry(p, s_ham, PropagatorConfig(n_max=16, method="adaptive"))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_auto_method_agrees_with_adaptive():
    g = 0.35
    p = ModelParams(g)
    s = ProtocolSchedule(p.tau * 0.9, 1.1, p.tau * 1.05)
    a = channel_isometry(p, s, PropagatorConfig(n_max=24))
    b = channel_isometry(p, s, PropagatorConfig(n_max=24, method="adaptive"))
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_exact_method_rejects_hamming():
    p = ModelParams(0.3)
    s = ProtocolSchedule.standard(0.3, CouplingWindow("hamming", 0.5))
    with pytest.raises(ValueError):
        channel_isometry(p, s, PropagatorConfig(n_max=4, method="exact"))


# -- protocol -----------------------------------------------------------------


def test_rwa_protocol_flips_equator(rng):
    g = 0.1
    p, pc = ModelParams(g, rwa=True), PropagatorConfig(n_max=4)
    s = ProtocolSchedule.standard(g)
    for _ in range(5):
        r = rng.normal(size=3)
        r /= np.linalg.norm(r)
        out = output_bloch(qubit_density(bloch_density(r)), p, s, pc)
        np.testing.assert_allclose(out, [-r[0], -r[1], r[2]], atol=1e-8)


def test_protocol_output_is_a_state():
    g = 0.5
    p, pc = ModelParams(g), PropagatorConfig(n_max=32)
    s = ProtocolSchedule.standard(g)
    rho = run_protocol(unpolarized(), p, s, pc)
    rho.check(1e-10)
    joint = run_protocol(unpolarized(), p, s, pc, attach_reference=True)
    assert joint.layout.labels == ("R", "Q1", "C", "Q2")
    joint.check()


def test_protocol_input_validation():
    p, pc = ModelParams(0.3), PropagatorConfig(n_max=4)
    with pytest.raises(ValueError):
        run_protocol(unpolarized(), p, ProtocolSchedule.standard(0.3, stage="E2_only"), pc)


def test_pure_dce_vanishes_near_rwa():
    assert dce_photons(ModelParams(0.01), PropagatorConfig(n_max=8)) < 1e-3
    with pytest.raises(ValueError):
        dce_photons(ModelParams(0.0), PropagatorConfig(n_max=8))


def test_idle_time_enters_through_absolute_phase():
    g = 0.3
    p, pc = ModelParams(g), PropagatorConfig(n_max=24)
    base = ProtocolSchedule.standard(g)
    ic = [coherent_information(p, ProtocolSchedule(base.T1, tc, base.T2), pc, unpolarized()) for tc in (0.0, 0.8, math.pi)]
    assert ic[0] == pytest.approx(ic[2], abs=1e-9)
    assert abs(ic[0] - ic[1]) > 1e-4


def test_converged_cutoff_picks_smallest_passing():
    seen = []

    def evaluate(c):
        seen.append(c.n_max)
        return np.array([1.0 / c.n_max**3])

    n, vals, ok = converged_cutoff(evaluate, PropagatorConfig(n_max=8, convergence_threshold=1e-4, max_n_max=128))
    # 1/32^3 - 1/64^3 = 2.7e-5 < 1e-4, while 1/16^3 - 1/32^3 = 2.1e-4
    assert (n, ok) == (32, True)
    assert vals[0] == pytest.approx(1 / 32**3)
    n, _, ok = converged_cutoff(evaluate, PropagatorConfig(n_max=8, convergence_threshold=1e-12, max_n_max=16))
    assert (n, ok) == (16, False)
