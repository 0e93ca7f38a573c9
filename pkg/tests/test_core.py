import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from conftest import TWO_PI, reference_rhs, reference_superoperator
from lambdaspin.core import (FieldSample, LambdaParams, check_density_matrix, dark_state,
                             default_time_step, dissipator, effective_rabi_frequency,
                             effective_two_level_propagate, ground_state, hamiltonian,
                             liouvillian, mhz, nv_params, piecewise_constant_oracle,
                             projector, propagate, propagate_batch, rhs, to_mhz)
from lambdaspin.errors import DegenerateInputError, InvalidWindowError, NonConvergenceError
from lambdaspin.pulses import Envelope, PulseSequence, Shape, make_rabi_pair, make_stirap_pair

GAMMA = mhz(7.0)


def random_rho(rng, n=3):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    rho = A @ A.conj().T
    return rho / np.trace(rho)


# -- parameters and units ---------------------------------------------------


def test_unit_conversion_round_trip():
    assert mhz(1.0) == pytest.approx(TWO_PI)
    assert to_mhz(mhz(46.0)) == pytest.approx(46.0)


def test_nv_defaults():
    p = nv_params(1500.0)
    assert p.gamma_repop == pytest.approx(TWO_PI * 7)
    assert p.gamma_opt == pytest.approx(TWO_PI * 7)
    assert p.gamma_spin == pytest.approx(1 / 200)
    assert p.leak_rate == 0
    off = nv_params(1500.0, decay=False)
    assert off.gamma_repop == off.gamma_opt == off.gamma_spin == 0


def test_negative_rate_rejected():
    with pytest.raises(ValueError):
        LambdaParams(gamma_repop=-1.0)


def test_gamma_opt_below_repop_warns():
    with pytest.warns(RuntimeWarning):
        LambdaParams(gamma_repop=2.0, gamma_opt=1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        LambdaParams(gamma_repop=1.0, gamma_opt=1.0)


def test_field_sample_rejects_negative():
    with pytest.raises(ValueError):
        FieldSample(-1.0, 0.0)


# -- Hamiltonian, dissipator, rhs --------------------------------------------


def test_hamiltonian_equal_fields_large_detuning():
    H = hamiltonian(nv_params(1500.0), FieldSample(mhz(46), mhz(46))) / TWO_PI
    np.testing.assert_allclose(H, [[1500, 0, 23], [0, 1500, 23], [23, 23, 0]], atol=1e-12)


def test_hamiltonian_zero():
    assert np.all(hamiltonian(LambdaParams(), FieldSample()) == 0)


def test_hamiltonian_single_field_with_two_photon_detuning():
    H = hamiltonian(nv_params(900.0, 2.0), FieldSample(mhz(48), 0.0)) / TWO_PI
    expected = np.diag([899.0, 901.0, 0.0]).astype(complex)
    expected[1, 2] = expected[2, 1] = 24.0
    np.testing.assert_allclose(H, expected, atol=1e-12)


def test_dissipator_pure_excited():
    p = nv_params(0.0)
    rho = np.diag([0, 0, 1]).astype(complex)
    np.testing.assert_allclose(dissipator(p, rho), np.diag([GAMMA, GAMMA, -2 * GAMMA]))


def test_dissipator_ground_coherence_only():
    p = nv_params(0.0)
    c = 0.3 - 0.2j
    rho = np.zeros((3, 3), dtype=complex)
    rho[0, 1], rho[1, 0] = c, np.conj(c)
    D = dissipator(p, rho)
    assert D[0, 1] == pytest.approx(-p.gamma_spin * c)
    assert D[1, 0] == pytest.approx(-p.gamma_spin * np.conj(c))
    assert np.count_nonzero(np.abs(D) > 0) == 2


def test_dissipator_leak_removes_excited_population():
    p = nv_params(0.0, leak_rate_mhz=1.0)
    rho = np.diag([0, 0, 1]).astype(complex)
    assert np.trace(dissipator(p, rho)).real == pytest.approx(-mhz(1.0))


def test_rhs_excited_state_decay():
    out = rhs(nv_params(1234.0), FieldSample(), np.diag([0, 0, 1]).astype(complex))
    np.testing.assert_allclose(out, np.diag([GAMMA, GAMMA, -2 * GAMMA]), atol=1e-12)


def test_rhs_dark_state_is_stationary():
    omega = mhz(46)
    p = nv_params(1500.0, decay=False)
    rho = projector(dark_state(omega, omega))
    np.testing.assert_allclose(rhs(p, FieldSample(omega, omega), rho), 0, atol=1e-12)


rates = st.floats(0, 60)
detunings = st.floats(-2000, 2000)
amplitudes = st.floats(0, 100)


@given(detunings, st.floats(-10, 10), amplitudes, amplitudes, rates, st.floats(0, 0.1),
       st.integers(0, 2**31 - 1))
def test_rhs_matches_reference_and_is_traceless_hermitian(D, d, op, om, G, gs, seed):
    rng = np.random.default_rng(seed)
    p = LambdaParams(mhz(D), mhz(d), mhz(G), mhz(G) + 1.0, gs)
    f = FieldSample(mhz(op), mhz(om))
    rho = random_rho(rng)
    out = rhs(p, f, rho)
    ref = reference_rhs(rho, mhz(D), mhz(d), mhz(op), mhz(om), mhz(G), mhz(G) + 1.0, gs)
    np.testing.assert_allclose(out, ref, atol=1e-9)
    assert abs(np.trace(out)) < 1e-9
    np.testing.assert_allclose(out, out.conj().T, atol=1e-9)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_rhs_is_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    p = nv_params(900.0, 1.0)
    f = FieldSample(mhz(48), mhz(20))
    r1, r2 = random_rho(rng), random_rho(rng)
    lhs = rhs(p, f, a * r1 + b * r2)
    np.testing.assert_allclose(lhs, a * rhs(p, f, r1) + b * rhs(p, f, r2), atol=1e-9)


def test_liouvillian_matches_reference():
    p = nv_params(900.0, 1.5, leak_rate_mhz=0.5)
    f = FieldSample(mhz(48), mhz(30))
    ref = reference_superoperator(p.delta_avg, p.delta_two_photon, f.omega_plus, f.omega_minus,
                                  p.gamma_repop, p.gamma_opt, p.gamma_spin, p.leak_rate)
    np.testing.assert_allclose(liouvillian(p, f), ref, atol=1e-12)


# -- closed forms ------------------------------------------------------------


def test_effective_rabi_frequency_values():
    assert to_mhz(effective_rabi_frequency(mhz(46), mhz(46), mhz(1500))) == pytest.approx(0.7053, abs=1e-4)
    assert to_mhz(effective_rabi_frequency(mhz(48), mhz(48), mhz(900))) == pytest.approx(1.28, abs=1e-12)
    assert effective_rabi_frequency(0.0, 5.0, 3.0) == 0.0


def test_effective_rabi_frequency_zero_detuning():
    with pytest.raises(ZeroDivisionError):
        effective_rabi_frequency(1.0, 1.0, 0.0)


def test_dark_state_values():
    np.testing.assert_allclose(dark_state(2.0, 2.0), [1 / math.sqrt(2), -1 / math.sqrt(2)])
    np.testing.assert_allclose(dark_state(2.0, 0.0), [1.0, 0.0])
    np.testing.assert_allclose(dark_state(3.0, 4.0), [0.6, -0.8])
    with pytest.raises(DegenerateInputError):
        dark_state(0.0, 0.0)


@given(st.floats(0, 100), st.floats(0, 100))
def test_dark_state_is_unit_norm_and_decoupled(op, om):
    if op == om == 0:
        return
    c = dark_state(op, om)
    assert np.linalg.norm(c) == pytest.approx(1.0)
    # the excited-state row of H annihilates the dark state
    assert abs(0.5 * om * c[0] + 0.5 * op * c[1]) < 1e-12 * max(op, om, 1)


def test_two_level_closed_form():
    rho0 = np.diag([1, 0]).astype(complex)
    w = mhz(0.7)
    np.testing.assert_allclose(np.diag(effective_two_level_propagate(rho0, w, 0, math.pi / w)).real,
                               [0, 1], atol=1e-12)
    np.testing.assert_allclose(np.diag(effective_two_level_propagate(rho0, w, 0, 2 * math.pi / w)).real,
                               [1, 0], atol=1e-12)
    np.testing.assert_allclose(effective_two_level_propagate(rho0, 0.0, mhz(3), 1.7), rho0, atol=1e-12)


@given(st.floats(0, 5), st.floats(-5, 5), st.floats(0, 3))
def test_two_level_matches_expm(wr, d, t):
    H = np.array([[-d / 2, wr / 2], [wr / 2, d / 2]])
    U = expm(-1j * H * t)
    rho0 = np.array([[0.7, 0.2 - 0.1j], [0.2 + 0.1j, 0.3]])
    np.testing.assert_allclose(effective_two_level_propagate(rho0, wr, d, t), U @ rho0 @ U.conj().T,
                               atol=1e-10)


def test_check_density_matrix():
    check_density_matrix(ground_state(1))
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([1.1, 0, 0]))
    with pytest.raises(ValueError):
        check_density_matrix(np.diag([1.5, -0.5, 0]))
    bad = ground_state(0)
    bad[0, 1] = 1e-6
    with pytest.raises(ValueError):
        check_density_matrix(bad)


# -- propagation -------------------------------------------------------------


def test_default_step_is_nanosecond_aligned_and_bounded():
    p = nv_params(1500.0)
    seq = make_rabi_pair(mhz(46), 1.0)
    h = default_time_step(p, seq)
    k = round(1 / h)
    assert k % 1000 == 0 and 1 / k == h
    rate = abs(p.delta_avg) + 2 * p.gamma_repop + 2 * mhz(46)
    assert h * rate <= 0.05


def test_zero_fields_no_rates_is_identity(g1):
    seq = PulseSequence(span=3.0)
    out = propagate(g1, seq, LambdaParams(mhz(1500.0)), [0.0, 1.5, 3.0])
    for _, rho in out:
        np.testing.assert_array_equal(rho, g1)


def test_excited_state_decay_matches_exponential():
    rho0 = np.diag([0, 0, 1]).astype(complex)
    t = 0.0114
    (_, rho), = propagate(rho0, PulseSequence(span=t), nv_params(0.0), [t], dt=1e-4)
    expected = math.exp(-2 * GAMMA * t)
    assert rho[2, 2].real == pytest.approx(expected, abs=1e-10)
    assert rho[2, 2].real == pytest.approx(1 / math.e, abs=0.01)
    oracle = piecewise_constant_oracle(rho0, FieldSample(), nv_params(0.0), t)
    assert oracle[2, 2].real == pytest.approx(expected, abs=1e-12)


def test_one_rabi_period_returns_to_g1(g1):
    p = nv_params(1500.0, decay=False)
    omega = mhz(46)
    period = 2 * math.pi / effective_rabi_frequency(omega, omega, p.delta_avg)
    seq = make_rabi_pair(omega, period)
    (_, half), (_, full) = propagate(g1, seq, p, [period / 2, period])
    assert full[0, 0].real == pytest.approx(1.0, abs=0.02)
    two_level = effective_two_level_propagate(np.diag([1, 0]).astype(complex),
                                              effective_rabi_frequency(omega, omega, p.delta_avg),
                                              0.0, period / 2)
    assert half[1, 1].real == pytest.approx(two_level[1, 1].real, abs=0.02)


@pytest.mark.parametrize("delta_mhz,omega_mhz", [(1500.0, 46.0), (900.0, 48.0), (300.0, 20.0)])
def test_constant_segment_matches_matrix_exponential(g1, delta_mhz, omega_mhz):
    p = nv_params(delta_mhz, 0.4)
    f = FieldSample(mhz(omega_mhz), mhz(0.8 * omega_mhz))
    seq = make_rabi_pair(f.omega_plus, 0.1, f.omega_minus)
    (_, rho), = propagate(g1, seq, p, [0.1])
    ref = reference_superoperator(p.delta_avg, p.delta_two_photon, f.omega_plus, f.omega_minus,
                                  p.gamma_repop, p.gamma_opt, p.gamma_spin)
    oracle = (expm(ref * 0.1) @ g1.ravel()).reshape(3, 3)
    assert np.max(np.abs(rho - oracle)) <= 1e-8
    np.testing.assert_allclose(piecewise_constant_oracle(g1, f, p, 0.1), oracle, atol=1e-12)


def test_undamped_constant_segment_matches_expm_at_finer_step(g1):
    p = nv_params(1500.0, decay=False)
    f = FieldSample(mhz(46), mhz(46))
    seq = make_rabi_pair(f.omega_plus, 0.1)
    (_, rho), = propagate(g1, seq, p, [0.1], dt=1 / 2_000_000)
    assert np.max(np.abs(rho - piecewise_constant_oracle(g1, f, p, 0.1))) <= 1e-8


def test_ramped_fields_match_adaptive_reference(g1):
    p = nv_params(300.0, 0.5)
    seq = make_stirap_pair(mhz(30), 0.3, 0.2, 0.4, Shape.SIN2_RAMP)
    t_end = seq.span
    (_, rho), = propagate(g1, seq, p, [t_end])

    def f(t, y):
        plus, minus = seq.fields(np.array([t]))
        r = reference_rhs(y.reshape(3, 3), p.delta_avg, p.delta_two_photon, plus[0], minus[0],
                          p.gamma_repop, p.gamma_opt, p.gamma_spin)
        return r.ravel()

    sol = solve_ivp(f, (0, t_end), g1.ravel(), method="DOP853", rtol=1e-12, atol=1e-13,
                    t_eval=[t_end], max_step=0.01)
    np.testing.assert_allclose(rho, sol.y[:, -1].reshape(3, 3), atol=1e-8)


@given(detunings, st.floats(-5, 5), st.floats(0, 60), st.floats(0, 60), st.booleans(),
       st.floats(0.01, 0.2), st.floats(0, 1))
def test_propagated_states_are_density_matrices(D, d, op, om, decay, width, rise_frac):
    p = nv_params(D, d, decay=decay)
    seq = make_stirap_pair(mhz(op), width, rise_frac * width, 1.5 * width)
    times = np.linspace(0, seq.span, 5)
    for t, rho in propagate(g1_state(), seq, p, times):
        check_density_matrix(rho, hermitian_tol=1e-12, trace_tol=1e-9 * max(t, 1e-3) + 1e-12)


def g1_state():
    return ground_state(0)


def test_trace_drift_per_microsecond(g1):
    p = nv_params(1500.0)
    seq = make_rabi_pair(mhz(46), 5.0)
    times = np.linspace(0, 5, 11)
    for t, rho in propagate(g1, seq, p, times):
        assert abs(np.trace(rho) - 1) <= 1e-9 * max(t, 1.0)


def test_leak_reduces_trace(g1):
    p = nv_params(900.0, leak_rate_mhz=1.0)
    seq = make_rabi_pair(mhz(48), 2.0)
    (_, rho), = propagate(g1, seq, p, [2.0])
    assert np.trace(rho).real < 1 - 1e-6
    # leak acts on the excited population only, so positivity is not guaranteed
    pops = np.diag(rho).real
    assert np.all(pops >= -1e-9) and pops.sum() <= 1 + 1e-9
    np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)


def test_off_grid_square_pulse_matches_oracle(g1):
    p = nv_params(900.0, 0.7)
    width = 0.1234567
    env = Envelope(Shape.TRAPEZOID, mhz(48), 0.0, width)
    seq = PulseSequence([env], [env], span=0.2)
    assert abs(width / default_time_step(p, seq) % 1 - 0.5) < 0.49
    (_, rho), = propagate(g1, seq, p, [0.2])
    driven = piecewise_constant_oracle(g1, FieldSample(mhz(48), mhz(48)), p, width)
    ref = piecewise_constant_oracle(driven, FieldSample(), p, 0.2 - width)
    assert np.max(np.abs(rho - ref)) <= 1e-8


def test_step_starting_on_pulse_end_sees_no_field(g1):
    p = nv_params(900.0)
    seq = PulseSequence([Envelope(Shape.TRAPEZOID, mhz(48), 0.0, 0.1)],
                        [Envelope(Shape.TRAPEZOID, mhz(48), 0.0, 0.1)], span=0.3)
    (_, a), (_, b) = propagate(g1, seq, p, [0.1, 0.3])
    free = piecewise_constant_oracle(a, FieldSample(), p, 0.2)
    assert np.max(np.abs(b - free)) <= 1e-9


def test_step_halving_changes_populations_little(g1):
    p = nv_params(900.0, 0.3)
    seq = make_stirap_pair(mhz(48), 1.5, 1.2, 1.9)
    h = default_time_step(p, seq)
    (_, a), = propagate(g1, seq, p, [seq.span])
    (_, b), = propagate(g1, seq, p, [seq.span], dt=h / 2)
    assert np.max(np.abs(np.diag(a - b))) < 1e-7


def test_dark_state_stays_dark_for_ten_periods():
    omega_p, omega_m = mhz(46), mhz(30)
    p = nv_params(1500.0, decay=False)
    rho0 = projector(dark_state(omega_p, omega_m))
    period = 2 * math.pi / effective_rabi_frequency(omega_p, omega_m, p.delta_avg)
    seq = make_rabi_pair(omega_p, 10 * period, omega_m)
    for _, rho in propagate(rho0, seq, p, np.linspace(0, 10 * period, 21)):
        assert rho[2, 2].real <= 1e-6


def test_sample_times_snap_to_grid(g1):
    seq = make_rabi_pair(mhz(46), 1.0)
    out = propagate(g1, seq, nv_params(1500.0), [0.25, 0.5000000001])
    assert [t for t, _ in out] == pytest.approx([0.25, 0.5], abs=1e-12)


def test_sample_time_outside_span(g1):
    seq = make_rabi_pair(mhz(46), 1.0)
    with pytest.raises(InvalidWindowError):
        propagate(g1, seq, nv_params(1500.0), [1.5])
    with pytest.raises(InvalidWindowError):
        propagate(g1, seq, nv_params(1500.0), [-0.1])


def test_unsorted_sample_times(g1):
    with pytest.raises(ValueError):
        propagate(g1, make_rabi_pair(1.0, 1.0), nv_params(10.0), [0.5, 0.2])


def test_oversized_step_signals_nonconvergence(g1):
    seq = make_rabi_pair(mhz(46), 1.0)
    with pytest.raises(NonConvergenceError):
        propagate(g1, seq, nv_params(1500.0), [1.0], dt=0.01)


def test_batch_members_match_single_runs(g1):
    seq = make_stirap_pair(mhz(48), 0.5, 0.3, 0.7)
    members = [nv_params(900.0 + 50 * k, 0.2 * k) for k in range(5)]
    h = min(default_time_step(m, seq) for m in members)
    _, batch = propagate_batch(g1, seq, members, [0.35, seq.span], dt=h)
    for k, m in enumerate(members):
        _, single = propagate_batch(g1, seq, [m], [0.35, seq.span], dt=h)
        np.testing.assert_allclose(batch[k], single[0], atol=1e-14)


def test_rho0_must_be_accepted_per_member():
    seq = make_rabi_pair(mhz(10), 0.2)
    rho0 = np.stack([ground_state(0), ground_state(1)])
    _, out = propagate_batch(rho0, seq, [nv_params(500.0), nv_params(500.0)], [0.0])
    np.testing.assert_array_equal(out[:, 0], rho0)
