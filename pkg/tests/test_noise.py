import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, linalg, stats

from holomera.gates import Circuit, GateOp, measure_distribution, run
from holomera.linalg import X, Z
from holomera.noise import (
    SOURCES,
    CalibrationError,
    NoiseCalibration,
    contrast_model,
    decay_parameter,
    dephasing_prob,
    exhaustive_mapping,
    finish_noisy,
    greedy_mapping,
    mean_dark_photons,
    noisy_xx_matrix,
    optimize_ion_mapping,
    participation_factors,
    perturb_gate,
    photon_count_model,
    readout_confusion,
    sample_phonon_trajectory,
    simulate_noisy,
    spam_channel,
    time_average_moments,
    x_flip_prob,
)

PAPER = NoiseCalibration.paper()


# --- calibration ----------------------------------------------------------------


def test_bundled_calibration_values():
    assert (PAPER.p, PAPER.p_d, PAPER.p_b) == (1e-4, 1.6e-3, 4.5e-3)
    assert PAPER.n_bar_0 == 409 and PAPER.n_dot == 133e3 and PAPER.T2_star == 0.3
    assert PAPER.omega_0 == pytest.approx(2 * np.pi * 241.8e3)


def test_calibration_roundtrip(tmp_path):
    path = tmp_path / "cal.json"
    path.write_text(json.dumps(PAPER.to_dict()))
    assert NoiseCalibration.load(path) == PAPER


@pytest.mark.parametrize("kwargs", [
    {"p": 1.5}, {"T2_star": 0}, {"delta_n": 0.5}, {"stark_mode": "sometimes"},
    {"sources": ("spam", "cosmic_rays")}, {"b": (0.1, 0.2)}, {"sigma_phi": {"default": -1}},
])
def test_invalid_calibration(kwargs):
    with pytest.raises(CalibrationError):
        NoiseCalibration(**kwargs)


def test_unknown_calibration_field():
    with pytest.raises(CalibrationError):
        NoiseCalibration.from_dict({"p": 1e-4, "laser_colour": "blue"})


def test_missing_table_entry_is_explicit():
    cal = NoiseCalibration(p_x_table={"3,4": 1e-3}, sigma_phi={"3": 0.01})
    assert cal.x_flip_table(4, 3) == 1e-3
    with pytest.raises(CalibrationError):
        cal.x_flip_table(0, 1)
    with pytest.raises(CalibrationError):
        cal.stark_sigma(0)


def test_com_mode_participation():
    b = participation_factors(15)
    assert np.allclose(b**2, 1 / 15)


# --- simple channels -------------------------------------------------------------


@pytest.mark.parametrize("t,expected", [(0.0, 0.0), (0.3, 0.5), (1e-3, 1 / 600), (10.0, 0.5)])
def test_dephasing_prob(t, expected):
    assert dephasing_prob(PAPER, t) == pytest.approx(expected)


def test_spam_channel_values():
    assert spam_channel(PAPER, "prep") == 1e-4
    assert spam_channel(PAPER, "measure_dark") == pytest.approx(1.5e-3)
    assert spam_channel(PAPER, "measure_bright") == pytest.approx(4.4e-3)
    assert spam_channel(replace(PAPER, p=1.6e-3), "measure_dark") == 0.0
    with pytest.raises(CalibrationError):
        spam_channel(replace(PAPER, p=5e-3), "prep")
    assert np.allclose(readout_confusion(PAPER).sum(axis=0), 1)


@given(st.floats(0, np.pi))
def test_x_flip_linear_in_angle(theta):
    assert x_flip_prob(PAPER, 3, 4, 2 * theta) == pytest.approx(min(2 * x_flip_prob(PAPER, 3, 4, theta), 0.5))


def test_x_flip_half_angle():
    assert x_flip_prob(PAPER, 3, 4, np.pi / 4) == pytest.approx(x_flip_prob(PAPER, 3, 4, np.pi / 2) / 2)


def test_decay_parameter():
    assert decay_parameter(PAPER, 7, 0) == 0
    cal2 = replace(PAPER, b=tuple(2 * np.array(PAPER.b)))
    assert decay_parameter(cal2, 7, 409) == pytest.approx(4 * decay_parameter(PAPER, 7, 409))
    assert decay_parameter(PAPER, 7, 409) == pytest.approx(409 * 3.9066e-5, rel=1e-3)
    with pytest.raises(ValueError):
        decay_parameter(PAPER, 7, -1)


# --- phonon walk ------------------------------------------------------------------


def test_walk_without_heating_is_frozen():
    cal = replace(PAPER, n_dot=0.0, delta_n=1.0)
    for method in ("event", "discrete"):
        traj = sample_phonon_trajectory(cal, [(0, 1e-3), (2e-3, 1e-3)], 4, n_paths=50, method=method)
        assert np.allclose(traj.n_t, traj.n_t[:, :1])


@pytest.mark.parametrize("method", ["event", "discrete"])
def test_walk_mean_heating(method):
    traj = sample_phonon_trajectory(PAPER, [(1e-3, 0.0)], 1, n_paths=20000, method=method)
    n = traj.n_avg[:, 0]
    assert np.all(traj.n_t >= 0)
    assert n.mean() == pytest.approx(542, abs=4 * n.std() / np.sqrt(n.size))


def test_walk_stays_exponential():
    traj = sample_phonon_trajectory(PAPER, [(1e-3, 0.0)], 2, n_paths=20000)
    n = traj.n_avg[:, 0]
    assert stats.kstest(n, "expon", args=(0, PAPER.n_bar(1e-3))).statistic < 0.015


def test_walk_is_deterministic():
    a = sample_phonon_trajectory(PAPER, [(0, 2e-4)], 9, n_paths=10)
    b = sample_phonon_trajectory(PAPER, [(0, 2e-4)], 9, n_paths=10)
    assert np.array_equal(a.n_avg, b.n_avg)


def test_window_average_mean():
    dt = 1e-3
    traj = sample_phonon_trajectory(PAPER, [(0.0, dt)], 5, n_paths=20000)
    mu, var = time_average_moments(PAPER, 0.0, dt)
    n = traj.n_avg[:, 0]
    assert n.mean() == pytest.approx(mu, abs=4 * np.sqrt(var / n.size))


def test_moment_forms_agree_at_short_windows():
    a = time_average_moments(PAPER, 0.0, 2e-4, "paper")[1]
    b = time_average_moments(PAPER, 0.0, 2e-4, "exact")[1]
    assert a == pytest.approx(b, rel=2e-3)
    with pytest.raises(ValueError):
        time_average_moments(PAPER, 0, 1e-3, "guess")


# --- gate perturbations ----------------------------------------------------------------


def test_perturb_gate_noise_free_is_identity():
    cal = replace(PAPER, sigma_phi={"default": 0.0}, p_x_table={"default": 0.0}, sources=("stark", "x_flip"))
    op = GateOp("XX", (0, 1), 0.7)
    out = perturb_gate(op, 500.0, cal, np.random.default_rng(0))
    assert len(out) == 1 and np.allclose(out[0].matrix, linalg.expm(-0.35j * np.kron(X, X)))
    assert perturb_gate(GateOp("R", (0,), 0.4, 0.1), 500.0, cal.with_sources(), None)[0].theta == 0.4


def test_perturb_gate_axial_scaling():
    cal = PAPER.with_sources("axial")
    coeff = cal.decay_coefficient(3) + cal.decay_coefficient(5)
    out = perturb_gate(GateOp("XX", (0, 1), 1.0), 400.0, cal, None, ions=(3, 5))
    assert out[0].theta == pytest.approx(1 - 400 * coeff)
    out = perturb_gate(GateOp("R", (0,), 1.0, 0.2), 400.0, cal, None, ions=(3,))
    assert out[0].theta == pytest.approx(1 - 400 * cal.decay_coefficient(3))


def test_perturb_gate_rejects_non_native():
    with pytest.raises(ValueError):
        perturb_gate(GateOp("YY", (0, 1), 0.3), 1.0, PAPER, np.random.default_rng(0))


@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))
@settings(max_examples=25)
def test_noisy_xx_matches_expm(theta, pi, pj):
    gen = theta * np.kron(X, X) + pi * np.kron(Z, np.eye(2)) + pj * np.kron(np.eye(2), Z)
    assert np.allclose(noisy_xx_matrix(theta, pi, pj), linalg.expm(-0.5j * gen), atol=1e-12)


def test_stark_phase_example():
    cal = replace(PAPER, sigma_phi={"default": 0.03}, sources=("stark",))
    out = perturb_gate(GateOp("XX", (0, 1), np.pi / 2), 0.0, cal, None, ions=(2, 3), stark_s=1.0)
    gen = np.pi / 2 * np.kron(X, X) + 0.03 * (np.kron(Z, np.eye(2)) + np.kron(np.eye(2), Z))
    assert np.abs(out[0].matrix - linalg.expm(-0.5j * gen)).max() < 1e-12


def test_x_flip_frequency():
    cal = replace(PAPER, p_x_table={"default": 0.2}, sources=("x_flip",))
    rng = np.random.default_rng(1)
    n = 4000
    flips = sum(len(perturb_gate(GateOp("XX", (0, 1), np.pi / 4), 0.0, cal, rng)) - 1 for _ in range(n))
    # two ions, each flipped with probability 0.1
    assert flips == pytest.approx(2 * n * 0.1, abs=4 * np.sqrt(2 * n * 0.09))


# --- contrast model --------------------------------------------------------------------


def test_contrast_without_decay_is_undamped():
    n = np.arange(1, 20)
    assert np.allclose(contrast_model(n, 0.3, 0.0, 2.0), (1 - np.cos(0.3 * n)) / 2)


@pytest.mark.parametrize("form", ["paper", "gamma"])
def test_contrast_damps_to_half(form):
    assert contrast_model(1e7, np.pi / 2, 0.05, 1.5, form) == pytest.approx(0.5, abs=1e-3)


def test_gamma_form_is_characteristic_function():
    # E[sin^2(N theta (1 - eps u) / 2)] for u ~ Gamma(alpha, 1/alpha)
    n, theta, eps, alpha = 7, np.pi / 2, 0.03, 1.7
    dist = stats.gamma(alpha, scale=1 / alpha)
    val = integrate.quad(lambda u: np.sin(n * theta * (1 - eps * u) / 2) ** 2 * dist.pdf(u), 0, 60, limit=200)[0]
    assert contrast_model(n, theta, eps, alpha, "gamma") == pytest.approx(val, abs=1e-8)


def test_contrast_validation():
    with pytest.raises(ValueError):
        contrast_model(0, 1.0, 0.1, 1.0)
    with pytest.raises(ValueError):
        contrast_model(3, 1.0, 0.1, 1.0, "lorentz")


# --- photon counting ----------------------------------------------------------------


@pytest.mark.parametrize("state", ["bright", "dark"])
def test_photon_model_normalized(state):
    n = np.arange(200)
    assert photon_count_model(state, n, 1e-3, PAPER).sum() == pytest.approx(1.0, abs=1e-6)


def test_bright_without_pumping_is_poisson():
    cal = replace(PAPER, R_b=0.0)
    n = np.arange(120)
    assert np.allclose(photon_count_model("bright", n, 1e-3, cal), stats.poisson.pmf(n, cal.eta_gamma * 1e-3))


def test_dark_short_window_has_no_counts():
    p = photon_count_model("dark", np.arange(5), 1e-9, PAPER)
    assert p[0] == pytest.approx(1.0, abs=1e-6)


def test_dark_model_matches_quadrature():
    tau, n = 8e-4, 6
    a, r = PAPER.eta_gamma, PAPER.R_d
    val = integrate.quad(lambda t: stats.poisson.pmf(n, a * (tau - t)) * r * np.exp(-r * t), 0, tau)[0]
    assert photon_count_model("dark", n, tau, PAPER) == pytest.approx(val, rel=1e-9)


def test_mean_dark_photons():
    assert mean_dark_photons(0.0, 1e-4, PAPER) == 0.0
    pb_inf = 1 / (PAPER.R_b / PAPER.R_d + 1)
    taus = np.array([1e-3, 2e-3, 3e-3])
    vals = mean_dark_photons(taus, pb_inf, PAPER)
    assert np.allclose(np.diff(vals), PAPER.eta_gamma * pb_inf * 1e-3)


# --- ion mapping ---------------------------------------------------------------------


def _chain_circuit(n, idle=None):
    ops = []
    for q in range(n - 1):
        if idle not in (q, q + 1):
            ops += [GateOp("XX", (q, q + 1), np.pi / 2), GateOp("R", (q,), 0.4, 0.0)]
    return Circuit(n, ops, list(range(n)))


def test_uniform_calibration_any_mapping_ties():
    cal = NoiseCalibration()
    perm, cost = exhaustive_mapping(_chain_circuit(3), cal, 5)
    assert cost == pytest.approx(exhaustive_mapping(_chain_circuit(3), cal, 3)[1])


def test_hot_ion_goes_to_idle_qubit():
    b = np.full(6, 1 / np.sqrt(6))
    b[2] *= np.sqrt(10)
    cal = NoiseCalibration(n_ions=6, b=tuple(b))
    circ = _chain_circuit(6, idle=5)
    perm = optimize_ion_mapping(circ, cal)
    assert perm[5] == 2


def test_greedy_close_to_exhaustive():
    b = participation_factors(12, quartic=0.4)
    cal = NoiseCalibration(n_ions=12, b=tuple(b),
                           p_x_table={"default": 2e-3, "5,6": 1e-2, "4,5": 1e-4},
                           sigma_phi={"default": 0.02, "6": 0.05})
    circ = Circuit(6, [GateOp("XX", (0, 1), 1.0), GateOp("XX", (1, 2), 0.5), GateOp("XX", (2, 3), 1.5),
                       GateOp("XX", (3, 4), 0.3), GateOp("XX", (4, 5), 1.2), GateOp("XX", (0, 5), 0.8),
                       GateOp("R", (2,), 1.0, 0.0)], list(range(6)))
    _, exact = exhaustive_mapping(circ, cal, 12)
    _, greedy = greedy_mapping(circ, cal, 12)
    assert greedy <= exact * 1.05
    assert optimize_ion_mapping(circ, cal, seed=1) == optimize_ion_mapping(circ, cal, seed=1)


# --- batched noisy execution -------------------------------------------------------


def _bell():
    return Circuit(2, [GateOp("XX", (0, 1), np.pi / 2)], [0, 1])


def test_noise_free_simulation_is_ideal():
    cal = PAPER.with_sources()
    run_ = simulate_noisy(_bell(), cal, 3, np.random.default_rng(0))
    probs = finish_noisy(run_, "ZZ", np.random.default_rng(0))
    assert np.allclose(probs, measure_distribution(run(_bell()), [0, 1])[None])


@pytest.mark.parametrize("source", SOURCES)
def test_every_source_gives_valid_distributions(source):
    cal = replace(PAPER.with_sources(source), p_x_table={"default": 0.05}, sigma_phi={"default": 0.2})
    run_ = simulate_noisy(_bell(), cal, 64, np.random.default_rng(3))
    probs = finish_noisy(run_, "XX", np.random.default_rng(4))
    assert probs.shape == (64, 4)
    assert np.all(probs >= -1e-12) and np.allclose(probs.sum(axis=1), 1)
