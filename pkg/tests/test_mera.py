import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from holomera.gates import reduced_density_matrix, run
from holomera.mera import channels as ch
from holomera.mera.circuits import boundary_qubit_count, build_boundary_cone, build_local_cone, simplify, xx_count
from holomera.mera.observables import (
    causal_range,
    connected_correlator,
    energy_per_site,
    half_chain_spectrum,
    periodic_half_chain_spectrum,
    pair_observables,
    periodic_circuit,
    periodic_reduced_density,
)
from holomera.mera.params import MeraParams
from holomera.mera.tensors import disentangler_matrix, isometry_matrix, pair_transition, top_state, triple_transition

from conftest import CRITICAL_CELL, random_cell

seeds = st.integers(0, 2**31 - 1)


def random_params(seed, n_layers, top=True):
    rng = np.random.default_rng(seed)
    cells = rng.uniform(-np.pi, np.pi, (n_layers, 6))
    return MeraParams(cells, top=rng.uniform(-np.pi, np.pi, 3) if top else None)


# --- params -----------------------------------------------------------------


def test_params_roundtrip():
    p = random_params(3, 2)
    q = MeraParams.from_json(p.to_json())
    assert np.allclose(q.cells, p.cells) and np.allclose(q.top, p.top)


def test_params_require_version():
    d = random_params(3, 2).to_dict()
    d.pop("version")
    with pytest.raises((KeyError, ValueError)):
        MeraParams.from_dict(d)


@pytest.mark.parametrize("kwargs", [
    {"cells": np.zeros((2, 5))},
    {"cells": np.zeros((2, 6)), "n_layers": 3},
    {"cells": np.zeros((2, 6)), "flavor": "scale_invariant"},
    {"cells": np.full((1, 6), np.nan)},
])
def test_params_validation(kwargs):
    with pytest.raises(ValueError):
        MeraParams(**kwargs)


def test_scale_invariant_stacks_one_cell():
    p = MeraParams(CRITICAL_CELL[None], n_layers=4, flavor="scale_invariant")
    assert all(np.allclose(p.cell(k), CRITICAL_CELL) for k in range(4))
    with pytest.raises(IndexError):
        p.cell(4)


# --- tensors ------------------------------------------------------------------


@given(seeds)
def test_tensors_are_isometric(seed):
    cell = random_cell(np.random.default_rng(seed))
    w = isometry_matrix(cell)
    u = disentangler_matrix(cell)
    assert np.allclose(w.conj().T @ w, np.eye(2))
    assert np.allclose(u.conj().T @ u, np.eye(4))
    for psi in (pair_transition(cell), triple_transition(cell)):
        assert np.allclose(psi.conj().T @ psi, np.eye(psi.shape[1]))
    assert np.isclose(np.linalg.norm(top_state(np.random.default_rng(seed).uniform(-3, 3, 3))), 1)


def test_identity_cell_keeps_product_state():
    p = MeraParams.identity(3)
    assert energy_per_site(p, 0.7) == pytest.approx(-0.7)
    obs = pair_observables(p)
    assert obs["z"] == pytest.approx(1.0) and obs["xx"] == pytest.approx(0.0)


# --- channels -----------------------------------------------------------------


@given(seeds)
def test_layer_channel_is_cptp(seed):
    cell = random_cell(np.random.default_rng(seed))
    chan = ch.layer_channel(cell)
    ch.verify_cptp(chan.superop, 4, 4)
    rho = ch.steady_state(chan)
    assert np.allclose(chan(rho), rho, atol=1e-9)
    assert np.linalg.eigvalsh(rho).min() > -1e-9


def test_verify_cptp_rejects_non_tp():
    with pytest.raises(ch.ChannelError):
        ch.verify_cptp(2 * np.eye(16), 4, 4)


@pytest.mark.parametrize("n_layers", [1, 2, 3, 4, 5])
def test_channel_matches_cone_marginals(n_layers):
    p = random_params(10 + n_layers, n_layers)
    cone = build_local_cone(p)
    rho_circ = reduced_density_matrix(run(cone), cone.measured_qubits)
    assert np.abs(ch.descend_pair(p) - rho_circ).max() < 1e-10


@pytest.mark.parametrize("n_layers", [1, 2, 3, 4])
def test_doubled_map_purity_matches_statevector(n_layers):
    p = random_params(20 + n_layers, n_layers)
    cone = build_boundary_cone(p)
    rho = reduced_density_matrix(run(cone), cone.measured_qubits)
    assert ch.half_chain_purity(p) == pytest.approx(np.trace(rho @ rho).real, abs=1e-9)


def test_average_descending_superop_matches_fast_path(rng):
    cell = random_cell(rng)
    rho = ch.top_triple_density(rng.uniform(-3, 3, 3))
    slow = ch.average_descending(cell) @ rho.reshape(-1)
    assert np.allclose(slow.reshape(8, 8), ch.descend_triple_once(cell, rho), atol=1e-14)


def test_scale_invariant_triple_is_fixed_point(critical_cell):
    rho = ch.scale_invariant_triple(critical_cell)
    assert np.allclose(ch.descend_triple_once(CRITICAL_CELL, rho), rho, atol=1e-10)
    assert np.trace(rho).real == pytest.approx(1.0)


def test_critical_doubled_map_eigenvalue(critical_cell):
    d0 = ch.doubled_map(critical_cell).dominant
    assert -8 * np.log2(abs(d0)) == pytest.approx(0.4755, abs=2e-3)


# --- circuits -----------------------------------------------------------------


@pytest.mark.parametrize("n_layers,n_xx", [(1, 3), (2, 9), (3, 15), (4, 21), (5, 27)])
def test_boundary_cone_size(n_layers, n_xx):
    p = MeraParams(CRITICAL_CELL[None], n_layers=n_layers, top=np.array([0.3, 0.2, 0.1]), flavor="scale_invariant")
    cone = build_boundary_cone(p)
    assert cone.n_qubits == boundary_qubit_count(n_layers) == 2 * n_layers + 1
    assert xx_count(cone) == n_xx
    assert len(cone.measured_qubits) == n_layers


def test_boundary_cone_labels_point_at_edges():
    p = random_params(5, 3)
    cone = build_boundary_cone(p)
    assert [cone.labels[q] for q in cone.measured_qubits] == [5, 6, 7]


@given(seeds)
def test_simplify_preserves_state(seed):
    p = random_params(seed, 2)
    circ = build_local_cone(p)
    assert np.allclose(run(simplify(circ)), run(circ), atol=1e-12) or np.isclose(
        abs(np.vdot(run(simplify(circ)), run(circ))), 1)


# --- periodic realization -----------------------------------------------------


def test_periodic_ring_has_six_times_two_to_t_sites():
    assert periodic_circuit(random_params(1, 2)).n_qubits == 24


@pytest.mark.parametrize("n_layers", [1, 2])
def test_periodic_pair_matches_infinite_chain(n_layers):
    p = random_params(40 + n_layers, n_layers)
    rho = periodic_reduced_density(p, [-1, 0])
    assert np.abs(rho - ch.descend_pair(p)).max() < 1e-12


def test_causal_range_formula():
    assert causal_range(1) == 4
    assert causal_range(3) == 22
    assert causal_range(3, support=2) == 23


def test_correlator_inside_range_nonzero_and_beyond_zero():
    p = random_params(7, 1)
    assert max(abs(connected_correlator(p, a, b, 0, 2)) for a in "XZ" for b in "XZ") > 1e-3
    assert abs(connected_correlator(p, "Z", "Z", 0, causal_range(1))) < 1e-12


def test_half_chain_spectrum_factorizes_over_two_cuts():
    # one bond qubit per cut at T=1: rank 4 and the spectrum is {a_i b_j}
    lam = periodic_half_chain_spectrum(random_params(8, 1))
    assert np.allclose(lam[4:], 0, atol=1e-10)
    a, b, c, d = lam[:4]
    assert lam.sum() == pytest.approx(1.0)
    assert a * d == pytest.approx(b * c, rel=1e-8)


@pytest.mark.parametrize("edge,expected", [
    (np.diag([1.0, 0.0]), [1.0, 0.0, 0.0, 0.0]),
    (np.diag([0.9, 0.1]), [0.81, 0.09, 0.09, 0.01]),
])
def test_half_chain_spectrum_from_edge(edge, expected):
    assert np.allclose(half_chain_spectrum(edge), expected)


def test_half_chain_spectrum_matches_ring_for_optimized_state():
    from holomera.optimizer import OptimizerConfig, TfimSpec, optimize_finite

    p = optimize_finite(TfimSpec(g=1.5), 1, OptimizerConfig(method="finite_diff_lbfgs", restarts=2)).params
    cone = build_boundary_cone(p)
    edge = reduced_density_matrix(run(cone), cone.measured_qubits)
    lam = half_chain_spectrum(edge)
    ring = periodic_half_chain_spectrum(p)
    assert np.allclose(ring[: lam.size], lam, atol=1e-10)
    assert np.allclose(ring[lam.size:], 0, atol=1e-10)
