import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from holomera.gates import (
    MAX_QUBITS,
    Circuit,
    GateOp,
    GateTiming,
    apply,
    basis_rotation,
    gate_matrix,
    lower_to_native,
    measure_distribution,
    reduced_density_matrix,
    run,
    schedule,
    unitary_fidelity,
    zero_state,
)
from holomera.linalg import X, Y, Z, kron

angles = st.floats(-2 * np.pi, 2 * np.pi, allow_nan=False)


@pytest.mark.parametrize("kind,targets", [("R", (0,)), ("Rz", (0,)), ("Ry", (0,)), ("XX", (0, 1)),
                                          ("XY", (0, 1)), ("YX", (0, 1))])
@given(theta=angles, phi=angles)
def test_gates_are_unitary(kind, targets, theta, phi):
    u = gate_matrix(GateOp(kind, targets, theta, phi))
    assert np.allclose(u @ u.conj().T, np.eye(len(u)), atol=1e-12)


@pytest.mark.parametrize("kind", ["XY", "YX", "Ry", "XX", "R"])
@given(theta=angles)
def test_lowering_preserves_unitary_up_to_phase(kind, theta):
    targets = (0,) if kind in ("Ry", "R") else (0, 1)
    op = GateOp(kind, targets, theta, 0.3)
    n = len(targets)
    direct = Circuit(n, [op]).unitary()
    lowered = Circuit(n, lower_to_native(op)).unitary()
    assert unitary_fidelity(direct, lowered) == pytest.approx(1.0, abs=1e-12)


def test_gate_matrix_values():
    assert np.allclose(gate_matrix(GateOp("XX", (0, 1), np.pi)), -1j * kron(X, X))
    assert np.allclose(gate_matrix(GateOp("R", (0,), np.pi, np.pi / 2)), -1j * Y)
    assert np.allclose(gate_matrix(GateOp("Rz", (0,), np.pi)), -1j * Z)


@pytest.mark.parametrize("bad", [("XX", (0, 0)), ("XX", (0,)), ("R", (0, 1)), ("foo", (0,))])
def test_invalid_gates(bad):
    with pytest.raises(ValueError):
        GateOp(bad[0], bad[1], 0.1)


def test_circuit_bounds_and_limits():
    with pytest.raises(ValueError):
        Circuit(2, [GateOp("XX", (0, 2), 0.1)])
    with pytest.raises(ValueError):
        apply(np.zeros(2 ** (MAX_QUBITS + 1)), [])


def test_json_roundtrip():
    c = Circuit(3, [GateOp("XY", (0, 1), 0.2), GateOp("R", (2,), 0.3, 0.1)], [0, 2])
    back = Circuit.from_json(c.to_json())
    assert back.ops == c.ops and back.measured_qubits == [0, 2]
    assert json.loads(c.to_json())["n_qubits"] == 3


def test_schedule_is_serial_and_virtual_rz_is_free():
    timing = GateTiming(1e-5, 2e-4, 5e-6)
    c = Circuit(2, [GateOp("R", (0,), 0.1), GateOp("Rz", (1,), 0.2), GateOp("XX", (0, 1), 0.3)])
    s = schedule(c, timing)
    assert np.allclose(s, [(0.0, 1e-5), (1.5e-5, 0.0), (1.5e-5, 2e-4)], rtol=0, atol=1e-15)


def test_bell_state_distribution_and_rdm():
    c = Circuit(2, [GateOp("XX", (0, 1), -np.pi / 2)])
    psi = run(c)
    assert np.allclose(measure_distribution(psi, [0, 1]), [0.5, 0, 0, 0.5])
    assert np.allclose(reduced_density_matrix(psi, [0]), np.eye(2) / 2)


def test_measure_distribution_order():
    psi = run(Circuit(2, [GateOp("R", (1,), np.pi, 0)]))  # |01>
    assert np.allclose(measure_distribution(psi, [0, 1]), [0, 1, 0, 0])
    assert np.allclose(measure_distribution(psi, [1, 0]), [0, 0, 1, 0])


@pytest.mark.parametrize("basis,prep", [("X", ("Ry", np.pi / 2)), ("Y", ("R", -np.pi / 2)), ("Z", ("R", 0.0))])
def test_basis_rotation_maps_plus_eigenstate_to_zero(basis, prep):
    kind, theta = prep
    psi = apply(zero_state(1), [GateOp(kind, (0,), theta, 0.0)])
    out = basis_rotation(basis) @ psi
    assert abs(out[0]) ** 2 == pytest.approx(1.0)


def test_batched_apply_matches_loop(rng):
    states = rng.normal(size=(4, 8)) + 1j * rng.normal(size=(4, 8))
    from holomera.gates import apply_matrix
    us = np.stack([gate_matrix(GateOp("XX", (0, 1), t)) for t in rng.uniform(0, 3, 4)])
    batched = apply_matrix(states, us, (2, 0))
    for b in range(4):
        assert np.allclose(batched[b], apply_matrix(states[b], us[b], (2, 0)))
