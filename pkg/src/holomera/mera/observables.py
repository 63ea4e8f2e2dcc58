"""Expectation values of MERA states.

Two pictures are supported:

* the infinite chain, through the descending maps of :mod:`.channels`;
* the periodic realization with ``6 * 2**T`` sites, simulated as a circuit.
  Only the backward light cone of the requested sites is simulated, so
  local quantities stay cheap even when the ring is too long for a dense
  statevector.

Sites of the periodic ring are numbered ``0 .. N-1``; the isometry of coarse
site ``p`` creates fine sites ``(2p, 2p + 1)`` and disentanglers act on
``(2m + 1, 2m + 2) mod N``.
"""

import itertools

import numpy as np

from ..gates import MAX_QUBITS, Circuit, reduced_density_matrix, run
from ..linalg import I2, PAULI, X, Y, Z, kron
from .channels import descend_pair, descend_triple, scale_invariant_triple
from .circuits import prune
from .params import MeraParams
from .tensors import disentangler_gates, isometry_gates, top_gates

TOP_SITES = 6


def tfim_bond_hamiltonian(g: float) -> np.ndarray:
    """Two-site term ``-XX - (g/2)(ZI + IZ)`` whose chain sum is the TFIM."""
    return -np.kron(X, X) - 0.5 * g * (np.kron(Z, I2) + np.kron(I2, Z))


def tfim_window_hamiltonian(g: float) -> np.ndarray:
    """Three-site operator whose expectation on the averaged window is the energy per site."""
    h = tfim_bond_hamiltonian(g)
    return 0.5 * (np.kron(h, I2) + np.kron(I2, h))


def average_triple(params: MeraParams) -> np.ndarray:
    """Site-averaged three-site density matrix of the infinite chain."""
    if params.flavor == "scale_invariant" and params.top is None:
        return scale_invariant_triple(params)
    return descend_triple(params)


def energy_per_site(params: MeraParams, g: float) -> float:
    rho = average_triple(params)
    return float(np.trace(rho @ tfim_window_hamiltonian(g)).real)


def pair_density(params: MeraParams) -> np.ndarray:
    """Density matrix of the central physical pair (sites -1, 0)."""
    return descend_pair(params)


def pair_observables(params: MeraParams) -> dict:
    """Single-site and nearest-neighbour expectations on the central pair.

    Single-site values are averaged over the two sites of the pair.
    """
    rho = pair_density(params)

    def ev(op):
        return float(np.trace(rho @ op).real)

    return {
        "x": 0.5 * (ev(np.kron(X, I2)) + ev(np.kron(I2, X))),
        "y": 0.5 * (ev(np.kron(Y, I2)) + ev(np.kron(I2, Y))),
        "z": 0.5 * (ev(np.kron(Z, I2)) + ev(np.kron(I2, Z))),
        "xx": ev(np.kron(X, X)),
        "yy": ev(np.kron(Y, Y)),
        "zz": ev(np.kron(Z, Z)),
    }


def magnetization_x(params: MeraParams) -> float:
    return pair_observables(params)["x"]


# --- periodic realization -------------------------------------------------


def periodic_circuit(params: MeraParams, n_layers: int = None) -> Circuit:
    """Preparation circuit of the periodic ``6 * 2**T``-site MERA.

    Every physical site is one qubit. A coarse site ``p`` at level ``k`` sits
    on qubit ``p * 2**k``; its isometry uses the qubit ``(2p + 1) * 2**(k-1)``
    as the fresh ancilla.
    """
    t = params.n_layers if n_layers is None else int(n_layers)
    if params.flavor == "scale_invariant" and t != params.n_layers:
        params = params.with_layers(t)
    n = TOP_SITES * 2**t
    ops = []
    top_stride = 2**t
    if params.top is not None:
        for m in range(TOP_SITES // 2):
            left = ((2 * m - 1) % TOP_SITES) * top_stride
            right = (2 * m) * top_stride
            ops += top_gates(params.top, left, right)
    for k in reversed(range(t)):
        cell = params.cell(k)
        coarse_stride = 2 ** (k + 1)
        fine_stride = 2**k
        n_coarse = n // coarse_stride
        for p in range(n_coarse):
            ops += isometry_gates(cell, p * coarse_stride, (2 * p + 1) * fine_stride)
        n_fine = 2 * n_coarse
        for m in range(n_coarse):
            a = (2 * m + 1) % n_fine
            b = (2 * m + 2) % n_fine
            ops += disentangler_gates(cell, a * fine_stride, b * fine_stride)
    return Circuit(n, ops, [])


def periodic_reduced_density(params: MeraParams, sites, n_layers: int = None) -> np.ndarray:
    """Reduced density matrix of ``sites`` (in the given order) of the periodic MERA."""
    circ = periodic_circuit(params, n_layers)
    sites = [s % circ.n_qubits for s in sites]
    circ.measured_qubits = list(sites)
    cone = prune(circ)
    if cone.n_qubits > MAX_QUBITS:
        raise ValueError(f"light cone of sites {sites} needs {cone.n_qubits} qubits (> {MAX_QUBITS})")
    return reduced_density_matrix(run(cone), cone.measured_qubits)


def periodic_state(params: MeraParams, n_layers: int = None) -> np.ndarray:
    circ = periodic_circuit(params, n_layers)
    if circ.n_qubits > MAX_QUBITS:
        raise ValueError(f"{circ.n_qubits}-site ring exceeds the dense limit")
    return run(circ)


def connected_correlator(params: MeraParams, op_a: str, op_b: str, site: int, distance: int,
                         n_layers: int = None) -> float:
    """``<A_i B_{i+d}> - <A_i><B_{i+d}>`` on the periodic realization."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    a, b = PAULI[op_a], PAULI[op_b]
    if distance == 0:
        rho = periodic_reduced_density(params, [site], n_layers)
        return float((np.trace(rho @ a @ b) - np.trace(rho @ a) * np.trace(rho @ b)).real)
    rho = periodic_reduced_density(params, [site, site + distance], n_layers)
    joint = np.trace(rho @ np.kron(a, b))
    ra = np.trace(rho @ np.kron(a, I2))
    rb = np.trace(rho @ np.kron(I2, b))
    return float((joint - ra * rb).real)


def causal_range(n_layers: int, support: int = 1) -> int:
    """Smallest separation at which connected correlators must vanish."""
    return 3 * 2**n_layers - 3 + support


def correlator_table(params: MeraParams, site: int, distance: int, n_layers: int = None) -> dict:
    """All connected Pauli-pair correlators for one site pair."""
    rho = periodic_reduced_density(params, [site, site + distance], n_layers)
    out = {}
    for pa, pb in itertools.product("XYZ", repeat=2):
        a, b = PAULI[pa], PAULI[pb]
        joint = np.trace(rho @ kron(a, b))
        out[pa + pb] = float((joint - np.trace(rho @ kron(a, I2)) * np.trace(rho @ kron(I2, b))).real)
    return out


def half_chain_spectrum(edge_rho) -> np.ndarray:
    """Half-chain spectrum ``{lam_i * lam_j}`` from one edge density matrix, sorted descending.

    A half chain of the ring has two cuts; for a reflection-symmetric MERA both
    edges carry the same spectrum and the half-chain state factorizes over them.
    """
    lam = np.clip(np.linalg.eigvalsh(np.asarray(edge_rho)), 0.0, None)
    return np.sort(np.outer(lam, lam).ravel())[::-1]


def periodic_half_chain_spectrum(params: MeraParams, n_layers: int = None, start: int = 1) -> np.ndarray:
    """Descending eigenvalues of the ring's half ``start .. start + N/2 - 1`` (dense rings only)."""
    psi = periodic_state(params, n_layers)
    n = int(np.log2(psi.size))
    sites = [(start + k) % n for k in range(n // 2)]
    rho = reduced_density_matrix(psi, sites)
    return np.sort(np.linalg.eigvalsh(rho))[::-1]
