"""Causal-cone circuits of the binary MERA.

Qubit layout for ``T`` layers (``2T + 2`` qubits)::

    0 .. T-1        sites discarded on the left of the cone
    T, T+1          the central physical pair
    T+2 .. 2T+1     right-edge sites e_0 .. e_{T-1} (e_k lives on level k)

The top pair starts on qubits 0 and T+1. Each layer transition splits the
two coarse sites with isometries (the fresh ancillas are qubit ``T - k`` on
the left and edge ``e_k`` on the right) and then applies the disentangler
on the new central pair.
"""

from ..gates import Circuit, GateOp
from .params import MeraParams
from .tensors import disentangler_gates, isometry_gates, top_gates

MAX_LAYERS = 6


def _check_layers(params: MeraParams, n_layers):
    n_layers = params.n_layers if n_layers is None else int(n_layers)
    if not 1 <= n_layers <= MAX_LAYERS:
        raise ValueError(f"cone circuits support 1..{MAX_LAYERS} layers, got {n_layers}")
    if params.flavor == "finite_T" and n_layers != params.n_layers:
        raise ValueError(f"params have {params.n_layers} layers, circuit asked for {n_layers}")
    if params.flavor == "scale_invariant" and n_layers != params.n_layers:
        params = params.with_layers(n_layers)
    return params, n_layers


def _cone_ops(params: MeraParams, n_layers: int) -> list:
    t = n_layers
    ops = []
    if params.top is not None:
        ops += top_gates(params.top, 0, t + 1)
    left, right = 0, t + 1
    for k in reversed(range(t)):
        cell = params.cell(k)
        ops += isometry_gates(cell, left, t - k)
        ops += isometry_gates(cell, right, t + 2 + k)
        left = t - k
        ops += disentangler_gates(cell, left, right)
    return ops


def build_local_cone(params: MeraParams, n_layers: int = None, simplify_gates: bool = False) -> Circuit:
    """Circuit whose qubits ``T`` and ``T + 1`` carry physical sites (-1, 0).

    Args:
        params: MERA angles.
        n_layers: number of layers; defaults to ``params.n_layers``.
        simplify_gates: drop zero-angle gates and merge gates on fresh pairs.
    """
    params, t = _check_layers(params, n_layers)
    circ = Circuit(2 * t + 2, _cone_ops(params, t), [t, t + 1])
    return simplify(circ) if simplify_gates else circ


def build_boundary_cone(params: MeraParams, n_layers: int = None, simplify_gates: bool = True) -> Circuit:
    """Circuit preparing the right-edge sites of the cut between sites 0 and 1.

    Only the backward light cone of the ``T`` measured edge sites is kept and
    the qubits are renumbered; ``circuit.labels`` maps them back onto the
    local-cone layout.
    """
    params, t = _check_layers(params, n_layers)
    circ = Circuit(2 * t + 2, _cone_ops(params, t), list(range(t + 2, 2 * t + 2)))
    if simplify_gates:
        circ = simplify(circ)
    return prune(circ)


def prune(circ: Circuit) -> Circuit:
    """Keep only gates in the backward light cone of the measured qubits."""
    live = set(circ.measured_qubits)
    kept = []
    for op in reversed(circ.ops):
        if live.intersection(op.targets):
            kept.append(op)
            live.update(op.targets)
    kept.reverse()
    qubits = sorted(live)
    new_index = {q: i for i, q in enumerate(qubits)}
    ops = [
        GateOp(op.kind, tuple(new_index[q] for q in op.targets), op.theta, op.phi)
        for op in kept
    ]
    measured = [new_index[q] for q in circ.measured_qubits]
    labels = [circ.labels[q] for q in qubits]
    return Circuit(len(qubits), ops, measured, labels)


def simplify(circ: Circuit, atol: float = 1e-12) -> Circuit:
    """Drop zero-angle gates and fuse ``XY(a) YX(b)`` acting on a fresh ``|00>``.

    On ``|00>`` the two generators act identically, so the pair equals the
    single gate ``XY(a + b)``.
    """
    out = []
    for op in circ.ops:
        if abs(op.theta) < atol:
            continue
        if op.kind == "YX" and out and out[-1].kind == "XY" and out[-1].targets == op.targets:
            earlier = {q for prev in out[:-1] for q in prev.targets}
            if not earlier.intersection(op.targets):
                out[-1] = GateOp("XY", op.targets, out[-1].theta + op.theta)
                continue
        out.append(op)
    return Circuit(circ.n_qubits, out, list(circ.measured_qubits), list(circ.labels))


def cone_site_labels(n_layers: int) -> dict:
    """Role of every qubit of the local-cone layout."""
    t = n_layers
    roles = {q: "discard" for q in range(t)}
    roles[t] = "site_-1"
    roles[t + 1] = "site_0"
    for k in range(t):
        roles[t + 2 + k] = f"edge_{k}"
    return roles


def xx_count(circ: Circuit) -> int:
    return circ.lowered().count("XX")


def boundary_qubit_count(n_layers: int) -> int:
    return 2 * n_layers + 1


__all__ = [
    "MAX_LAYERS",
    "build_boundary_cone",
    "build_local_cone",
    "boundary_qubit_count",
    "cone_site_labels",
    "prune",
    "simplify",
    "xx_count",
]
