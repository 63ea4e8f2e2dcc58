"""Gate content of the MERA unit cell and the matrices it defines.

Isometry on (coarse wire ``c``, fresh ancilla ``a``)::

    Ry(iso_ry_in) on c, Ry(iso_ry_anc) on a, XY(iso_xy) on (c, a), YX(iso_yx) on (c, a)

The coarse wire becomes the left child and the ancilla the right child.
Disentangler on (left, right)::

    XY(dis_xy), YX(dis_yx)

Top two-site state: ``XY(top_xy)`` on ``|00>`` followed by ``Ry`` on each site.
All gates are real, so every MERA state is real (time-reversal symmetric);
with the two Ry angles at zero the unit cell commutes with the global
spin flip ``prod_i Z_i``.
"""

import numpy as np

from ..gates import GateOp, gate_matrix

_KET0 = np.array([1.0, 0.0])


def isometry_gates(cell, coarse: int, ancilla: int) -> list:
    return [
        GateOp("Ry", (coarse,), cell[0]),
        GateOp("Ry", (ancilla,), cell[1]),
        GateOp("XY", (coarse, ancilla), cell[2]),
        GateOp("YX", (coarse, ancilla), cell[3]),
    ]


def disentangler_gates(cell, left: int, right: int) -> list:
    return [GateOp("XY", (left, right), cell[4]), GateOp("YX", (left, right), cell[5])]


def top_gates(top, left: int, right: int) -> list:
    return [
        GateOp("XY", (left, right), top[0]),
        GateOp("Ry", (left,), top[1]),
        GateOp("Ry", (right,), top[2]),
    ]


def _two_qubit_product(ops) -> np.ndarray:
    u = np.eye(4, dtype=complex)
    for op in ops:
        m = gate_matrix(op)
        if len(op.targets) == 1:
            m = np.kron(m, np.eye(2)) if op.targets[0] == 0 else np.kron(np.eye(2), m)
        u = m @ u
    return u


def isometry_unitary(cell) -> np.ndarray:
    return _two_qubit_product(isometry_gates(cell, 0, 1))


def isometry_matrix(cell) -> np.ndarray:
    """4x2 isometry: column ``s`` is the two-site output for coarse input ``s``."""
    u = isometry_unitary(cell)
    return u @ np.kron(np.eye(2), _KET0[:, None])


def disentangler_matrix(cell) -> np.ndarray:
    return _two_qubit_product(disentangler_gates(cell, 0, 1))


def top_state(top) -> np.ndarray:
    """Two-site top state; ``|00>`` when ``top`` is None."""
    psi = np.zeros(4, dtype=complex)
    psi[0] = 1.0
    if top is None:
        return psi
    return _two_qubit_product(top_gates(top, 0, 1)) @ psi


def pair_transition(cell) -> np.ndarray:
    """16x4 map from the central coarse pair to fine sites (-2, -1, 0, 1).

    Both coarse sites are split by isometries and the disentangler acts on
    the inner fine pair (-1, 0).
    """
    w = isometry_matrix(cell)
    u = disentangler_matrix(cell)
    return np.kron(np.eye(2), np.kron(u, np.eye(2))) @ np.kron(w, w)


def triple_transition(cell) -> np.ndarray:
    """64x8 map from a coarse 3-site window to its six fine sites.

    The two inner disentanglers, on fine pairs (1, 2) and (3, 4), are applied;
    the outer ones would involve sites outside the window.
    """
    w = isometry_matrix(cell)
    u = disentangler_matrix(cell)
    i2 = np.eye(2)
    return np.kron(i2, np.kron(u, np.kron(u, i2))) @ np.kron(w, np.kron(w, w))
