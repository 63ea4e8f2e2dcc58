"""Native trapped-ion gates, symmetry-respecting MERA gates and circuits.

Gate definitions (all angles in radians):

* ``R(theta, phi) = exp(-i theta (X cos phi + Y sin phi) / 2)``
* ``Rz(theta) = exp(-i theta Z / 2)`` (virtual, zero duration)
* ``XX(theta) = exp(-i theta X X / 2)``
* ``XY(theta) = exp(-i theta X Y / 2)``, ``YX(theta) = exp(-i theta Y X / 2)``
* ``Ry(theta) = exp(-i theta Y / 2)``

Qubit 0 is the most significant bit of a statevector index.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import I2, X, Y, Z, kron

NATIVE_KINDS = ("R", "Rz", "XX")
DERIVED_KINDS = ("XY", "YX", "Ry")
TWO_QUBIT_KINDS = ("XX", "XY", "YX")
ALL_KINDS = NATIVE_KINDS + DERIVED_KINDS
MAX_QUBITS = 16

_GENERATORS = {
    "Rz": Z,
    "Ry": Y,
    "XX": kron(X, X),
    "XY": kron(X, Y),
    "YX": kron(Y, X),
}


@dataclass(frozen=True)
class GateOp:
    kind: str
    targets: tuple
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        targets = tuple(int(t) for t in np.atleast_1d(self.targets))
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "theta", float(self.theta))
        object.__setattr__(self, "phi", float(self.phi))
        n_expected = 2 if self.kind in TWO_QUBIT_KINDS else 1
        if len(targets) != n_expected:
            raise ValueError(f"{self.kind} acts on {n_expected} qubit(s), got {targets}")
        if n_expected == 2 and targets[0] == targets[1]:
            raise ValueError(f"{self.kind} needs distinct targets, got {targets}")
        if not np.isfinite(self.theta) or not np.isfinite(self.phi):
            raise ValueError("gate angles must be finite")

    @property
    def is_two_qubit(self) -> bool:
        return self.kind in TWO_QUBIT_KINDS

    @property
    def is_native(self) -> bool:
        return self.kind in NATIVE_KINDS

    def canonical(self) -> "GateOp":
        """Same gate with theta wrapped into [-2pi, 2pi]."""
        theta = np.fmod(self.theta, 4 * np.pi)
        if theta > 2 * np.pi:
            theta -= 4 * np.pi
        elif theta < -2 * np.pi:
            theta += 4 * np.pi
        return GateOp(self.kind, self.targets, theta, self.phi)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "targets": list(self.targets), "theta": self.theta, "phi": self.phi}

    @classmethod
    def from_dict(cls, d) -> "GateOp":
        return cls(d["kind"], tuple(d["targets"]), d["theta"], d.get("phi", 0.0))


def pauli_rotation(generator, theta) -> np.ndarray:
    """``exp(-i theta P / 2)`` for a Hermitian ``P`` squaring to the identity."""
    dim = generator.shape[0]
    return np.cos(theta / 2) * np.eye(dim) - 1j * np.sin(theta / 2) * generator


def gate_matrix(op: GateOp) -> np.ndarray:
    """Unitary matrix of a gate on its own targets (first target most significant)."""
    if op.kind == "R":
        gen = np.cos(op.phi) * X + np.sin(op.phi) * Y
        return pauli_rotation(gen, op.theta)
    return pauli_rotation(_GENERATORS[op.kind], op.theta)


def lower_to_native(op: GateOp) -> list:
    """Rewrite a derived gate as native gates (equal up to global phase).

    XY and YX become one XX gate conjugated by virtual ``Rz(-/+pi/2)`` on the
    qubit that carries the Y; Ry becomes ``R(theta, pi/2)``. Native gates are
    returned unchanged.
    """
    if op.is_native:
        return [op]
    if op.kind == "Ry":
        return [GateOp("R", op.targets, op.theta, np.pi / 2)]
    a, b = op.targets
    y_qubit = b if op.kind == "XY" else a
    return [
        GateOp("Rz", (y_qubit,), -np.pi / 2),
        GateOp("XX", (a, b), op.theta),
        GateOp("Rz", (y_qubit,), np.pi / 2),
    ]


def phase_gauge(u) -> np.ndarray:
    """Remove the global phase using the largest-magnitude entry."""
    u = np.asarray(u, dtype=complex)
    idx = np.unravel_index(np.argmax(np.abs(u)), u.shape)
    return u * (abs(u[idx]) / u[idx])


def unitary_fidelity(u, v) -> float:
    """``|Tr(u^dagger v)| / d``, equal to 1 iff u and v agree up to phase."""
    return float(abs(np.trace(np.asarray(u).conj().T @ v)) / u.shape[0])


@dataclass
class Circuit:
    """Ordered gate list on ``n_qubits`` qubits initialized in ``|0...0>``.

    ``labels`` optionally maps each qubit to an index of a reference layout
    (used when a circuit is pruned out of a larger one).
    """

    n_qubits: int
    ops: list = field(default_factory=list)
    measured_qubits: list = field(default_factory=list)
    labels: list = None

    def __post_init__(self):
        if self.labels is None:
            self.labels = list(range(self.n_qubits))
        for op in self.ops:
            self._check(op)
        for q in self.measured_qubits:
            if not 0 <= q < self.n_qubits:
                raise ValueError(f"measured qubit {q} out of range")

    def _check(self, op):
        if any(t < 0 or t >= self.n_qubits for t in op.targets):
            raise ValueError(f"{op} targets a qubit outside 0..{self.n_qubits - 1}")

    def append(self, op: GateOp):
        self._check(op)
        self.ops.append(op)

    def extend(self, ops):
        for op in ops:
            self.append(op)

    def count(self, kind: str) -> int:
        return sum(op.kind == kind for op in self.ops)

    def lowered(self) -> "Circuit":
        ops = [n for op in self.ops for n in lower_to_native(op)]
        return Circuit(self.n_qubits, ops, list(self.measured_qubits), list(self.labels))

    def unitary(self) -> np.ndarray:
        """Dense unitary of the whole circuit (small circuits only)."""
        dim = 2**self.n_qubits
        u = np.eye(dim, dtype=complex)
        for op in self.ops:
            u = embed(gate_matrix(op), op.targets, self.n_qubits) @ u
        return u

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "ops": [op.to_dict() for op in self.ops],
            "measured_qubits": list(self.measured_qubits),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "Circuit":
        return cls(int(d["n_qubits"]), [GateOp.from_dict(o) for o in d["ops"]], list(d.get("measured_qubits", [])))

    @classmethod
    def from_json(cls, text: str) -> "Circuit":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class GateTiming:
    """Durations in seconds; virtual Rz gates take no time."""

    single_qubit: float = 10e-6
    two_qubit: float = 200e-6
    idle_gap: float = 5e-6

    def duration(self, op: GateOp) -> float:
        if op.kind == "Rz":
            return 0.0
        return self.two_qubit if op.is_two_qubit else self.single_qubit


def schedule(circuit: Circuit, timing: GateTiming = GateTiming()) -> list:
    """Serial schedule: list of ``(start, duration)`` per op, in seconds.

    Gates run one after another, separated by ``idle_gap``; virtual gates
    neither take time nor add a gap.
    """
    out = []
    t = 0.0
    for op in circuit.ops:
        dur = timing.duration(op)
        out.append((t, dur))
        if dur > 0:
            t += dur + timing.idle_gap
    return out


def embed(u, targets, n_qubits) -> np.ndarray:
    """Full ``2^n x 2^n`` matrix of ``u`` acting on ``targets``."""
    k = len(targets)
    rest = [q for q in range(n_qubits) if q not in targets]
    perm = list(targets) + rest
    full = np.kron(u, np.eye(2 ** (n_qubits - k)))
    t = full.reshape([2] * (2 * n_qubits))
    inv = np.argsort(perm)
    axes = list(inv) + [n_qubits + i for i in inv]
    return t.transpose(axes).reshape(2**n_qubits, 2**n_qubits)


def zero_state(n_qubits: int) -> np.ndarray:
    psi = np.zeros(2**n_qubits, dtype=complex)
    psi[0] = 1.0
    return psi


def apply_matrix(state, u, targets) -> np.ndarray:
    """Apply a k-qubit matrix to ``targets`` of a statevector or a batch of them.

    ``state`` has shape ``(2**n,)`` or ``(batch, 2**n)``; ``u`` has shape
    ``(2**k, 2**k)`` or ``(batch, 2**k, 2**k)`` for per-member matrices.
    """
    state = np.asarray(state)
    batched = state.ndim == 2
    psi = state if batched else state[None]
    b = psi.shape[0]
    n = int(np.log2(psi.shape[1]))
    k = len(targets)
    t = psi.reshape((b,) + (2,) * n)
    axes = [1 + q for q in targets]
    t = np.moveaxis(t, axes, list(range(1, k + 1))).reshape(b, 2**k, -1)
    if u.ndim == 2:
        t = np.einsum("ij,bjr->bir", u, t)
    else:
        t = np.einsum("bij,bjr->bir", u, t)
    t = t.reshape((b,) + (2,) * n)
    t = np.moveaxis(t, list(range(1, k + 1)), axes).reshape(b, -1)
    return t if batched else t[0]


def apply(state, ops) -> np.ndarray:
    """Return a new statevector with ``ops`` applied in order."""
    psi = np.array(state, dtype=complex, copy=True)
    n = int(round(np.log2(psi.shape[-1])))
    if 2**n != psi.shape[-1]:
        raise ValueError("statevector length must be a power of two")
    if n > MAX_QUBITS:
        raise ValueError(f"{n} qubits exceeds the dense limit of {MAX_QUBITS}")
    for op in ops:
        if any(t < 0 or t >= n for t in op.targets):
            raise ValueError(f"{op} addresses a qubit outside 0..{n - 1}")
        psi = apply_matrix(psi, gate_matrix(op), op.targets)
    return psi


def run(circuit: Circuit) -> np.ndarray:
    """Ideal statevector prepared by ``circuit`` from ``|0...0>``."""
    return apply(zero_state(circuit.n_qubits), circuit.ops)


def measure_distribution(state, qubits) -> np.ndarray:
    """Marginal outcome probabilities of ``qubits`` (first listed = MSB)."""
    qubits = list(qubits)
    if len(set(qubits)) != len(qubits):
        raise ValueError("measured qubits must be distinct")
    psi = np.asarray(state)
    n = int(round(np.log2(psi.shape[-1])))
    p = (np.abs(psi) ** 2).reshape((2,) * n)
    rest = tuple(q for q in range(n) if q not in qubits)
    p = p.sum(axis=rest) if rest else p
    # remaining axes are in ascending qubit order; reorder to the requested order
    order = np.argsort(np.argsort(qubits))
    p = np.transpose(p, order).reshape(-1)
    return p / p.sum()


def reduced_density_matrix(state, qubits) -> np.ndarray:
    """Reduced density matrix of a pure state on ``qubits`` (in the given order)."""
    psi = np.asarray(state)
    n = int(round(np.log2(psi.shape[-1])))
    qubits = list(qubits)
    rest = [q for q in range(n) if q not in qubits]
    t = np.moveaxis(psi.reshape((2,) * n), qubits + rest, list(range(n)))
    m = t.reshape(2 ** len(qubits), -1)
    return m @ m.conj().T


def basis_rotation(basis: str) -> np.ndarray:
    """Single-qubit unitary mapping the eigenbasis of ``basis`` onto Z."""
    if basis == "Z":
        return I2.copy()
    if basis == "X":
        return gate_matrix(GateOp("Ry", (0,), -np.pi / 2))
    if basis == "Y":
        return gate_matrix(GateOp("R", (0,), np.pi / 2, 0.0))
    raise ValueError(f"unknown measurement basis {basis!r}")


def basis_rotation_ops(basis: str, qubit: int) -> list:
    """Native pre-measurement rotation for one qubit (empty for Z)."""
    if basis == "Z":
        return []
    if basis == "X":
        return [GateOp("R", (qubit,), -np.pi / 2, np.pi / 2)]
    if basis == "Y":
        return [GateOp("R", (qubit,), np.pi / 2, 0.0)]
    raise ValueError(f"unknown measurement basis {basis!r}")
