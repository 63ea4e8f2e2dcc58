"""Dense complex linear algebra shared by the rest of the package.

Conventions: qubit/subsystem 0 is the most significant index of a
flattened state; superoperators act on row-major vectorized operators, so
``vec(A @ X @ B) = kron(A, B.T) @ vec(X)``.
"""

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.linalg

MAX_DIM = 2**16

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


class InvalidStateError(ValueError):
    """Raised when a matrix is not an admissible density matrix."""


class EigenDecompositionError(RuntimeError):
    """Raised when the eigensolver fails or the matrix is defective."""


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigen-decomposition ``m = sum_i lambda_i |r_i>><<l_i|``.

    Columns of ``right_vectors`` and ``left_vectors`` are bi-orthonormal:
    ``left_vectors.conj().T @ right_vectors == 1``.
    """

    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.right_vectors * self.eigenvalues) @ self.left_vectors.conj().T


def kron(*mats) -> np.ndarray:
    """Kronecker product of any number of matrices (row-major block order)."""
    return reduce(np.kron, mats)


def pauli_string(label: str) -> np.ndarray:
    """Matrix of a Pauli string such as ``"XZI"``; first letter is qubit 0."""
    return kron(*(PAULI[c] for c in label))


def partial_trace(rho, dims, keep) -> np.ndarray:
    """Trace out every subsystem not listed in ``keep``.

    Args:
        rho: square matrix acting on the tensor product of ``dims``.
        dims: dimension of each subsystem, subsystem 0 most significant.
        keep: indices of subsystems to keep; the result orders them ascending.

    Returns:
        The reduced matrix on the kept subsystems.
    """
    rho = np.asarray(rho)
    dims = [int(d) for d in dims]
    total = int(np.prod(dims))
    if rho.shape != (total, total):
        raise ValueError(f"rho has shape {rho.shape}, dims {dims} imply {total}x{total}")
    keep = sorted(set(int(k) for k in keep))
    if any(k < 0 or k >= len(dims) for k in keep):
        raise ValueError(f"keep={keep} out of range for {len(dims)} subsystems")
    n = len(dims)
    t = rho.reshape(dims + dims)
    ket = list(range(n))
    bra = [n + i if i in keep else i for i in range(n)]
    out = keep + [n + k for k in keep]
    reduced = np.einsum(t, ket + bra, out)
    d = int(np.prod([dims[k] for k in keep])) if keep else 1
    return reduced.reshape(d, d)


def _sort_order(vals: np.ndarray) -> np.ndarray:
    # descending magnitude, ties broken by descending real part
    mag = np.round(np.abs(vals), 12)
    return np.lexsort((-vals.real, -mag))


def eig(m, hermitian: bool = False) -> SpectralDecomposition:
    """Eigen-decomposition with bi-orthonormal left/right vectors.

    Eigenvalues are sorted by descending magnitude (ties by descending real
    part). Degenerate clusters (|lambda_i - lambda_j| < 1e-9) get orthonormal
    right vectors, and left vectors are obtained by inverting the right basis.
    """
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"eig needs a square matrix, got shape {m.shape}")
    if m.shape[0] > MAX_DIM:
        raise ValueError(f"dimension {m.shape[0]} exceeds dense limit {MAX_DIM}")
    if hermitian:
        if np.linalg.norm(m - m.conj().T) >= 1e-10:
            raise ValueError("matrix flagged hermitian is not hermitian within 1e-10")
        try:
            vals, vecs = np.linalg.eigh(m)
        except np.linalg.LinAlgError as exc:
            raise EigenDecompositionError(f"eigh failed: {exc}") from exc
        order = _sort_order(vals.astype(complex))
        vals, vecs = vals[order], vecs[:, order]
        return SpectralDecomposition(vals.astype(complex), vecs, vecs)

    try:
        vals, vecs = scipy.linalg.eig(m)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenDecompositionError(f"LAPACK geev did not converge: {exc}") from exc
    order = _sort_order(vals)
    vals, vecs = vals[order], vecs[:, order]

    # orthonormalize the right vectors inside each degenerate cluster
    i = 0
    while i < len(vals):
        j = i + 1
        while j < len(vals) and abs(vals[j] - vals[i]) < 1e-9:
            j += 1
        if j - i > 1:
            q, _ = np.linalg.qr(vecs[:, i:j])
            vecs[:, i:j] = q
        i = j

    cond = np.linalg.cond(vecs)
    if not np.isfinite(cond) or cond > 1e12:
        raise EigenDecompositionError(f"matrix is (numerically) defective, cond={cond:.3g}")
    left = np.linalg.inv(vecs).conj().T
    return SpectralDecomposition(vals, vecs, left)


def psd_sqrt(rho) -> np.ndarray:
    """Principal square root of a Hermitian positive semidefinite matrix."""
    rho = np.asarray(rho, dtype=complex)
    if np.linalg.norm(rho - rho.conj().T) > 1e-8:
        raise InvalidStateError("psd_sqrt expects a Hermitian matrix")
    vals, vecs = np.linalg.eigh((rho + rho.conj().T) / 2)
    if vals.min() < -1e-6:
        raise InvalidStateError(f"eigenvalue {vals.min():.3g} is significantly negative")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def check_density_matrix(rho, atol: float = 1e-8) -> np.ndarray:
    """Validate Hermiticity, unit trace and positivity; return as complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise InvalidStateError(f"density matrix must be square, got {rho.shape}")
    if np.linalg.norm(rho - rho.conj().T) > atol:
        raise InvalidStateError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1) > max(atol, 1e-8):
        raise InvalidStateError(f"trace is {np.trace(rho).real:.6g}, expected 1")
    if np.linalg.eigvalsh((rho + rho.conj().T) / 2).min() < -max(atol, 1e-8):
        raise InvalidStateError("density matrix has negative eigenvalues")
    return rho


def superop_from_kraus(kraus) -> np.ndarray:
    """Row-major superoperator ``sum_k K (x) K*`` of a Kraus list."""
    return sum(np.kron(k, k.conj()) for k in kraus)


def apply_superop(superop, rho) -> np.ndarray:
    d = rho.shape[0]
    return (superop @ rho.reshape(-1)).reshape(d, d)


def choi_matrix(superop, d_in: int, d_out: int) -> np.ndarray:
    """Choi matrix ``sum_ij |i><j| (x) S(|i><j|)`` of a row-major superoperator."""
    s = np.asarray(superop).reshape(d_out, d_out, d_in, d_in)
    return s.transpose(2, 0, 3, 1).reshape(d_in * d_out, d_in * d_out)
