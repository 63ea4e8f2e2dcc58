"""Entanglement measures, fidelities, exact TFIM references and scaling fits.

The transverse-field Ising chain is ``H = -sum_i X_i X_{i+1} - g sum_i Z_i``.
"""

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.integrate import quad

from .linalg import I2, InvalidStateError, X, Y, Z, check_density_matrix

log = logging.getLogger(__name__)


def _spectrum(rho, atol=1e-8) -> np.ndarray:
    rho = check_density_matrix(rho, atol=atol)
    lam = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    return np.clip(lam, 0.0, None)[::-1]


def renyi_entropy(rho, alpha: float = 2.0) -> float:
    """Renyi entropy in bits; ``alpha = 1`` gives the von Neumann entropy."""
    if alpha <= 0:
        raise ValueError("Renyi index must be positive")
    lam = _spectrum(rho)
    lam = lam[lam > 0]
    if np.isclose(alpha, 1.0):
        return float(-np.sum(lam * np.log2(lam)))
    return float(np.log2(np.sum(lam**alpha)) / (1.0 - alpha))


def single_site_entropy(x: float, z: float) -> float:
    """Renyi-2 entropy of a qubit with Bloch vector ``(x, 0, z)``."""
    r2 = x * x + z * z
    if r2 > 1 + 1e-9:
        raise InvalidStateError(f"Bloch vector length {np.sqrt(r2):.6g} exceeds 1")
    return float(-np.log2((1 + min(r2, 1.0)) / 2))


def two_site_density(xx, yy, zz, x, z) -> np.ndarray:
    """Real, reflection-symmetric two-qubit matrix built from nearest-neighbour data."""
    terms = [
        (1.0, np.kron(I2, I2)),
        (x, np.kron(X, I2) + np.kron(I2, X)),
        (z, np.kron(Z, I2) + np.kron(I2, Z)),
        (xx, np.kron(X, X)),
        (yy, np.kron(Y, Y)),
        (zz, np.kron(Z, Z)),
    ]
    return sum(c * m for c, m in terms) / 4


def project_to_state(m) -> tuple:
    """Nearest density matrix by eigenvalue clipping; returns ``(rho, distance)``."""
    m = (np.asarray(m) + np.asarray(m).conj().T) / 2
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    if vals.sum() <= 0:
        raise InvalidStateError("matrix has no positive part")
    vals = vals / vals.sum()
    rho = (vecs * vals) @ vecs.conj().T
    return rho, float(np.linalg.norm(rho - m))


def wootters_concurrence(rho) -> float:
    yy = np.kron(Y, Y)
    r = rho @ yy @ rho.conj() @ yy
    ev = np.sqrt(np.clip(np.sort(np.linalg.eigvals(r).real)[::-1], 0.0, None))
    return float(max(0.0, ev[0] - ev[1] - ev[2] - ev[3]))


def concurrence(xx, yy, zz, x, z) -> float:
    """Nearest-neighbour concurrence from measured correlators."""
    rho, dist = project_to_state(two_site_density(xx, yy, zz, x, z))
    if dist > 0.05:
        warnings.warn(f"correlators are inconsistent with a state (projection distance {dist:.3f})")
    return wootters_concurrence(rho)


def _sqrt_cut(rho) -> np.ndarray:
    # round-off eigenvalues would contribute ~1e-8 through the square root
    vals, vecs = np.linalg.eigh((rho + rho.conj().T) / 2)
    vals = np.where(vals > 1e-14 * max(vals.max(), 1.0), vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.conj().T


def fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``.

    Evaluated as the squared nuclear norm of ``sqrt(rho) sqrt(sigma)``, which is
    symmetric in the two arguments.
    """
    rho = check_density_matrix(rho, atol=1e-7)
    sigma = check_density_matrix(sigma, atol=1e-7)
    sv = np.linalg.svd(_sqrt_cut(rho) @ _sqrt_cut(sigma), compute_uv=False)
    return float(min(1.0, np.sum(sv) ** 2))


def trace_distance(rho, sigma) -> float:
    return float(0.5 * np.abs(np.linalg.eigvalsh(np.asarray(rho) - sigma)).sum())


def infidelity_ratio(rho, direction, eps: float) -> float:
    """``(1 - F(rho, rho + eps D)) / (1 - F(rho, rho + eps/2 D))`` for a traceless ``D``.

    Tends to 4 for full-rank ``rho`` (quadratic response) and to 2 when the
    perturbation leaves the support of a rank-deficient ``rho`` (linear response).
    """
    rho = np.asarray(rho, dtype=complex)
    d = np.asarray(direction, dtype=complex)
    if abs(np.trace(d)) > 1e-12:
        raise ValueError("perturbation direction must be traceless")
    return (1 - fidelity(rho, rho + eps * d)) / (1 - fidelity(rho, rho + 0.5 * eps * d))


# --- exact references ------------------------------------------------------


def _dispersion(k, g):
    return np.sqrt(1 + g * g - 2 * g * np.cos(k))


@lru_cache(maxsize=None)
def _fermion_correlator(n: int, g: float) -> float:
    """``G_n = (1/pi) int_0^pi [cos(nk)(g - cos k) + sin(nk) sin k] / eps_k dk``."""
    def integrand(k):
        return (np.cos(n * k) * (g - np.cos(k)) + np.sin(n * k) * np.sin(k)) / _dispersion(k, g)
    points = [0.0] if abs(g - 1) < 1e-12 else None
    val, _ = quad(integrand, 0, np.pi, epsabs=1e-12, epsrel=1e-12, limit=400, points=points)
    return val / np.pi


@lru_cache(maxsize=None)
def ground_energy_density(g: float) -> float:
    """Free-fermion ground-state energy per site."""
    if g == 0:
        return -1.0
    val, _ = quad(_dispersion, 0, np.pi, args=(g,), epsabs=1e-13, epsrel=1e-13, limit=400)
    return -val / np.pi


ORACLE_QUANTITIES = ("energy_density", "magnetization_x", "zz", "xx", "yy", "z")


def exact_tfim_oracle(g: float, quantity: str = "energy_density") -> float:
    """Thermodynamic-limit ground-state value of ``quantity`` at field ``g``.

    ``magnetization_x`` is the spontaneous order parameter ``(1 - g^2)^(1/8)``
    for ``g < 1`` and zero otherwise; the correlators are nearest-neighbour.
    """
    g = float(g)
    if g < 0:
        raise ValueError("field must be non-negative")
    if quantity == "energy_density":
        return ground_energy_density(g)
    if quantity == "magnetization_x":
        return (1 - g * g) ** 0.125 if g < 1 else 0.0
    if g == 0:
        return {"z": 0.0, "xx": 1.0, "yy": 0.0, "zz": 0.0}[quantity]
    if quantity == "z":
        return _fermion_correlator(0, g)
    if quantity == "xx":
        return -_fermion_correlator(-1, g)
    if quantity == "yy":
        return -_fermion_correlator(1, g)
    if quantity == "zz":
        return _fermion_correlator(0, g) ** 2 - _fermion_correlator(1, g) * _fermion_correlator(-1, g)
    raise ValueError(f"unknown quantity {quantity!r}; choose from {ORACLE_QUANTITIES}")


def tfim_sparse_hamiltonian(n_sites: int, g: float, periodic: bool = True):
    """Sparse TFIM Hamiltonian (site 0 is the most significant bit)."""
    dim = 2**n_sites
    idx = np.arange(dim)
    bits = (idx[:, None] >> (n_sites - 1 - np.arange(n_sites))) & 1
    diag = -g * (1 - 2 * bits).sum(axis=1).astype(float)
    h = scipy.sparse.diags(diag)
    bonds = [(i, i + 1) for i in range(n_sites - 1)]
    if periodic and n_sites > 2:
        bonds.append((n_sites - 1, 0))
    for i, j in bonds:
        mask = (1 << (n_sites - 1 - i)) | (1 << (n_sites - 1 - j))
        h = h - scipy.sparse.csr_matrix((np.ones(dim), (idx, idx ^ mask)), shape=(dim, dim))
    return h.tocsr()


def exact_diagonalization(n_sites: int, g: float) -> dict:
    """Ground state of the periodic chain: energy per site and nearest-neighbour correlators."""
    h = tfim_sparse_hamiltonian(n_sites, g)
    vals, vecs = scipy.sparse.linalg.eigsh(h, k=1, which="SA", tol=1e-12)
    psi = vecs[:, 0]
    idx = np.arange(2**n_sites)
    b0 = (idx >> (n_sites - 1)) & 1
    b1 = (idx >> (n_sites - 2)) & 1
    z = float(np.sum(np.abs(psi) ** 2 * (1 - 2 * b0)))
    zz = float(np.sum(np.abs(psi) ** 2 * (1 - 2 * b0) * (1 - 2 * b1)))
    flip = idx ^ (3 << (n_sites - 2))
    xx = float(np.real(np.vdot(psi, psi[flip])))
    return {"energy_density": float(vals[0]) / n_sites, "z": z, "zz": zz, "xx": xx}


# --- fits --------------------------------------------------------------------


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    residuals: list
    slope_err: float = float("nan")
    intercept_err: float = float("nan")
    window: tuple = ()

    @property
    def exponent(self) -> float:
        return self.slope

    @property
    def exponent_err(self) -> float:
        return self.slope_err

    def to_dict(self) -> dict:
        return asdict(self)


def _linear_fit(x, y, window) -> ScalingFit:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3:
        raise ValueError("a scaling fit needs at least 3 points")
    (slope, intercept), cov = np.polyfit(x, y, 1, cov="unscaled")
    resid = y - (slope * x + intercept)
    dof = len(x) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    err = np.sqrt(np.diag(cov) * s2)
    return ScalingFit(float(slope), float(intercept), resid.tolist(), float(err[0]), float(err[1]), window)


def fit_critical_exponent(data, g_cut: float, g_min: float = 0.5) -> ScalingFit:
    """Fit ``log<X> = beta * log(1 - g^2) + c`` over ``g_min <= g <= g_cut``.

    Args:
        data: iterable of ``(g, <X>)`` pairs.
        g_cut: upper end of the fit window, below 1.

    Returns:
        A :class:`ScalingFit` whose ``exponent`` is beta, with the 1-sigma
        uncertainty from the least-squares covariance.
    """
    if g_cut >= 1:
        raise ValueError("g_cut must be below the critical point")
    pts = [(g, m) for g, m in data if g_min - 1e-12 <= g <= g_cut + 1e-12]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points in [{g_min}, {g_cut}], got {len(pts)}")
    g, m = np.array(pts).T
    return _linear_fit(np.log(1 - g**2), np.log(np.abs(m)), (g_min, g_cut))


def scaling_fit(points) -> ScalingFit:
    """Ordinary least squares ``S = slope * T + intercept``."""
    t, s = np.array(list(points), dtype=float).T
    return _linear_fit(t, s, (float(t.min()), float(t.max())))


# --- entanglement spectrum ---------------------------------------------------


@dataclass
class EntanglementReport:
    renyi2: float
    spectrum: list
    zeta: list
    schmidt_gap: float
    parity: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_csv(self) -> str:
        rows = ["index,lambda,zeta,parity"]
        for i, (lam, zeta) in enumerate(zip(self.spectrum, self.zeta)):
            par = self.parity[i] if i < len(self.parity) else ""
            rows.append(f"{i},{lam:.12g},{zeta:.12g},{par if par == '' else f'{par:.12g}'}")
        return "\n".join(rows) + "\n"


def parity_operator(n_qubits: int) -> np.ndarray:
    signs = np.array([1 - 2 * (bin(i).count("1") % 2) for i in range(2**n_qubits)], dtype=float)
    return np.diag(signs)


def entanglement_report(rho, parity_basis: bool = True) -> EntanglementReport:
    """Spectrum, entanglement energies and Schmidt gap of ``rho``.

    With ``parity_basis`` the expectation of ``prod_i Z_i`` in every
    eigenvector is included (degenerate eigenvectors are split by parity).
    """
    rho = check_density_matrix(rho, atol=1e-7)
    n = int(round(np.log2(rho.shape[0])))
    herm = (rho + rho.conj().T) / 2
    par_op = parity_operator(n)
    if parity_basis:
        # tiny parity-resolving perturbation keeps degenerate pairs in parity sectors
        vals, vecs = np.linalg.eigh(herm + 1e-13 * par_op)
    else:
        vals, vecs = np.linalg.eigh(herm)
    order = np.argsort(vals)[::-1]
    lam = np.clip(vals[order], 0.0, None)
    lam = lam / lam.sum()
    vecs = vecs[:, order]
    with np.errstate(divide="ignore"):
        zeta = np.where(lam > 0, -np.log2(np.where(lam > 0, lam, 1.0)), np.inf)
    parity = []
    if parity_basis:
        parity = [float(np.real(np.vdot(v, par_op @ v))) for v in vecs.T]
    gap = float(lam[0] - lam[1]) if len(lam) > 1 else float(lam[0])
    return EntanglementReport(
        renyi2=float(-np.log2(np.sum(lam**2))),
        spectrum=lam.tolist(),
        zeta=zeta.tolist(),
        schmidt_gap=gap,
        parity=parity,
    )
