"""Layer-transition superoperators of the binary MERA.

* :func:`layer_channel` -- CPTP map carrying the density matrix of the
  central pair of renormalized sites one level down (16x16).
* :func:`doubled_map` -- two-copy map with the right-edge site
  SWAP-contracted between the copies (256x256); iterating it on
  ``rho_top (x) rho_top`` and tracing gives the purity of the half chain
  to the right of the central pair.
* :func:`average_descending` -- translation-averaged descending map on
  three-site windows (64x64), used for the energy density.

Superoperators act on row-major vectorized operators.
"""

from dataclasses import dataclass

import numpy as np

from ..linalg import SpectralDecomposition, apply_superop, choi_matrix, eig, superop_from_kraus
from .params import MeraParams
from .tensors import disentangler_gates, isometry_gates, pair_transition, top_state, triple_transition


class ChannelError(RuntimeError):
    """A superoperator failed a structural check (CP, TP, unique fixed point)."""


def _cell_of(params_or_cell, layer: int = 0) -> np.ndarray:
    if isinstance(params_or_cell, MeraParams):
        return params_or_cell.cell(layer)
    return np.asarray(params_or_cell, dtype=float)


@dataclass(frozen=True)
class LayerChannel:
    superop: np.ndarray
    kraus: tuple
    circuit: tuple  # gate list on (discard, left, right, edge) = qubits (0, 1, 2, 3) + 2 ancillas
    traced: tuple

    def __call__(self, rho) -> np.ndarray:
        return apply_superop(self.superop, rho)

    def spectrum(self) -> SpectralDecomposition:
        return eig(self.superop)


@dataclass(frozen=True)
class DoubledMap:
    superop: np.ndarray

    def __call__(self, x) -> np.ndarray:
        return apply_superop(self.superop, x)

    def spectrum(self) -> SpectralDecomposition:
        return eig(self.superop)

    @property
    def dominant(self) -> complex:
        return eig(self.superop).eigenvalues[0]


def layer_channel(params, layer: int = 0, check: bool = True) -> LayerChannel:
    """Central-pair layer-transition channel of one unit cell.

    Coarse pair (c_-1, c_0) is split by two isometries into fine sites
    (-2, -1, 0, 1); the disentangler acts on (-1, 0); sites -2 and 1 leave
    the causal cone and are traced out.
    """
    cell = _cell_of(params, layer)
    psi = pair_transition(cell).reshape(2, 4, 2, 4)  # (f-2, (f-1 f0), f1, coarse pair)
    kraus = tuple(psi[a, :, b, :] for a in range(2) for b in range(2))
    superop = superop_from_kraus(kraus)
    # gate list on qubits: 0 = c_-1 (-> f-2), 1 = ancilla (-> f-1), 2 = c_0 (-> f0), 3 = ancilla (-> f1)
    circuit = tuple(isometry_gates(cell, 0, 1) + isometry_gates(cell, 2, 3) + disentangler_gates(cell, 1, 2))
    ch = LayerChannel(superop, kraus, circuit, traced=(0, 3))
    if check:
        verify_cptp(superop, 4, 4)
    return ch


def verify_cptp(superop, d_in, d_out, atol_cp=1e-8, atol_tp=1e-10):
    choi = choi_matrix(superop, d_in, d_out)
    lam = np.linalg.eigvalsh((choi + choi.conj().T) / 2).min()
    if lam < -atol_cp:
        raise ChannelError(f"channel is not completely positive (Choi eigenvalue {lam:.3g})")
    ident = np.eye(d_out).reshape(-1)
    err = np.abs(ident.conj() @ superop - np.eye(d_in).reshape(-1)).max()
    if err > atol_tp:
        raise ChannelError(f"channel is not trace preserving (error {err:.3g})")


def steady_state(channel, gap_tol: float = 1e-9) -> np.ndarray:
    """Fixed point of a CPTP channel, normalized to unit trace."""
    superop = channel.superop if hasattr(channel, "superop") else np.asarray(channel)
    dec = eig(superop)
    vals = dec.eigenvalues
    if abs(vals[0] - 1) > 1e-8:
        raise ChannelError(f"dominant eigenvalue {vals[0]:.6g} is not 1; map is not trace preserving")
    if len(vals) > 1 and abs(vals[1] - 1) < gap_tol:
        raise ChannelError("unit eigenvalue is degenerate; steady state is ambiguous")
    d = int(round(np.sqrt(len(vals))))
    rho = dec.right_vectors[:, 0].reshape(d, d)
    rho = rho / np.trace(rho)
    rho = (rho + rho.conj().T) / 2
    return rho


def doubled_map(params, layer: int = 0) -> DoubledMap:
    """Two-copy layer transition with the right-edge site SWAP-contracted.

    Input and output operators live on (copy-1 pair, copy-2 pair). Per copy
    the left-discarded site is traced; the right edge site of copy 1 is
    contracted with that of copy 2 (swap trick for the purity).
    """
    cell = _cell_of(params, layer)
    psi = pair_transition(cell).reshape(2, 2, 2, 2, 2, 2)  # x a b y | i j
    pc = psi.conj()
    d = np.einsum("xabyij,zefwkl,xcdwmn,zghyop->abefcdghijklmnop", psi, psi, pc, pc, optimize=True)
    return DoubledMap(d.reshape(256, 256))


def average_descending(params, layer: int = 0) -> np.ndarray:
    """Translation-averaged descending superoperator on three-site windows."""
    cell = _cell_of(params, layer)
    psi = triple_transition(cell).reshape(2, 8, 2, 2, 8)  # f0, (f1 f2 f3), f4, f5 | coarse
    left = [psi[a, :, b, c, :] for a in range(2) for b in range(2) for c in range(2)]
    psi_r = triple_transition(cell).reshape(2, 2, 8, 2, 8)  # f0, f1, (f2 f3 f4), f5 | coarse
    right = [psi_r[a, b, :, c, :] for a in range(2) for b in range(2) for c in range(2)]
    return 0.5 * (superop_from_kraus(left) + superop_from_kraus(right))


def top_pair_density(top=None) -> np.ndarray:
    phi = top_state(top)
    return np.outer(phi, phi.conj())


def top_triple_density(top=None) -> np.ndarray:
    """Average three-site density matrix of the top level.

    The top level is either ``|0...0>`` or a tiling of the two-site top state
    on the pairs (2m - 1, 2m); windows start on both parities equally often.
    """
    if top is None:
        rho = np.zeros((8, 8), dtype=complex)
        rho[0, 0] = 1
        return rho
    pair = top_pair_density(top)
    one_left = np.einsum("abcb->ac", pair.reshape(2, 2, 2, 2))
    one_right = np.einsum("abad->bd", pair.reshape(2, 2, 2, 2))
    return 0.5 * (np.kron(pair, one_left) + np.kron(one_right, pair))


def descend_pair(params: MeraParams, rho_top=None, n_layers: int = None) -> np.ndarray:
    """Density matrix of the central physical pair after descending all layers."""
    n_layers = params.n_layers if n_layers is None else n_layers
    rho = top_pair_density(params.top) if rho_top is None else rho_top
    for k in reversed(range(n_layers)):
        rho = layer_channel(params, k, check=False)(rho)
    return rho


def descend_triple_once(cell, rho) -> np.ndarray:
    """Apply the averaged three-site descending map without forming the superoperator."""
    psi = triple_transition(cell)
    fine = (psi @ rho @ psi.conj().T).reshape([2] * 12)
    left = np.einsum("abcdefahijef->bcdhij", fine).reshape(8, 8)
    right = np.einsum("abcdefabhijf->cdehij", fine).reshape(8, 8)
    return 0.5 * (left + right)


def descend_triple(params: MeraParams, n_layers: int = None) -> np.ndarray:
    """Translation-averaged three-site density matrix on the physical chain."""
    n_layers = params.n_layers if n_layers is None else n_layers
    rho = top_triple_density(params.top)
    for k in reversed(range(n_layers)):
        rho = descend_triple_once(params.cell(k), rho)
    return rho


def scale_invariant_triple(params: MeraParams) -> np.ndarray:
    """Fixed point of the averaged descending map of a scale-invariant cell."""
    return steady_state(average_descending(params, 0))


def half_chain_purity(params: MeraParams, n_layers: int = None) -> float:
    """Purity of the half chain right of the central pair via the doubled map."""
    n_layers = params.n_layers if n_layers is None else n_layers
    rho = top_pair_density(params.top)
    x = np.kron(rho, rho)
    for k in reversed(range(n_layers)):
        x = doubled_map(params, k)(x)
    return float(np.trace(x).real)
