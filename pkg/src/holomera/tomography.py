"""Shot sampling, Pauli-basis tomography, classical shadows and bootstrap.

Outcomes are integers whose most significant bit is the first measured
qubit; a bit value 1 means the qubit was found in the ``-1`` eigenstate of
the measured Pauli.
"""

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from .gates import Circuit, apply_matrix, basis_rotation, measure_distribution, run
from .linalg import I2
from .noise import NoiseCalibration, apply_readout_flips, finish_noisy, readout_matrix, simulate_noisy

MAX_TOMO_QUBITS = 5
SHOT_BLOCK = 256
PAULI_LABELS = "XYZ"


class TomographyError(ValueError):
    """Dataset unusable for the requested estimator."""


@dataclass
class ShotDataset:
    """Measurement outcomes grouped by per-qubit Pauli setting.

    ``groups`` maps a basis string such as ``"XZ"`` to the integer outcomes
    of the shots taken in that setting.
    """

    n_measured: int
    groups: dict
    seed: int = 0
    circuit_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for basis, out in self.groups.items():
            if len(basis) != self.n_measured or set(basis) - set(PAULI_LABELS):
                raise TomographyError(f"basis {basis!r} does not match {self.n_measured} measured qubits")
            out = np.asarray(out, dtype=np.int64)
            if out.size == 0:
                raise TomographyError(f"basis {basis!r} has no shots")
            if out.min() < 0 or out.max() >= 2**self.n_measured:
                raise TomographyError("outcome out of range")
            self.groups[basis] = out

    @property
    def bases(self) -> list:
        return list(self.groups)

    @property
    def n_shots(self) -> int:
        return int(sum(len(v) for v in self.groups.values()))

    def counts(self, basis: str) -> np.ndarray:
        return np.bincount(self.groups[basis], minlength=2**self.n_measured)

    def to_jsonl(self) -> str:
        head = {"circuit_id": self.circuit_id, "seed": self.seed, "n_measured": self.n_measured, "meta": self.meta}
        lines = [json.dumps(head)]
        for basis in self.groups:
            c = self.counts(basis)
            counts = {format(k, f"0{self.n_measured}b"): int(v) for k, v in enumerate(c) if v}
            lines.append(json.dumps({"basis": basis, "counts": counts}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "ShotDataset":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = json.loads(lines[0])
        groups = {}
        for ln in lines[1:]:
            rec = json.loads(ln)
            groups[rec["basis"]] = np.repeat([int(k, 2) for k in rec["counts"]],
                                             list(rec["counts"].values()))
        return cls(int(head["n_measured"]), groups, int(head["seed"]), head.get("circuit_id", ""),
                   head.get("meta", {}))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_jsonl())

    @classmethod
    def load(cls, path) -> "ShotDataset":
        with open(path) as fh:
            return cls.from_jsonl(fh.read())


@dataclass
class ReconstructedState:
    rho: np.ndarray
    method: str
    log_likelihood: float = float("nan")
    iterations: int = 0
    trace: list = field(default_factory=list)


def pauli_settings(n_qubits: int) -> list:
    """All ``3**n`` per-qubit X/Y/Z settings in lexicographic order."""
    if not 1 <= n_qubits <= MAX_TOMO_QUBITS:
        raise TomographyError(f"full tomography of {n_qubits} qubits is refused (limit {MAX_TOMO_QUBITS})")
    return ["".join(s) for s in itertools.product(PAULI_LABELS, repeat=n_qubits)]


def _measured(circuit: Circuit) -> list:
    return list(circuit.measured_qubits) or list(range(circuit.n_qubits))


def ideal_distribution(state, measured, basis: str) -> np.ndarray:
    psi = state
    for q, b in zip(measured, basis):
        psi = apply_matrix(psi, basis_rotation(b), (q,))
    return measure_distribution(psi, measured)


def _rng(seed, *stream):
    return np.random.default_rng([int(seed), *stream])


def _random_bases(n_measured, n_shots, rng) -> dict:
    codes = rng.integers(0, 3**n_measured, size=n_shots)
    values, counts = np.unique(codes, return_counts=True)
    out = {}
    for v, c in zip(values, counts):
        digits = np.base_repr(int(v), 3).zfill(n_measured)
        out["".join(PAULI_LABELS[int(d)] for d in digits)] = int(c)
    return out


def run_shots(circuit: Circuit, bases, n_shots: int, seed: int = 0, cal: NoiseCalibration = None,
              ion_map=None, noisy: bool = None, circuit_id: str = "") -> ShotDataset:
    """Sample measurement outcomes of ``circuit``.

    Args:
        circuit: state-preparation circuit; ``measured_qubits`` (or all qubits) are read out.
        bases: list of basis strings, or ``"random"`` for a uniformly random
            setting per shot (classical shadows). With ``"random"``,
            ``n_shots`` is the total; otherwise it is per basis.
        n_shots: shots per basis (or total, see above).
        seed: master seed; each basis draws from its own stream.
        cal: noise calibration; ``None`` samples exact Born probabilities.
        ion_map: qubit-to-ion assignment for the noisy mode.
        noisy: force the noisy path (requires ``cal``).
        circuit_id: label stored with the dataset.

    Noisy shots are simulated in blocks of ``SHOT_BLOCK`` trajectories, each
    with its own random stream keyed by ``(seed, basis index, block)``.
    """
    if n_shots < 1:
        raise TomographyError("need at least one shot")
    measured = _measured(circuit)
    m = len(measured)
    if bases == "random":
        plan = _random_bases(m, n_shots, _rng(seed, 999_983))
    else:
        plan = {b: n_shots for b in bases}
    for b in plan:
        if len(b) != m:
            raise TomographyError(f"basis {b!r} does not cover the {m} measured qubits")
    noisy = cal is not None if noisy is None else noisy
    if noisy and cal is None:
        raise TomographyError("noisy sampling needs a calibration")
    groups = {}
    if not noisy:
        state = run(circuit)
        for i, (b, n) in enumerate(plan.items()):
            p = ideal_distribution(state, measured, b)
            groups[b] = _rng(seed, i).choice(len(p), size=n, p=p)
    else:
        for i, (b, n) in enumerate(plan.items()):
            chunks = []
            for block, start in enumerate(range(0, n, SHOT_BLOCK)):
                size = min(SHOT_BLOCK, n - start)
                rng = _rng(seed, i, block)
                probs = finish_noisy(simulate_noisy(circuit, cal, size, rng, ion_map), b, rng)
                cum = np.cumsum(probs, axis=1)
                u = rng.random((size, 1))
                out = np.minimum((cum < u).sum(axis=1), probs.shape[1] - 1)
                chunks.append(apply_readout_flips(out, m, cal, rng))
            groups[b] = np.concatenate(chunks)
    return ShotDataset(m, groups, seed, circuit_id, {"noisy": bool(noisy)})


def noise_averaged_distributions(circuit: Circuit, cal: NoiseCalibration, bases, n_paths: int,
                                 seed: int = 0, ion_map=None) -> dict:
    """Outcome distribution per basis averaged over ``n_paths`` noisy executions.

    The same paths serve every basis; readout flips enter through the
    confusion matrix. Sampling multinomial counts from these distributions is
    equivalent to per-shot simulation in the limit of many paths.
    """
    rng = _rng(seed, 0)
    base = simulate_noisy(circuit, cal, n_paths, rng, ion_map)
    conf = readout_matrix(cal, len(base.measured))
    out = {}
    for i, b in enumerate(bases):
        p = finish_noisy(base, b, _rng(seed, 1 + i)).mean(axis=0)
        out[b] = conf @ p
    return out


def sample_counts(distributions: dict, n_shots: int, rng) -> dict:
    """Multinomial counts for each basis."""
    return {b: rng.multinomial(n_shots, p / p.sum()) for b, p in distributions.items()}


def dataset_from_counts(counts: dict, seed: int = 0, circuit_id: str = "") -> ShotDataset:
    first = next(iter(counts.values()))
    m = int(np.log2(len(first)))
    groups = {b: np.repeat(np.arange(len(c)), c) for b, c in counts.items()}
    return ShotDataset(m, groups, seed, circuit_id)


# --- projectors -------------------------------------------------------------


_EIGVECS = {b: basis_rotation(b).conj().T for b in PAULI_LABELS}  # columns: eigenvectors for outcomes 0, 1


def measurement_vectors(bases) -> np.ndarray:
    """``V[k]`` is the product state of setting ``k // 2**n`` and outcome ``k % 2**n``."""
    rows = []
    for basis in bases:
        mat = np.ones((1, 1), dtype=complex)
        for b in basis:
            mat = np.kron(mat, _EIGVECS[b])
        rows.append(mat.T)  # row per outcome
    return np.concatenate(rows, axis=0)


def _frequency_table(dataset: ShotDataset):
    bases = dataset.bases
    counts = np.stack([dataset.counts(b) for b in bases]).astype(float)
    return bases, counts


def _require_complete(dataset: ShotDataset):
    need = set(pauli_settings(dataset.n_measured))
    missing = need - set(dataset.bases)
    if missing:
        raise TomographyError(f"dataset is not informationally complete; missing {len(missing)} settings")


def linear_inversion(dataset: ShotDataset) -> ReconstructedState:
    """Unconstrained estimate ``E_b[prod_q (3 P_q - I)]`` (may be non-positive)."""
    _require_complete(dataset)
    n = dataset.n_measured
    bases, counts = _frequency_table(dataset)
    freqs = counts / counts.sum(axis=1, keepdims=True)
    d = 2**n
    rho = np.zeros((d, d), dtype=complex)
    for basis, f in zip(bases, freqs):
        for k in np.nonzero(f)[0]:
            bits = [(k >> (n - 1 - q)) & 1 for q in range(n)]
            op = np.ones((1, 1), dtype=complex)
            for b, s in zip(basis, bits):
                v = _EIGVECS[b][:, s]
                op = np.kron(op, 3 * np.outer(v, v.conj()) - I2)
            rho += f[k] * op
    rho /= len(bases)
    return ReconstructedState((rho + rho.conj().T) / 2, "linear_inversion")


def _loglik(probs, counts):
    mask = counts > 0
    return np.sum(np.where(mask, counts * np.log(np.clip(probs, 1e-300, None)), 0.0), axis=-1)


def mle_reconstruct(dataset, max_iter: int = 10_000, rtol: float = 1e-10) -> ReconstructedState:
    """Maximum-likelihood state via the ``R rho R`` iteration with dilution."""
    if isinstance(dataset, ShotDataset):
        _require_complete(dataset)
        bases, counts = _frequency_table(dataset)
        counts = counts[None]
    else:
        raise TypeError("expected a ShotDataset")
    res = mle_batch(bases, counts, max_iter, rtol)
    return res[0]


def mle_batch(bases, counts, max_iter: int = 10_000, rtol: float = 1e-10, keep_trace: bool = True) -> list:
    """Reconstruct many datasets sharing the same settings at once.

    ``counts`` has shape ``(batch, n_settings, 2**n)``. Each iterate is
    ``R rho R`` normalized; when that lowers the likelihood it is mixed
    with the previous iterate (weight 1/2, halved until it no longer does).
    """
    counts = np.asarray(counts, dtype=float)
    nb, ns, d = counts.shape
    vecs = measurement_vectors(bases)  # (ns * d, d)
    flat = counts.reshape(nb, ns * d)
    weights = flat / counts.sum(axis=2).repeat(d, axis=1) / ns  # n_bk / (N_b * n_settings)
    # p_k = <v_k|rho|v_k> = sum_de rho_de conj(v_kd) v_ke; projectors flattened row-major
    proj = (vecs[:, :, None] * vecs.conj()[:, None, :]).reshape(ns * d, d * d)
    proj_t = np.ascontiguousarray(proj.conj().T)

    def probs(rho):
        return (rho.reshape(len(rho), d * d) @ proj_t).real

    rho = np.tile(np.eye(d, dtype=complex) / d, (nb, 1, 1))
    p = probs(rho)
    ll = _loglik(p, flat)
    active = np.ones(nb, dtype=bool)
    iters = np.zeros(nb, dtype=int)
    traces = [[float(x)] for x in ll] if keep_trace else None
    for _ in range(max_iter):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        r_w = weights[idx] / np.clip(p[idx], 1e-300, None)
        rmat = (r_w.astype(complex) @ proj).reshape(idx.size, d, d)
        new = rmat @ rho[idx] @ rmat
        new /= np.trace(new, axis1=1, axis2=2).real[:, None, None]
        new_p = probs(new)
        new_ll = _loglik(new_p, flat[idx])
        mix = 0.5
        bad = new_ll < ll[idx] - 1e-12 * np.abs(ll[idx])
        while bad.any() and mix > 1e-6:
            cand = mix * new[bad] + (1 - mix) * rho[idx[bad]]
            cp = probs(cand)
            cl = _loglik(cp, flat[idx[bad]])
            sub = np.nonzero(bad)[0]
            ok = cl >= ll[idx[bad]] - 1e-12 * np.abs(ll[idx[bad]])
            new[sub[ok]], new_p[sub[ok]], new_ll[sub[ok]] = cand[ok], cp[ok], cl[ok]
            bad[sub[ok]] = False
            mix /= 2
        # members that cannot improve keep their state
        new[bad], new_p[bad], new_ll[bad] = rho[idx[bad]], p[idx[bad]], ll[idx[bad]]
        rel = np.abs(new_ll - ll[idx]) / np.maximum(np.abs(ll[idx]), 1e-300)
        rho[idx], p[idx], ll[idx] = new, new_p, new_ll
        iters[idx] += 1
        if keep_trace:
            for j, b in enumerate(idx):
                traces[b].append(float(new_ll[j]))
        done = (rel < rtol) | bad
        active[idx[done]] = False
    out = []
    for b in range(nb):
        r = (rho[b] + rho[b].conj().T) / 2
        r /= np.trace(r).real
        out.append(ReconstructedState(r, "mle", float(ll[b]), int(iters[b]), traces[b] if keep_trace else []))
    return out


# --- classical shadows ------------------------------------------------------


def _shadow_features(basis: str, outcome: int) -> np.ndarray:
    """Vector ``u`` with ``<u_s, u_t> = Tr(rho_s rho_t)`` for single-shot shadows."""
    n = len(basis)
    feat = np.ones(1)
    for q, b in enumerate(basis):
        sign = 1 - 2 * ((outcome >> (n - 1 - q)) & 1)
        u = np.zeros(4)
        u[0] = 1 / np.sqrt(2)
        u[1 + PAULI_LABELS.index(b)] = 3 / np.sqrt(2) * sign
        feat = np.kron(feat, u)
    return feat


def shadow_purity(dataset: ShotDataset) -> float:
    """Unbiased U-statistic estimate of ``Tr(rho^2)`` from random-Pauli snapshots."""
    n_total = dataset.n_shots
    if n_total < 2:
        raise TomographyError("the shadow estimator needs at least two shots")
    n = dataset.n_measured
    total = np.zeros(4**n)
    for basis in dataset.bases:
        c = dataset.counts(basis)
        for k in np.nonzero(c)[0]:
            total += c[k] * _shadow_features(basis, int(k))
    diag = n_total * 5.0**n
    return float((total @ total - diag) / (n_total * (n_total - 1)))


def shadow_renyi2(dataset: ShotDataset) -> float:
    """Second Renyi entropy ``-log2`` of the shadow purity estimate (``inf`` if non-positive)."""
    p = shadow_purity(dataset)
    return float(-np.log2(p)) if p > 0 else float("inf")


# --- bootstrap --------------------------------------------------------------


def resample(dataset: ShotDataset, rng) -> ShotDataset:
    groups = {b: rng.choice(v, size=len(v), replace=True) for b, v in dataset.groups.items()}
    return ShotDataset(dataset.n_measured, groups, dataset.seed, dataset.circuit_id)


def bootstrap_ci(dataset: ShotDataset, estimator, n_resamples: int = 1000, level: float = 0.95, seed: int = 0):
    """Percentile interval of ``estimator`` under resampling within each basis group."""
    if n_resamples < 100:
        raise ValueError("need at least 100 resamples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    vals = np.array([estimator(resample(dataset, rng)) for _ in range(n_resamples)])
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)

