"""Trapped-ion error model: SPAM, idle dephasing, axial-motion angle errors,
X-flips and Stark-shift phase noise, plus the photon-count calibration models.

Times are in seconds, rates in 1/s, angles in radians. Ions are indexed
``0 .. n_ions - 1`` from one end of the chain; circuit qubits are placed on
ions through an ``ion_map`` (qubit ``q`` sits on ion ``ion_map[q]``).
"""

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from importlib import resources

import numpy as np
from scipy import optimize, special, stats
from scipy.integrate import quad

from .gates import GateOp, GateTiming, schedule

log = logging.getLogger(__name__)

HBAR = 1.054571817e-34
ATOMIC_MASS = 1.66053906660e-27
SOURCES = ("spam", "dephasing", "axial", "x_flip", "stark")
STARK_MODES = ("independent", "shared")


class CalibrationError(ValueError):
    """Invalid or incomplete calibration data."""


# --- axial modes ------------------------------------------------------------


def equilibrium_positions(n_ions: int, quartic: float = 0.0) -> np.ndarray:
    """Dimensionless equilibrium positions of ions in a (quartic-corrected) harmonic well.

    Lengths are in units of ``(e^2 / (4 pi eps0 m omega_z^2))^(1/3)``; the
    potential is ``sum u^2/2 + quartic * u^4/4`` plus Coulomb repulsion.
    """
    if n_ions == 1:
        return np.zeros(1)

    def grad(u):
        d = u[:, None] - u[None, :]
        np.fill_diagonal(d, np.inf)
        return u + quartic * u**3 - np.sum(np.sign(d) / d**2, axis=1)

    guess = np.linspace(-1, 1, n_ions) * 1.1 * n_ions**0.56
    sol = optimize.root(grad, guess, method="hybr", tol=1e-14)
    if not sol.success:
        raise RuntimeError(f"equilibrium solve failed: {sol.message}")
    return np.sort(sol.x)


def axial_modes(n_ions: int, quartic: float = 0.0):
    """Axial normal modes; returns ``(frequencies / omega_z, vectors)`` sorted ascending.

    Column ``k`` of ``vectors`` is mode ``k``; entries are the participation factors.
    """
    u = equilibrium_positions(n_ions, quartic)
    d = np.abs(u[:, None] - u[None, :])
    np.fill_diagonal(d, np.inf)
    hess = -2.0 / d**3
    np.fill_diagonal(hess, 1 + 3 * quartic * u**2 + np.sum(2.0 / d**3, axis=1))
    vals, vecs = np.linalg.eigh(hess)
    vecs = vecs * np.sign(vecs.sum(axis=0) + 1e-300)
    return np.sqrt(vals), vecs


def participation_factors(n_ions: int, quartic: float = 0.0) -> np.ndarray:
    """Participation factors of every ion in the lowest axial mode (unit norm)."""
    return axial_modes(n_ions, quartic)[1][:, 0]


# --- calibration ------------------------------------------------------------


@dataclass(frozen=True)
class NoiseCalibration:
    """Error-model parameters (SI units).

    ``sigma_phi`` maps ion index (as a string) to the Stark phase standard
    deviation per fully-entangling gate; ``p_x_table`` maps ``"i,j"`` to the
    X-flip probability of one ion per XX(pi/2). Both accept a ``"default"``
    entry used for missing keys. ``sources`` lists the enabled error sources.
    """

    p: float = 1e-4
    p_d: float = 1.6e-3
    p_b: float = 4.5e-3
    T2_star: float = 0.3
    n_bar_0: float = 409.0
    n_dot: float = 133e3
    delta_n: float = 8.0
    omega_0: float = 2 * np.pi * 241.8e3
    ion_mass: float = 170.936323 * ATOMIC_MASS
    waist_w: float = 646e-9
    n_ions: int = 15
    b: tuple = None
    sigma_phi: dict = field(default_factory=lambda: {"default": 0.02})
    p_x_table: dict = field(default_factory=lambda: {"default": 5e-4})
    eta_gamma: float = 4.5e4
    R_b: float = 300.0
    R_d: float = 18.0
    timing: GateTiming = GateTiming()
    stark_mode: str = "independent"
    sources: tuple = SOURCES
    t_start: float = 0.0

    def __post_init__(self):
        for name in ("p", "p_d", "p_b"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise CalibrationError(f"{name}={v} is not a probability")
        for name in ("T2_star", "omega_0", "ion_mass", "waist_w"):
            if getattr(self, name) <= 0:
                raise CalibrationError(f"{name} must be positive")
        for name in ("n_bar_0", "n_dot", "eta_gamma", "R_b", "R_d", "t_start"):
            if getattr(self, name) < 0:
                raise CalibrationError(f"{name} must be non-negative")
        if self.delta_n < 1:
            raise CalibrationError("delta_n must be at least 1")
        if self.stark_mode not in STARK_MODES:
            raise CalibrationError(f"stark_mode must be one of {STARK_MODES}")
        unknown = set(self.sources) - set(SOURCES)
        if unknown:
            raise CalibrationError(f"unknown noise sources {sorted(unknown)}")
        b = participation_factors(self.n_ions) if self.b is None else np.asarray(self.b, dtype=float)
        if b.shape != (self.n_ions,):
            raise CalibrationError(f"need {self.n_ions} participation factors, got {b.shape}")
        object.__setattr__(self, "b", tuple(float(x) for x in b))
        for table in (self.sigma_phi, self.p_x_table):
            for k, v in table.items():
                if v < 0:
                    raise CalibrationError(f"negative calibration entry {k}={v}")
        if isinstance(self.timing, dict):
            object.__setattr__(self, "timing", GateTiming(**self.timing))

    # tables

    def enabled(self, source: str) -> bool:
        return source in self.sources

    def with_sources(self, *sources) -> "NoiseCalibration":
        return replace(self, sources=tuple(sources))

    def decay_coefficient(self, ion: int) -> float:
        """``epsilon_i / n_bar``: angle error per phonon for ion ``ion``."""
        return HBAR * self.b[ion] ** 2 / (self.ion_mass * self.omega_0 * self.waist_w**2)

    def stark_sigma(self, ion: int) -> float:
        key = str(ion)
        if key in self.sigma_phi:
            return float(self.sigma_phi[key])
        if "default" in self.sigma_phi:
            return float(self.sigma_phi["default"])
        raise CalibrationError(f"no Stark-noise entry for ion {ion}")

    def x_flip_table(self, ion_i: int, ion_j: int) -> float:
        for key in (f"{ion_i},{ion_j}", f"{ion_j},{ion_i}"):
            if key in self.p_x_table:
                return float(self.p_x_table[key])
        if "default" in self.p_x_table:
            return float(self.p_x_table["default"])
        raise CalibrationError(f"no X-flip entry for ion pair ({ion_i}, {ion_j})")

    def n_bar(self, t) -> np.ndarray:
        return self.n_bar_0 + self.n_dot * np.asarray(t)

    def default_ion_map(self, n_qubits: int) -> tuple:
        if n_qubits > self.n_ions:
            raise CalibrationError(f"{n_qubits} qubits do not fit on {self.n_ions} ions")
        off = (self.n_ions - n_qubits) // 2
        return tuple(range(off, off + n_qubits))

    # serialization

    def to_dict(self) -> dict:
        d = asdict(self)
        d["timing"] = asdict(self.timing)
        d["b"] = list(self.b)
        d["sources"] = list(self.sources)
        d["version"] = 1
        return d

    @classmethod
    def from_dict(cls, d) -> "NoiseCalibration":
        d = dict(d)
        d.pop("version", None)
        d.pop("description", None)
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise CalibrationError(f"unknown calibration fields {sorted(extra)}")
        if "timing" in d and isinstance(d["timing"], dict):
            d["timing"] = GateTiming(**d["timing"])
        if d.get("b") is not None:
            d["b"] = tuple(d["b"])
        if "sources" in d:
            d["sources"] = tuple(d["sources"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "NoiseCalibration":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    @classmethod
    def paper(cls) -> "NoiseCalibration":
        """Bundled calibration with the published fitted values."""
        text = resources.files("holomera.data").joinpath("paper.json").read_text()
        return cls.from_dict(json.loads(text))


# --- simple channels --------------------------------------------------------


def dephasing_prob(cal: NoiseCalibration, idle_time: float) -> float:
    """Z-flip probability ``t / (2 T2*)``, capped at 1/2."""
    if idle_time < 0:
        raise ValueError("idle time must be non-negative")
    return float(min(idle_time / (2 * cal.T2_star), 0.5))


def spam_channel(cal: NoiseCalibration, stage: str) -> float:
    """Flip probability of one SPAM stage: ``prep``, ``measure_dark`` or ``measure_bright``."""
    if cal.p > cal.p_d or cal.p > cal.p_b:
        raise CalibrationError("preparation error exceeds a measured SPAM error")
    if stage == "prep":
        return cal.p
    if stage == "measure_dark":
        return cal.p_d - cal.p
    if stage == "measure_bright":
        return cal.p_b - cal.p
    raise ValueError(f"unknown SPAM stage {stage!r}")


def readout_confusion(cal: NoiseCalibration) -> np.ndarray:
    """Column-stochastic ``P(read | true)`` for one qubit."""
    e0 = spam_channel(cal, "measure_dark")
    e1 = spam_channel(cal, "measure_bright")
    return np.array([[1 - e0, e1], [e0, 1 - e1]])


def x_flip_prob(cal: NoiseCalibration, ion_i: int, ion_j: int, theta: float) -> float:
    """Per-ion X-flip probability of an ``XX(theta)`` gate, linear in ``|theta|``."""
    return float(min(abs(theta) / (np.pi / 2) * cal.x_flip_table(ion_i, ion_j), 0.5))


def decay_parameter(cal: NoiseCalibration, ion: int, n_bar: float) -> float:
    """Mean dimensionless decay parameter ``hbar b^2 n / (m omega_0 w^2)``."""
    if n_bar < 0:
        raise ValueError("phonon number must be non-negative")
    return cal.decay_coefficient(ion) * n_bar


# --- phonon random walk -----------------------------------------------------


@dataclass
class PhononTrajectory:
    """Sampled phonon-number paths of mode 0.

    ``n_t[b, k]`` is the phonon number of path ``b`` at ``times[k]``;
    ``n_avg[b, g]`` is its time average over gate window ``g``.
    """

    times: np.ndarray
    n_t: np.ndarray
    n_avg: np.ndarray
    windows: np.ndarray


def _window_times(windows):
    pts = sorted({float(x) for s, d in windows for x in (s, s + d)})
    return np.array(pts)


def _walk_event_driven(n0, bounds, cal, rng):
    """Continuous-time limit of the coarse-grained walk.

    Jumps of ``+-delta_n`` occur at rates ``(n + dn) ndot / dn^2`` and
    ``n ndot / dn^2``; the phonon number cannot drop below zero.
    """
    dn, ndot = cal.delta_n, cal.n_dot
    b_total, k_total = len(n0), len(bounds)
    out_int = np.zeros((b_total, k_total))
    out_n = np.zeros((b_total, k_total))
    ids = np.arange(b_total)
    n = n0.astype(float).copy()
    t = np.zeros(b_total)
    acc = np.zeros(b_total)
    nxt = np.zeros(b_total, dtype=int)
    if ndot == 0:
        out_n[:] = n[:, None]
        out_int[:] = n[:, None] * bounds[None, :]
        return out_int, out_n
    while ids.size:
        rate = (2 * n + dn) * ndot / dn**2
        tau = rng.exponential(1.0, ids.size) / rate
        t_new = t + tau
        while True:
            b = bounds[np.minimum(nxt, k_total - 1)]
            cross = (nxt < k_total) & (b <= t_new)
            if not cross.any():
                break
            rows = ids[cross]
            cols = nxt[cross]
            out_int[rows, cols] = acc[cross] + n[cross] * (b[cross] - t[cross])
            out_n[rows, cols] = n[cross]
            nxt[cross] += 1
        acc += n * tau
        t = t_new
        up = rng.random(ids.size) < (n + dn) / (2 * n + dn)
        n = np.where(up, n + dn, np.maximum(n - dn, 0.0))
        live = nxt < k_total
        if not live.all():
            ids, n, t, acc, nxt = ids[live], n[live], t[live], acc[live], nxt[live]
    return out_int, out_n


def _walk_discrete(n0, bounds, cal, rng):
    """Fixed-step walk with a shared step shrunk to keep probabilities valid."""
    dn, ndot = cal.delta_n, cal.n_dot
    b_total, k_total = len(n0), len(bounds)
    out_int = np.zeros((b_total, k_total))
    out_n = np.zeros((b_total, k_total))
    n = n0.astype(float).copy()
    acc = np.zeros(b_total)
    t = 0.0
    k = 0
    while k < k_total:
        while k < k_total and bounds[k] <= t + 1e-15:
            out_int[:, k] = acc
            out_n[:, k] = n
            k += 1
        if k == k_total:
            break
        if ndot == 0:
            dt = bounds[k] - t
        else:
            dt = min(dn**2 / (ndot * (2 * n.max() + dn)), bounds[k] - t)
        q = ndot * dt / dn
        u = rng.random(b_total)
        p_up = (n + dn) / dn * q
        p_down = n / dn * q
        acc += n * dt
        n = np.where(u < p_up, n + dn, np.where(u < p_up + p_down, np.maximum(n - dn, 0.0), n))
        t += dt
    return out_int, out_n


def sample_initial_phonons(cal: NoiseCalibration, size: int, rng) -> np.ndarray:
    return rng.exponential(cal.n_bar_0, size) if cal.n_bar_0 > 0 else np.zeros(size)


def sample_phonon_trajectory(cal: NoiseCalibration, windows, rng_seed=0, n_paths: int = 1,
                             method: str = "event") -> PhononTrajectory:
    """Sample phonon paths and their averages over the gate windows.

    Args:
        cal: calibration (``n_bar_0``, ``n_dot``, ``delta_n``).
        windows: ``(start, duration)`` pairs in seconds, measured from the end
            of cooling. ``gates.schedule`` output can be passed directly.
        rng_seed: seed or ``numpy.random.Generator``.
        n_paths: number of independent paths.
        method: ``"event"`` samples the continuous-time limit exactly;
            ``"discrete"`` uses the fixed-step walk with an adaptive step.
    """
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    windows = np.asarray(windows, dtype=float).reshape(-1, 2)
    bounds = _window_times(windows) if len(windows) else np.zeros(1)
    n0 = sample_initial_phonons(cal, n_paths, rng)
    walk = _walk_event_driven if method == "event" else _walk_discrete
    integral, n_at = walk(n0, bounds, cal, rng)
    index = {x: i for i, x in enumerate(bounds)}
    n_avg = np.zeros((n_paths, len(windows)))
    for g, (s, d) in enumerate(windows):
        i0 = index[float(s)]
        if d > 0:
            i1 = index[float(s + d)]
            n_avg[:, g] = (integral[:, i1] - integral[:, i0]) / d
        else:
            n_avg[:, g] = n_at[:, i0]
    return PhononTrajectory(bounds, n_at, n_avg, windows)


def time_average_moments(cal: NoiseCalibration, t: float, dt: float, form: str = "paper"):
    """Mean and variance of the phonon number averaged over ``[t, t + dt]``.

    ``form="paper"`` uses ``mu^2 - n_t ndot dt / 3 + ndot^2 dt^2 / 6``;
    ``form="exact"`` uses ``mu^2 - n_t ndot dt / 3 - ndot^2 dt^2 / 12``, which
    follows from ``Cov(n_s, n_u) = nbar_s^2`` for ``s < u`` in the thermal limit.
    """
    nbar = cal.n_bar(t)
    mu = nbar + cal.n_dot * dt / 2
    if form == "paper":
        var = mu**2 - nbar * cal.n_dot * dt / 3 + (cal.n_dot * dt) ** 2 / 6
    elif form == "exact":
        var = mu**2 - nbar * cal.n_dot * dt / 3 - (cal.n_dot * dt) ** 2 / 12
    else:
        raise ValueError("form must be 'paper' or 'exact'")
    return float(mu), float(var)


# --- gate perturbations -----------------------------------------------------


@dataclass(frozen=True)
class MatrixOp:
    """A gate given directly by its matrix (used for noisy XX gates)."""

    targets: tuple
    matrix: np.ndarray
    kind: str = "U"


def noisy_xx_matrix(theta, phi_i, phi_j) -> np.ndarray:
    """``exp(-i/2 (theta XX + phi_i ZI + phi_j IZ))``; broadcasts over arrays."""
    theta, phi_i, phi_j = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (theta, phi_i, phi_j)))
    out = np.zeros(theta.shape + (4, 4), dtype=complex)
    # even sector {00, 11} and odd sector {01, 10} decouple
    for (a, b), z in (((0, 3), phi_i + phi_j), ((1, 2), phi_i - phi_j)):
        r = np.sqrt(theta**2 + z**2)
        c = np.cos(r / 2)
        s = np.where(r > 0, np.sin(r / 2) / np.where(r > 0, r, 1.0), 0.5)
        out[..., a, a] = c - 1j * s * z
        out[..., b, b] = c + 1j * s * z
        out[..., a, b] = -1j * s * theta
        out[..., b, a] = -1j * s * theta
    return out


def stark_phase(cal: NoiseCalibration, ion: int, theta: float, s) -> np.ndarray:
    return np.asarray(s) * cal.stark_sigma(ion) * abs(theta) / (np.pi / 2)


def perturb_gate(op: GateOp, n_avg: float, cal: NoiseCalibration, rng, ions=None, stark_s=None) -> list:
    """Noisy replacement of one native gate for a single shot.

    Args:
        op: native gate (R, Rz or XX).
        n_avg: phonon number averaged over the gate window.
        cal: calibration; only enabled sources act.
        rng: generator for the Stark sample and X-flips.
        ions: ion index of each target (defaults to the target indices).
        stark_s: externally drawn Gaussian sample (shared-per-shot mode).

    Returns:
        Gate list: the perturbed gate followed by any X flips (as ``R(pi, 0)``).
    """
    if not op.is_native:
        raise ValueError(f"perturb_gate expects a native gate, got {op.kind}")
    ions = tuple(op.targets) if ions is None else tuple(ions)
    if op.kind == "Rz":
        return [op]
    if op.kind == "R":
        theta = op.theta
        if cal.enabled("axial"):
            theta = theta * (1 - cal.decay_coefficient(ions[0]) * n_avg)
        return [GateOp("R", op.targets, theta, op.phi)]
    i, j = ions
    theta = op.theta
    if cal.enabled("axial"):
        theta = theta * (1 - (cal.decay_coefficient(i) + cal.decay_coefficient(j)) * n_avg)
    out = []
    if cal.enabled("stark"):
        s = rng.standard_normal() if stark_s is None else stark_s
        phi_i = float(stark_phase(cal, i, op.theta, s))
        phi_j = float(stark_phase(cal, j, op.theta, s))
        out.append(MatrixOp(op.targets, noisy_xx_matrix(theta, phi_i, phi_j)))
    else:
        out.append(GateOp("XX", op.targets, theta))
    if cal.enabled("x_flip"):
        for q, ion in zip(op.targets, ions):
            if rng.random() < x_flip_prob(cal, i, j, op.theta):
                out.append(GateOp("R", (q,), np.pi, 0.0))
    return out


# --- contrast model ---------------------------------------------------------


def contrast_model(n_gates, theta, eps_bar, alpha, form: str = "paper"):
    """Population of ``|11>`` after ``n_gates`` noisy ``XX(theta)`` gates.

    With ``x = alpha N theta eps`` (``form="paper"``) or ``x = N theta eps / alpha``
    (``form="gamma"``, the characteristic function of a Gamma-distributed
    phonon average), ``P = (1 - C cos(N theta - phi)) / 2`` with
    ``phi = alpha arctan x`` and ``C = (1 + x^2)^(-alpha/2)``.
    """
    n_gates = np.asarray(n_gates, dtype=float)
    if np.any(n_gates < 1) or alpha <= 0:
        raise ValueError("need N >= 1 and alpha > 0")
    if form == "paper":
        x = alpha * n_gates * theta * eps_bar
    elif form == "gamma":
        x = n_gates * theta * eps_bar / alpha
    else:
        raise ValueError("form must be 'paper' or 'gamma'")
    phi = alpha * np.arctan(x)
    contrast = (1 + x**2) ** (-alpha / 2)
    return (1 - contrast * np.cos(n_gates * theta - phi)) / 2


def contrast_prediction(cal: NoiseCalibration, pair, n_gates, theta, t_wait, n_bar_0=None,
                        form: str = "paper", moments: str = "paper"):
    """Model ``P11(N)`` for a gate sequence on ion ``pair`` starting at ``t_wait``."""
    if n_bar_0 is not None:
        cal = replace(cal, n_bar_0=float(n_bar_0))
    step = cal.timing.two_qubit + cal.timing.idle_gap
    coeff = cal.decay_coefficient(pair[0]) + cal.decay_coefficient(pair[1])
    out = []
    for n in np.atleast_1d(n_gates):
        dt = n * step
        mu, var = time_average_moments(cal, t_wait, dt, moments)
        alpha = mu**2 / var
        eps = coeff * cal.n_bar(t_wait + dt / 2)
        out.append(contrast_model(n, theta, eps, alpha, form))
    return np.array(out)


def simulate_contrast_data(cal: NoiseCalibration, pair, n_max: int, theta=np.pi / 2, t_wait=0.0,
                           n_paths: int = 2000, seed=0) -> np.ndarray:
    """Microscopic ``P11(N)`` for ``N = 1..n_max`` from sampled phonon paths.

    Each path runs ``n_max`` gates back to back; the XX rotations commute, so
    the state after ``N`` gates is fixed by the summed perturbed angle.
    """
    cal = cal.with_sources("axial")
    step = cal.timing.two_qubit + cal.timing.idle_gap
    windows = [(t_wait + k * step, cal.timing.two_qubit) for k in range(n_max)]
    traj = sample_phonon_trajectory(cal, windows, seed, n_paths)
    rng = np.random.default_rng(seed)
    angles = np.empty((n_paths, n_max))
    for k in range(n_max):
        for b in range(n_paths):
            angles[b, k] = perturb_gate(GateOp("XX", (0, 1), theta), traj.n_avg[b, k], cal, rng, pair)[0].theta
    total = np.cumsum(angles, axis=1)
    return np.mean(np.sin(total / 2) ** 2, axis=0)


def fit_initial_phonons(cal: NoiseCalibration, pair, p11, theta=np.pi / 2, t_wait=0.0,
                        form: str = "gamma", moments: str = "exact"):
    """Least-squares estimate of ``n_bar_0`` from measured ``P11(N)``, ``N = 1..len(p11)``.

    The default model (Gamma characteristic function with exact window moments)
    is the one consistent with the sampled phonon walk; on walk-generated data
    the printed form (``form="paper", moments="paper"``) underestimates
    ``n_bar_0`` by about 10%.
    """
    n_values = np.arange(1, len(p11) + 1)

    def resid(x):
        return contrast_prediction(cal, pair, n_values, theta, t_wait, x[0], form, moments) - p11

    sol = optimize.least_squares(resid, x0=[cal.n_bar_0 * 0.5 + 50], bounds=([1.0], [1e5]))
    jac = sol.jac
    dof = max(len(p11) - 1, 1)
    s2 = float(sol.fun @ sol.fun) / dof
    err = float(np.sqrt(s2 / (jac.T @ jac)[0, 0])) if (jac.T @ jac)[0, 0] > 0 else float("nan")
    return float(sol.x[0]), err


# --- photon counting --------------------------------------------------------


def _poisson_integral(n, rate, decay, tau):
    """``int_0^tau Pois(n; rate t) decay e^{-decay t} dt`` in closed form (rate + decay > 0)."""
    k = rate + decay
    logpre = np.log(decay) + n * np.log(rate) - (n + 1) * np.log(k) if rate > 0 else None
    if rate == 0:
        return np.where(n == 0, 1 - np.exp(-decay * tau), 0.0)
    return np.exp(logpre) * special.gammainc(n + 1, k * tau)


def photon_count_model(state: str, n, tau: float, cal: NoiseCalibration, include_unpumped: bool = True):
    """Probability of ``n`` detected photons in a detection window ``tau``.

    Bright ions are pumped dark at rate ``R_b`` and stop fluorescing; dark
    ions are pumped bright at rate ``R_d`` and fluoresce for the remaining
    time. For dark ions ``include_unpumped`` adds the ``e^{-R_d tau}`` weight
    of never being pumped (all mass at ``n = 0``), which normalizes the model.
    """
    if tau <= 0:
        raise ValueError("detection time must be positive")
    n = np.asarray(n)
    a = cal.eta_gamma
    if state == "bright":
        r = cal.R_b
        head = np.exp(-r * tau) * stats.poisson.pmf(n, a * tau)
        if r == 0:
            return head
        return head + _poisson_integral(n, a, r, tau)
    if state == "dark":
        r = cal.R_d
        tail = np.where(n == 0, np.exp(-r * tau), 0.0) if include_unpumped else 0.0
        if r == 0:
            return np.asarray(tail, dtype=float) + 0.0 * n
        if a > r:
            # substitute s = tau - t: rate a s, weight r e^{-r tau} e^{r s}
            k = a - r
            logpre = np.log(r) - r * tau + n * np.log(a) - (n + 1) * np.log(k)
            body = np.exp(logpre) * special.gammainc(n + 1, k * tau)
        else:
            body = np.array([quad(lambda t, m=m: stats.poisson.pmf(m, a * (tau - t)) * r * np.exp(-r * t), 0, tau)[0]
                             for m in np.atleast_1d(n)]).reshape(n.shape)
        return body + tail
    raise ValueError("state must be 'bright' or 'dark'")


def fit_pumping_rate(state: str, taus, histograms, cal: NoiseCalibration):
    """Maximum-likelihood ``(rate, eta_gamma)`` from count histograms at several ``tau``.

    ``histograms[k][n]`` is the number of shots with ``n`` photons at ``taus[k]``.
    """
    taus = list(taus)

    def nll(x):
        rate, eg = np.exp(x)
        c = replace(cal, R_b=rate) if state == "bright" else replace(cal, R_d=rate)
        c = replace(c, eta_gamma=eg)
        total = 0.0
        for tau, hist in zip(taus, histograms):
            hist = np.asarray(hist)
            p = photon_count_model(state, np.arange(len(hist)), tau, c)
            total -= np.sum(hist * np.log(np.clip(p, 1e-300, None)))
        return total

    x0 = np.log([cal.R_b if state == "bright" else cal.R_d, cal.eta_gamma])
    sol = optimize.minimize(nll, x0 + 0.2, method="Nelder-Mead", options={"xatol": 1e-8, "fatol": 1e-8})
    rate, eg = np.exp(sol.x)
    return float(rate), float(eg)


def mean_dark_photons(tau, p: float, cal: NoiseCalibration, literal: bool = False):
    """Average photon number collected from an ion prepared dark.

    The bright population relaxes as ``P_b(t) = P_b_inf + (p - P_b_inf) e^{-(R_b + R_d) t}``
    with ``P_b_inf = (R_b / R_d + 1)^-1``; photons arrive at ``eta_gamma P_b(t)``.
    ``literal=True`` integrates ``P_d_inf - (p - P_b_inf) e^{-(R_b + R_d) t}``
    instead, the printed form of the rate equation.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("detection time must be non-negative")
    pb_inf = 1.0 / (cal.R_b / cal.R_d + 1) if cal.R_d > 0 else 0.0
    pd_inf = 1 - pb_inf
    k = cal.R_b + cal.R_d
    decay_int = (1 - np.exp(-k * tau)) / k if k > 0 else tau
    if literal:
        return cal.eta_gamma * (pd_inf * tau - (p - pb_inf) * decay_int)
    return cal.eta_gamma * (pb_inf * tau + (p - pb_inf) * decay_int)


def fit_prep_error(taus, n_avg, sigma, cal: NoiseCalibration, literal: bool = False):
    """Weighted least-squares estimate ``(p, sigma_p)`` of the preparation error."""
    def model(t, p):
        return mean_dark_photons(t, p, cal, literal)

    popt, pcov = optimize.curve_fit(model, np.asarray(taus), np.asarray(n_avg), p0=[1e-3],
                                    sigma=np.asarray(sigma), absolute_sigma=True)
    return float(popt[0]), float(np.sqrt(pcov[0, 0]))


# --- ion mapping ------------------------------------------------------------


def _gate_weights(circuit):
    """Per-qubit single-gate weights and per-pair XX weights (angle in units of pi/2)."""
    n = circuit.n_qubits
    single = np.zeros(n)
    pair = {}
    for op in circuit.lowered().ops:
        w = abs(op.theta) / (np.pi / 2)
        if op.kind == "R":
            single[op.targets[0]] += w
        elif op.kind == "XX":
            key = tuple(sorted(op.targets))
            pair[key] = pair.get(key, 0.0) + w
    return single, pair


def mapping_cost_tables(circuit, cal: NoiseCalibration, n_ions: int):
    """Unary ``U[q, ion]`` and pairwise ``P[ion, ion']`` cost tables of the error proxy."""
    t_mid = cal.t_start + 0.5 * sum(d for _, d in schedule(circuit.lowered(), cal.timing))
    nbar = float(cal.n_bar(t_mid))
    eps = np.array([cal.decay_coefficient(i) * nbar for i in range(n_ions)])
    sig = np.array([cal.stark_sigma(i) for i in range(n_ions)])
    px = np.array([[cal.x_flip_table(i, j) if i != j else 0.0 for j in range(n_ions)] for i in range(n_ions)])
    single, pair = _gate_weights(circuit)
    xx_w = np.zeros(circuit.n_qubits)
    for (q, r), w in pair.items():
        xx_w[q] += w
        xx_w[r] += w
    unary = single[:, None] * eps[None, :] + xx_w[:, None] * (eps + sig)[None, :]
    return unary, 2 * px, pair


def mapping_cost(perm, unary, px, pair) -> float:
    perm = np.asarray(perm)
    cost = unary[np.arange(len(perm)), perm].sum()
    for (q, r), w in pair.items():
        cost += w * px[perm[q], perm[r]]
    return float(cost)


def exhaustive_mapping(circuit, cal: NoiseCalibration, n_ions: int, limit: int = 5_000_000):
    """Globally optimal mapping by enumeration (small instances only)."""
    unary, px, pair = mapping_cost_tables(circuit, cal, n_ions)
    n = circuit.n_qubits
    count = int(np.prod(range(n_ions - n + 1, n_ions + 1)))
    if count > limit:
        raise ValueError(f"{count} assignments exceed the enumeration limit {limit}")
    best, best_cost = None, np.inf
    it = itertools.permutations(range(n_ions), n)
    chunk = 200_000
    while True:
        block = np.array(list(itertools.islice(it, chunk)))
        if block.size == 0:
            break
        cost = unary[np.arange(n)[None, :], block].sum(axis=1)
        for (q, r), w in pair.items():
            cost = cost + w * px[block[:, q], block[:, r]]
        i = int(np.argmin(cost))
        if cost[i] < best_cost - 1e-15:
            best, best_cost = tuple(int(x) for x in block[i]), float(cost[i])
    return best, best_cost


def optimize_ion_mapping(circuit, cal: NoiseCalibration, n_ions: int = None, seed: int = 0,
                         exhaustive_limit: int = 8, restarts: int = 4) -> tuple:
    """Assign circuit qubits to ions minimizing the predicted-error proxy.

    Exhaustive enumeration is used when feasible (at most ``exhaustive_limit``
    qubits and at most 5e6 assignments); otherwise a greedy assignment is
    refined by best-improvement swap search from several seeded starts.
    Returns ``perm`` with ``perm[q]`` the ion of qubit ``q``.
    """
    n_ions = cal.n_ions if n_ions is None else n_ions
    n = circuit.n_qubits
    if n_ions < n:
        raise ValueError("more qubits than ions")
    count = int(np.prod(range(n_ions - n + 1, n_ions + 1)))
    if n <= exhaustive_limit and count <= 5_000_000:
        return exhaustive_mapping(circuit, cal, n_ions)[0]
    return greedy_mapping(circuit, cal, n_ions, seed, restarts)[0]


def greedy_mapping(circuit, cal: NoiseCalibration, n_ions: int, seed: int = 0, restarts: int = 4):
    unary, px, pair = mapping_cost_tables(circuit, cal, n_ions)
    n = circuit.n_qubits
    usage = unary.sum(axis=1)
    ion_cost = unary.sum(axis=0)
    start = np.empty(n, dtype=int)
    start[np.argsort(-usage, kind="stable")] = np.argsort(ion_cost, kind="stable")[:n]
    rng = np.random.default_rng(seed)
    starts = [start] + [rng.permutation(n_ions)[:n] for _ in range(restarts - 1)]
    best, best_cost = None, np.inf
    for perm in starts:
        perm, cost = _swap_search(np.array(perm), unary, px, pair, n_ions)
        if cost < best_cost - 1e-15:
            best, best_cost = perm, cost
    return tuple(int(x) for x in best), best_cost


def _swap_search(perm, unary, px, pair, n_ions):
    cost = mapping_cost(perm, unary, px, pair)
    n = len(perm)
    while True:
        best_move, best_cost = None, cost
        free = [i for i in range(n_ions) if i not in set(perm.tolist())]
        for q in range(n):
            for r in range(q + 1, n):
                cand = perm.copy()
                cand[q], cand[r] = cand[r], cand[q]
                c = mapping_cost(cand, unary, px, pair)
                if c < best_cost - 1e-15:
                    best_move, best_cost = cand, c
            for ion in free:
                cand = perm.copy()
                cand[q] = ion
                c = mapping_cost(cand, unary, px, pair)
                if c < best_cost - 1e-15:
                    best_move, best_cost = cand, c
        if best_move is None:
            return perm, cost
        perm, cost = best_move, best_cost


# --- batched noisy execution ------------------------------------------------


def _r_matrices(theta, phi) -> np.ndarray:
    """Batch of ``R(theta_b, phi)`` matrices."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 1, 1] = c
    out[..., 0, 1] = -1j * s * np.exp(-1j * phi)
    out[..., 1, 0] = -1j * s * np.exp(1j * phi)
    return out


@dataclass
class NoisyRun:
    """Batch of noisy statevectors plus what is needed to finish the shot.

    ``slot_n_avg[:, k]`` is the phonon average over the basis-rotation slot
    of the ``k``-th measured qubit; ``stark_s`` is the per-path Stark sample
    used in shared mode.
    """

    states: np.ndarray
    measured: list
    ion_map: tuple
    slot_n_avg: np.ndarray
    cal: NoiseCalibration


class _BatchOps:
    """Pauli flips and gates applied to selected members of a state batch."""

    def __init__(self, n_qubits):
        self.n = n_qubits
        idx = np.arange(2**n_qubits)
        self.bit = [(idx >> (n_qubits - 1 - q)) & 1 for q in range(n_qubits)]
        self.zsign = [1 - 2 * b for b in self.bit]
        self.xperm = [idx ^ (1 << (n_qubits - 1 - q)) for q in range(n_qubits)]

    def z_flip(self, states, mask, q):
        if mask.any():
            states[mask] *= self.zsign[q]

    def x_flip(self, states, mask, q):
        if mask.any():
            states[mask] = states[mask][:, self.xperm[q]]


def _dephase(states, ops, cal, rng, dur, addressed):
    if not cal.enabled("dephasing"):
        return
    b = states.shape[0]
    for q in range(ops.n):
        t = cal.timing.idle_gap + (0.0 if q in addressed else dur)
        ops.z_flip(states, rng.random(b) < dephasing_prob(cal, t), q)


def simulate_noisy(circuit, cal: NoiseCalibration, n_paths: int, rng, ion_map=None) -> NoisyRun:
    """Run ``n_paths`` independent noisy executions of ``circuit``.

    Each path gets its own phonon trajectory, preparation flips, Stark
    samples, X-flips and idle Z-flips. Basis rotations and readout are left
    to :func:`finish_noisy`, so one batch can serve several bases.
    """
    from .gates import apply_matrix, gate_matrix, zero_state

    circ = circuit.lowered()
    n = circ.n_qubits
    measured = list(circ.measured_qubits) or list(range(n))
    ion_map = cal.default_ion_map(n) if ion_map is None else tuple(ion_map)
    if len(ion_map) != n or len(set(ion_map)) != n or max(ion_map) >= cal.n_ions:
        raise CalibrationError(f"invalid ion map {ion_map}")
    sched = schedule(circ, cal.timing)
    t_end = max((s + d for s, d in sched), default=0.0)
    slot = cal.timing.single_qubit + cal.timing.idle_gap
    slots = [(t_end + cal.timing.idle_gap + k * slot, cal.timing.single_qubit) for k in range(len(measured))]
    windows = [(cal.t_start + s, d) for s, d in sched + slots]
    if cal.enabled("axial"):
        n_avg = sample_phonon_trajectory(cal, windows, rng, n_paths).n_avg
    else:
        n_avg = np.zeros((n_paths, len(windows)))
    shared_s = rng.standard_normal(n_paths) if cal.stark_mode == "shared" else None

    ops = _BatchOps(n)
    states = np.tile(zero_state(n), (n_paths, 1))
    if cal.enabled("spam"):
        for q in range(n):
            ops.x_flip(states, rng.random(n_paths) < spam_channel(cal, "prep"), q)
    for g, op in enumerate(circ.ops):
        dur = sched[g][1]
        if op.kind == "Rz":
            states = apply_matrix(states, gate_matrix(op), op.targets)
            continue
        ions = [ion_map[q] for q in op.targets]
        coeff = sum(cal.decay_coefficient(i) for i in ions) if cal.enabled("axial") else 0.0
        theta = op.theta * (1 - coeff * n_avg[:, g])
        if op.kind == "R":
            states = apply_matrix(states, _r_matrices(theta, op.phi), op.targets)
        else:
            if cal.enabled("stark"):
                s = shared_s if shared_s is not None else rng.standard_normal(n_paths)
                u = noisy_xx_matrix(theta, stark_phase(cal, ions[0], op.theta, s),
                                    stark_phase(cal, ions[1], op.theta, s))
            else:
                u = noisy_xx_matrix(theta, 0.0, 0.0)
            states = apply_matrix(states, u, op.targets)
            if cal.enabled("x_flip"):
                p = x_flip_prob(cal, ions[0], ions[1], op.theta)
                for q in op.targets:
                    ops.x_flip(states, rng.random(n_paths) < p, q)
        _dephase(states, ops, cal, rng, dur, op.targets)
    return NoisyRun(states, measured, ion_map, n_avg[:, len(sched):], cal)


def finish_noisy(run: NoisyRun, basis: str, rng) -> np.ndarray:
    """Apply noisy basis rotations; return per-path outcome distributions (before readout flips)."""
    from .gates import apply_matrix, basis_rotation_ops, measure_distribution

    cal = run.cal
    states = run.states.copy()
    ops = _BatchOps(states.shape[1].bit_length() - 1)
    for k, (q, b) in enumerate(zip(run.measured, basis)):
        for op in basis_rotation_ops(b, q):
            coeff = cal.decay_coefficient(run.ion_map[q]) if cal.enabled("axial") else 0.0
            theta = op.theta * (1 - coeff * run.slot_n_avg[:, k])
            states = apply_matrix(states, _r_matrices(theta, op.phi), op.targets)
            _dephase(states, ops, cal, rng, cal.timing.single_qubit, op.targets)
    probs = np.abs(states) ** 2
    m = len(run.measured)
    n = ops.n
    rest = tuple(1 + q for q in range(n) if q not in run.measured)
    t = probs.reshape((-1,) + (2,) * n)
    t = t.sum(axis=rest) if rest else t
    order = [0] + [1 + i for i in np.argsort(np.argsort(run.measured))]
    t = np.transpose(t, order).reshape(len(states), 2**m)
    return t / t.sum(axis=1, keepdims=True)


def readout_matrix(cal: NoiseCalibration, n_measured: int) -> np.ndarray:
    """Confusion matrix on ``n_measured`` bits (identity when SPAM is disabled)."""
    one = readout_confusion(cal) if cal.enabled("spam") else np.eye(2)
    out = np.ones((1, 1))
    for _ in range(n_measured):
        out = np.kron(out, one)
    return out


def apply_readout_flips(outcomes, n_measured: int, cal: NoiseCalibration, rng) -> np.ndarray:
    """Flip measured bits: 0 -> 1 with ``p_d - p`` and 1 -> 0 with ``p_b - p``."""
    outcomes = np.asarray(outcomes).copy()
    if not cal.enabled("spam"):
        return outcomes
    e0, e1 = spam_channel(cal, "measure_dark"), spam_channel(cal, "measure_bright")
    for k in range(n_measured):
        shift = n_measured - 1 - k
        bit = (outcomes >> shift) & 1
        u = rng.random(outcomes.shape)
        flip = np.where(bit == 0, u < e0, u < e1)
        outcomes ^= flip.astype(outcomes.dtype) << shift
    return outcomes
