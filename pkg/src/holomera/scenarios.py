"""Experiment scenarios: configuration, per-cell computations and CSV rows.

Each scenario is a grid of independent ``(g, T)`` cells. A cell returns a
list of row dicts; every row carries ``scenario``, ``g``, ``T`` and the cell
seed. Cell seeds are derived from the global seed, ``g`` and ``T`` so cells
can run in any order or in parallel with identical results.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

from .analysis import (
    concurrence,
    entanglement_report,
    exact_tfim_oracle,
    fidelity,
    renyi_entropy,
    single_site_entropy,
)
from .gates import reduced_density_matrix, run
from .mera.channels import half_chain_purity
from .mera.circuits import build_boundary_cone, build_local_cone
from .mera.observables import pair_observables
from .mera.params import MeraParams
from .noise import (
    SOURCES,
    NoiseCalibration,
    fit_initial_phonons,
    fit_prep_error,
    fit_pumping_rate,
    mean_dark_photons,
    photon_count_model,
    simulate_contrast_data,
)
from .optimizer import OptimizerConfig, TfimSpec, critical_mera, optimize_finite, optimize_sequence
from .tomography import (
    MAX_TOMO_QUBITS,
    ideal_distribution,
    mle_batch,
    mle_reconstruct,
    noise_averaged_distributions,
    pauli_settings,
    run_shots,
    shadow_renyi2,
)

SCENARIOS = ("sweep_g", "scaling_critical", "scaling_gapped", "tomography", "noise_breakdown", "calibrate_fit")
BREAKDOWN_CASES = ("full_noise", "shot_only") + SOURCES
CAPTION_SHOTS = {1: 8000, 2: 5000, 3: 3000, 4: 2000}

DEFAULTS = {
    "sweep_g": {"g_values": [round(0.2 + 0.1 * k, 2) for k in range(19)], "T_values": [3], "shots": 2000},
    "scaling_critical": {"g_values": [1.0], "T_values": [1, 2, 3, 4, 5], "shots": 1500},
    "scaling_gapped": {"g_values": [1.5], "T_values": [1, 2, 3, 4], "shots": None},
    "tomography": {"g_values": [1.0, 1.5], "T_values": [1, 2, 3], "shots": None},
    "noise_breakdown": {"g_values": [1.0], "T_values": [4], "cells": [[1.0, 4], [1.5, 1]], "shots": 1500,
                        "trials": 1000},
    "calibrate_fit": {"g_values": [0.0], "T_values": [0], "shots": 20000},
}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    """Scenario settings; ``noise`` is ``"off"``, ``"paper"`` or a calibration JSON path.

    ``cells`` optionally lists explicit ``[g, T]`` pairs instead of the
    ``g_values x T_values`` grid. ``shots`` of ``None`` uses the per-T
    caption counts. ``budget`` caps the cost estimate checked by ``validate``.
    """

    scenario: str
    seed: int
    g_values: list = None
    T_values: list = None
    cells: list = None
    shots: int = None
    trials: int = 100
    noise: str = "off"
    n_paths: int = 2000
    optimizer: dict = field(default_factory=lambda: {"method": "finite_diff_lbfgs", "restarts": 3})
    budget: float = 1e13
    out: str = None

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: must be one of {', '.join(SCENARIOS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed: must be an integer")
        d = DEFAULTS[self.scenario]
        if self.cells is None and self.g_values is None and self.T_values is None and "cells" in d:
            self.cells = [list(c) for c in d["cells"]]
        if self.g_values is None:
            self.g_values = list(d["g_values"])
        if self.T_values is None:
            self.T_values = list(d["T_values"])
        if self.shots is None and "shots" in d and d["shots"] is not None and self.scenario != "tomography":
            self.shots = d["shots"]
        if self.scenario == "noise_breakdown" and "trials" in d and self.trials == 100:
            self.trials = d["trials"]
        for g in self.g_values:
            if not isinstance(g, (int, float)) or g < 0:
                raise ConfigError(f"g_values: {g!r} is not a non-negative number")
        for t in self.T_values:
            if not isinstance(t, int) or t < 0:
                raise ConfigError(f"T_values: {t!r} is not a non-negative integer")
        if self.shots is not None and (not isinstance(self.shots, int) or self.shots < 1):
            raise ConfigError("shots: must be a positive integer")
        if self.trials < 1 or self.n_paths < 1:
            raise ConfigError("trials and n_paths must be positive")
        try:
            OptimizerConfig(**self.optimizer)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"optimizer: {exc}") from None

    @classmethod
    def from_dict(cls, d) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        if "scenario" not in d:
            raise ConfigError("scenario: missing required field")
        if "seed" not in d:
            raise ConfigError("seed: missing required field")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"{sorted(unknown)[0]}: unknown field")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def cell_list(self) -> list:
        if self.cells is not None:
            return [(float(g), int(t)) for g, t in self.cells]
        return [(float(g), int(t)) for g in self.g_values for t in self.T_values]

    def cell_seed(self, g: float, t: int) -> int:
        key = f"{self.seed}:{float(g)!r}:{int(t)}".encode()
        return int.from_bytes(hashlib.sha256(key).digest()[:4], "little")

    def shots_for(self, t: int) -> int:
        return self.shots if self.shots is not None else CAPTION_SHOTS.get(t, 2000)

    def optimizer_config(self) -> OptimizerConfig:
        opts = dict(self.optimizer)
        opts.setdefault("seed", self.seed)
        return OptimizerConfig(**opts)

    def calibration(self):
        if self.noise in (None, "off"):
            return None
        if self.noise == "paper":
            return NoiseCalibration.paper()
        return NoiseCalibration.load(self.noise)


def measured_qubits_for(scenario: str, t: int) -> int:
    if scenario == "sweep_g":
        return 2
    if scenario in ("scaling_critical", "scaling_gapped", "tomography", "noise_breakdown"):
        return max(t, 1)
    return 0


def estimate_cost(cfg: ExperimentConfig) -> float:
    """Rough cost: simulated shots times circuit size (qubits x gates)."""
    total = 0.0
    for g, t in cfg.cell_list():
        m = measured_qubits_for(cfg.scenario, t)
        size = (2 * t + 2) * (12 * t + 3)
        if cfg.scenario == "tomography":
            if m > MAX_TOMO_QUBITS:
                raise ConfigError(f"T_values: tomography of {m} measured qubits needs 3^{m} settings; refused")
            total += 3**m * cfg.shots_for(t) * size
        elif cfg.scenario == "noise_breakdown":
            if m > MAX_TOMO_QUBITS:
                raise ConfigError(f"T_values: tomography of {m} measured qubits needs 3^{m} settings; refused")
            total += len(BREAKDOWN_CASES) * (cfg.n_paths * 3**m * size + cfg.trials * 3**m * 4**m * 500)
        elif cfg.scenario == "sweep_g":
            total += 3 * (cfg.shots or 0) * size + 1e6
        elif cfg.scenario in ("scaling_critical", "scaling_gapped"):
            total += (cfg.shots_for(t) * 3**min(m, MAX_TOMO_QUBITS)) * size
        else:
            total += 1e8
    return float(total)


# --- parameter sources ----------------------------------------------------


def _opt_key(cfg: OptimizerConfig):
    return tuple(sorted(asdict(cfg).items()))


@lru_cache(maxsize=64)
def _finite(g: float, t: int, opt_key) -> MeraParams:
    return optimize_finite(TfimSpec(g), t, OptimizerConfig(**dict(opt_key))).params


@lru_cache(maxsize=16)
def _gapped_sequence(g: float, t_max: int, opt_key) -> dict:
    res = optimize_sequence(TfimSpec(g), list(range(1, t_max + 1)), OptimizerConfig(**dict(opt_key)))
    return {t: r.params for t, r in res.items()}


@lru_cache(maxsize=8)
def _critical(g: float, opt_key) -> MeraParams:
    return critical_mera(OptimizerConfig(**dict(opt_key)), g)["boundary"]


def local_params(g: float, t: int, opt: OptimizerConfig) -> MeraParams:
    """Finite-T optimum used for local observables."""
    return _finite(float(g), int(t), _opt_key(opt))


def boundary_params(g: float, t: int, opt: OptimizerConfig) -> MeraParams:
    """State used for half-chain quantities.

    At ``g = 1`` the scale-invariant cell with the boundary-optimized top;
    otherwise a finite-T optimum warm-started from ``T - 1`` layers.
    """
    if abs(g - 1.0) < 1e-12:
        return _critical(float(g), _opt_key(opt)).with_layers(int(t))
    return _gapped_sequence(float(g), int(t), _opt_key(opt))[int(t)]


def boundary_state(params: MeraParams):
    cone = build_boundary_cone(params)
    psi = run(cone)
    return cone, psi, reduced_density_matrix(psi, cone.measured_qubits)


# --- cells ----------------------------------------------------------------


def _row(cfg, g, t, seed, **values):
    return {"scenario": cfg.scenario, "g": g, "T": t, "seed": seed, **values}


def _pair_estimates(ds) -> dict:
    out = {}
    for basis, name in (("XX", "x"), ("YY", "y"), ("ZZ", "z")):
        o = ds.groups[basis]
        b0, b1 = (o >> 1) & 1, o & 1
        s0, s1 = 1 - 2 * b0, 1 - 2 * b1
        out[name] = float(np.mean((s0 + s1) / 2))
        out[name + name] = float(np.mean(s0 * s1))
    return out


def cell_sweep_g(cfg, g, t, seed, cal):
    params = local_params(g, t, cfg.optimizer_config())
    obs = pair_observables(params)
    row = _row(cfg, g, t, seed,
               energy=float(params.meta["energy"]),
               energy_exact=exact_tfim_oracle(g, "energy_density"),
               x=obs["x"], x_exact=exact_tfim_oracle(g, "magnetization_x"),
               z=obs["z"], z_exact=exact_tfim_oracle(g, "z"),
               xx=obs["xx"], xx_exact=exact_tfim_oracle(g, "xx"),
               zz=obs["zz"], zz_exact=exact_tfim_oracle(g, "zz"),
               yy=obs["yy"],
               s2_site=single_site_entropy(obs["x"], obs["z"]),
               concurrence=concurrence(obs["xx"], obs["yy"], obs["zz"], obs["x"], obs["z"]))
    if cfg.shots:
        circ = build_local_cone(params)
        ds = run_shots(circ, ["XX", "YY", "ZZ"], cfg.shots, seed, cal)
        est = _pair_estimates(ds)
        row.update({f"{k}_shots": v for k, v in est.items()})
    return [row]


def _half_chain_rows(cfg, g, t, seed, cal):
    params = boundary_params(g, t, cfg.optimizer_config())
    s2 = -np.log2(half_chain_purity(params)) if t > 0 else 0.0
    cone, _, rho = boundary_state(params)
    rep = entanglement_report(rho)
    row = _row(cfg, g, t, seed, s2_ideal=float(s2), s2_boundary=renyi_entropy(rho, 2),
               zeta0=rep.zeta[0], zeta1=rep.zeta[1] if len(rep.zeta) > 1 else float("inf"),
               log2_gap=float(np.log2(rep.schmidt_gap)) if rep.schmidt_gap > 0 else float("-inf"))
    if t > 0:
        n = cfg.shots_for(t) * 3 ** len(cone.measured_qubits)
        ds = run_shots(cone, "random", n, seed, cal)
        row["s2_shadow"] = shadow_renyi2(ds)
        row["shadow_shots"] = n
    return [row]


def cell_scaling(cfg, g, t, seed, cal):
    return _half_chain_rows(cfg, g, t, seed, cal)


def cell_tomography(cfg, g, t, seed, cal):
    params = boundary_params(g, t, cfg.optimizer_config())
    cone, _, rho = boundary_state(params)
    ideal = entanglement_report(rho)
    ds = run_shots(cone, pauli_settings(len(cone.measured_qubits)), cfg.shots_for(t), seed, cal)
    rec = mle_reconstruct(ds)
    got = entanglement_report(rec.rho)
    rows = []
    for i in range(len(got.spectrum)):
        rows.append(_row(cfg, g, t, seed, index=i,
                         lambda_ideal=ideal.spectrum[i], zeta_ideal=ideal.zeta[i], parity_ideal=ideal.parity[i],
                         lambda_rec=got.spectrum[i], zeta_rec=got.zeta[i], parity_rec=got.parity[i],
                         fidelity=fidelity(rec.rho, rho), mle_iterations=rec.iterations))
    return rows


def noise_breakdown(params: MeraParams, cal: NoiseCalibration, shots: int, trials: int, n_paths: int,
                    seed: int, cases=BREAKDOWN_CASES) -> dict:
    """Per-case ``zeta_0`` and infidelity of reconstructed boundary states.

    Every case averages ``n_paths`` noisy executions into per-basis outcome
    distributions, then draws ``trials`` independent multinomial datasets of
    ``shots`` per basis and reconstructs each by maximum likelihood.
    """
    cone, psi, rho = boundary_state(params)
    bases = pauli_settings(len(cone.measured_qubits))
    out = {}
    for c_index, case in enumerate(cases):
        if case == "shot_only":
            dist = {b: ideal_distribution(psi, cone.measured_qubits, b) for b in bases}
        else:
            sources = SOURCES if case == "full_noise" else (case,)
            dist = noise_averaged_distributions(cone, cal.with_sources(*sources), bases, n_paths, seed + 7919 * c_index)
        rng = np.random.default_rng([seed, c_index])
        counts = np.stack([np.stack([rng.multinomial(shots, dist[b] / dist[b].sum()) for b in bases])
                           for _ in range(trials)])
        recs = mle_batch(bases, counts, keep_trace=False)
        zeta0 = np.array([-np.log2(np.linalg.eigvalsh(r.rho)[-1]) for r in recs])
        infid = np.array([1 - fidelity(r.rho, rho) for r in recs])
        out[case] = {"zeta0": zeta0, "infidelity": infid}
    out["ideal"] = {"zeta0": np.array([entanglement_report(rho).zeta[0]]), "infidelity": np.zeros(1)}
    return out


def cell_noise_breakdown(cfg, g, t, seed, cal):
    cal = cal or NoiseCalibration.paper()
    params = boundary_params(g, t, cfg.optimizer_config())
    res = noise_breakdown(params, cal, cfg.shots, cfg.trials, cfg.n_paths, seed)
    rows = []
    for case, v in res.items():
        z, f = v["zeta0"], v["infidelity"]
        rows.append(_row(cfg, g, t, seed, case=case, zeta0_mean=float(z.mean()), zeta0_std=float(z.std()),
                         zeta0_q025=float(np.quantile(z, 0.025)), zeta0_q975=float(np.quantile(z, 0.975)),
                         infidelity_mean=float(f.mean()), infidelity_std=float(f.std())))
    return rows


def cell_calibrate_fit(cfg, g, t, seed, cal):
    cal = cal or NoiseCalibration.paper()
    rng = np.random.default_rng(seed)
    shots = cfg.shots or 20000
    rows = []
    taus = [2e-4, 4e-4, 8e-4]
    for state, true_rate in (("bright", cal.R_b), ("dark", cal.R_d)):
        hists = []
        for tau in taus:
            p = photon_count_model(state, np.arange(200), tau, cal)
            hists.append(rng.multinomial(shots, p / p.sum()))
        rate, eg = fit_pumping_rate(state, taus, hists, cal)
        rows.append(_row(cfg, g, t, seed, quantity=f"R_{state[0]}", injected=true_rate, fitted=rate))
        rows.append(_row(cfg, g, t, seed, quantity=f"eta_gamma_{state}", injected=cal.eta_gamma, fitted=eg))
    det = np.linspace(1e-4, 1e-3, 10)
    mean = mean_dark_photons(det, cal.p, cal)
    sigma = np.sqrt(np.maximum(mean, 1e-3) / shots)
    noisy = mean + sigma * rng.standard_normal(det.size)
    p_fit, p_err = fit_prep_error(det, noisy, sigma, cal)
    rows.append(_row(cfg, g, t, seed, quantity="p", injected=cal.p, fitted=p_fit))
    p11 = simulate_contrast_data(cal, (6, 7), 30, n_paths=1000, seed=seed)
    n0, _ = fit_initial_phonons(cal, (6, 7), p11)
    rows.append(_row(cfg, g, t, seed, quantity="n_bar_0", injected=cal.n_bar_0, fitted=n0))
    return rows


CELL_RUNNERS = {
    "sweep_g": cell_sweep_g,
    "scaling_critical": cell_scaling,
    "scaling_gapped": cell_scaling,
    "tomography": cell_tomography,
    "noise_breakdown": cell_noise_breakdown,
    "calibrate_fit": cell_calibrate_fit,
}


def run_cell(cfg: ExperimentConfig, g: float, t: int) -> list:
    seed = cfg.cell_seed(g, t)
    return CELL_RUNNERS[cfg.scenario](cfg, g, t, seed, cfg.calibration())
