"""Variational optimization of MERA angles for the transverse-field Ising chain."""

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .mera.channels import LayerChannel, DoubledMap, steady_state, top_pair_density
from .mera.observables import energy_per_site
from .mera.params import CELL_ANGLES, MeraParams

log = logging.getLogger(__name__)

METHODS = ("nelder_mead", "finite_diff_lbfgs")
RY_COLUMNS = [CELL_ANGLES.index("iso_ry_in"), CELL_ANGLES.index("iso_ry_anc")]


@dataclass(frozen=True)
class TfimSpec:
    g: float

    def __post_init__(self):
        if not self.g >= 0:
            raise ValueError(f"transverse field must be non-negative, got {self.g}")


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings shared by all optimizers.

    ``init_scale`` bounds the uniform initialization ``[-init_scale, init_scale]``.
    """

    method: str = "nelder_mead"
    max_evals: int = 20000
    tolerance: float = 1e-9
    restarts: int = 5
    seed: int = 0
    init_scale: float = 0.2 * np.pi
    jobs: int = 1
    symmetric_polish: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one restart")

    def rng(self, restart: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, restart])


@dataclass
class OptimizationResult:
    params: MeraParams
    energy: float
    converged: bool
    n_evals: int
    trace: list = field(default_factory=list)  # (eval_index, energy, wall_time_s)
    restart_energies: list = field(default_factory=list)

    @property
    def best_trace(self) -> np.ndarray:
        return np.minimum.accumulate([e for _, e, _ in self.trace]) if self.trace else np.array([])

    def write_trace_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eval_index", "energy", "wall_time_s"])
            for i, e, t in self.trace:
                w.writerow([i, repr(float(e)), f"{t:.6f}"])


class _Tracker:
    """Wraps an objective to record every evaluation."""

    def __init__(self, fun, start_index=0, t0=None):
        self.fun = fun
        self.trace = []
        self.index = start_index
        self.t0 = time.perf_counter() if t0 is None else t0
        self.best_x = None
        self.best_f = np.inf

    def __call__(self, x):
        f = float(self.fun(x))
        self.trace.append((self.index, f, time.perf_counter() - self.t0))
        self.index += 1
        if f < self.best_f:
            self.best_f, self.best_x = f, np.array(x, copy=True)
        return f


def _local_minimize(fun, x0, cfg: OptimizerConfig, max_evals: int):
    if cfg.method == "nelder_mead":
        res = minimize(
            fun, x0, method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-8, "fatol": cfg.tolerance, "adaptive": True},
        )
    else:
        res = minimize(
            fun, x0, method="L-BFGS-B",
            options={"maxfun": max_evals, "ftol": cfg.tolerance * 1e-3, "gtol": 1e-9, "maxiter": max_evals},
        )
    return res


def _run_restarts(objective, starts, cfg: OptimizerConfig):
    """Minimize from every start; merge deterministically (lowest energy, then index)."""
    per_restart = max(1, cfg.max_evals // len(starts))
    if cfg.jobs > 1 and len(starts) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outs = list(pool.map(_restart_worker, [(objective, x0, cfg, per_restart) for x0 in starts]))
    else:
        outs = [_restart_worker((objective, x0, cfg, per_restart)) for x0 in starts]
    trace = []
    offset = 0
    for tr, _, _, _ in outs:
        trace += [(offset + i, e, t) for i, e, t in tr]
        offset += len(tr)
    order = sorted(range(len(outs)), key=lambda i: (outs[i][2], i))
    best = outs[order[0]]
    converged = all(o[3] for o in outs) if outs else False
    return best[1], best[2], converged, trace, [o[2] for o in outs]


def _restart_worker(args):
    objective, x0, cfg, max_evals = args
    tracker = _Tracker(objective)
    res = _local_minimize(tracker, x0, cfg, max_evals)
    converged = bool(res.success) and len(tracker.trace) < max_evals
    return tracker.trace, tracker.best_x, tracker.best_f, converged


# --- energy -------------------------------------------------------------------


def energy_density(params: MeraParams, spec, n_layers: int = None) -> float:
    """Energy per site of the infinite chain described by ``params``.

    ``spec`` is a :class:`TfimSpec` or a bare field value.
    """
    g = spec.g if isinstance(spec, TfimSpec) else float(spec)
    if n_layers is not None and params.flavor == "scale_invariant":
        params = params.with_layers(n_layers)
    return energy_per_site(params, g)


class _FiniteObjective:
    def __init__(self, g, n_layers, mask=None):
        self.g = g
        self.n_layers = n_layers
        self.mask = mask

    def expand(self, x):
        cells = np.zeros(6 * self.n_layers)
        if self.mask is None:
            cells[:] = x
        else:
            cells[self.mask] = x
        return cells.reshape(self.n_layers, 6)

    def __call__(self, x):
        return energy_per_site(MeraParams(self.expand(x)), self.g)


class _ScaleInvariantObjective:
    def __init__(self, g, mask=None):
        self.g = g
        self.mask = mask

    def expand(self, x):
        cell = np.zeros(6)
        if self.mask is None:
            cell[:] = x
        else:
            cell[self.mask] = x
        return cell[None]

    def __call__(self, x):
        try:
            return energy_per_site(MeraParams(self.expand(x), flavor="scale_invariant"), self.g)
        except Exception:  # degenerate fixed point: steer the optimizer away
            return 1e3


def _symmetric_mask(n_cells: int) -> np.ndarray:
    mask = np.ones((n_cells, 6), dtype=bool)
    mask[:, RY_COLUMNS] = False
    return mask.reshape(-1)


def _polish_symmetric(make_objective, x_best, f_best, n_cells, cfg, trace):
    """Re-optimize with all Ry angles pinned to zero; keep it if no worse."""
    mask = _symmetric_mask(n_cells)
    obj = make_objective(mask)
    tracker = _Tracker(obj, start_index=len(trace))
    _local_minimize(tracker, np.asarray(x_best)[mask], cfg, cfg.max_evals)
    trace += tracker.trace
    if tracker.best_f <= f_best + max(cfg.tolerance, 1e-9):
        full = np.zeros(6 * n_cells)
        full[mask] = tracker.best_x
        return full, tracker.best_f, True
    return x_best, f_best, False


def optimize_finite(spec, n_layers: int, cfg: OptimizerConfig = OptimizerConfig(), warm_start: MeraParams = None) -> OptimizationResult:
    """Optimize a finite-T MERA with a ``|0...0>`` top level.

    Restart 0 starts from ``warm_start`` (a (T-1)-layer optimum extended by a
    near-identity top layer) when given; every other restart draws its angles
    uniformly from ``[-init_scale, init_scale]`` with its own RNG stream.
    """
    g = spec.g if isinstance(spec, TfimSpec) else float(spec)
    starts = []
    for r in range(cfg.restarts):
        rng = cfg.rng(r)
        if r == 0 and warm_start is not None:
            prev = np.asarray(warm_start.cells)
            new = 1e-3 * rng.standard_normal((n_layers - prev.shape[0], 6))
            starts.append(np.vstack([prev, new]).reshape(-1))
        else:
            starts.append(rng.uniform(-cfg.init_scale, cfg.init_scale, 6 * n_layers))
    obj = _FiniteObjective(g, n_layers)
    x, f, converged, trace, energies = _run_restarts(obj, starts, cfg)
    if cfg.symmetric_polish:
        x, f, _ = _polish_symmetric(lambda m: _FiniteObjective(g, n_layers, m), x, f, n_layers, cfg, trace)
    if not converged:
        log.warning("optimizer hit the evaluation budget at g=%s, T=%s; returning best found", g, n_layers)
    params = MeraParams(np.asarray(x).reshape(n_layers, 6), meta={"g": g, "energy": f, "converged": converged})
    return OptimizationResult(params, f, converged, len(trace), trace, energies)


def optimize_sequence(spec, layers, cfg: OptimizerConfig = OptimizerConfig()) -> dict:
    """Optimize T = layers[0], layers[1], ... with warm starts; returns ``{T: result}``."""
    out = {}
    prev = None
    for t in sorted(layers):
        warm = prev if prev is not None and prev.params.n_layers < t else None
        if warm is not None and warm.params.n_layers != t - 1:
            warm = None
        res = optimize_finite(spec, t, cfg, warm.params if warm else None)
        out[t] = res
        prev = res
    return out


def optimize_scale_invariant(spec, cfg: OptimizerConfig = OptimizerConfig(), x0=None) -> OptimizationResult:
    """Optimize the shared unit cell on the fixed point of the descending map."""
    g = spec.g if isinstance(spec, TfimSpec) else float(spec)
    starts = [np.asarray(x0, dtype=float)] if x0 is not None else []
    for r in range(len(starts), cfg.restarts):
        starts.append(cfg.rng(r).uniform(-cfg.init_scale, cfg.init_scale, 6))
    obj = _ScaleInvariantObjective(g)
    x, f, converged, trace, energies = _run_restarts(obj, starts, cfg)
    if cfg.symmetric_polish:
        x, f, _ = _polish_symmetric(lambda m: _ScaleInvariantObjective(g, m), x, f, 1, cfg, trace)
    params = MeraParams(np.asarray(x)[None], flavor="scale_invariant", meta={"g": g, "energy": f, "converged": converged})
    return OptimizationResult(params, f, converged, len(trace), trace, energies)


# --- top tensor ---------------------------------------------------------------


def _minimize_top(objective, cfg: OptimizerConfig):
    best_x, best_f = np.zeros(3), objective(np.zeros(3))
    for r in range(max(cfg.restarts, 1)):
        x0 = cfg.rng(1000 + r).uniform(-np.pi, np.pi, 3)
        res = minimize(objective, x0, method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-15, "maxfev": 5000})
        if res.fun < best_f - 1e-15:
            best_x, best_f = res.x, float(res.fun)
    return np.asarray(best_x), best_f


def top_local_objective(channel: LayerChannel, top) -> float:
    """``sum_{i>0} |m_i <<l_i|rho'>>|^2`` for the top state with angles ``top``."""
    dec = channel.spectrum()
    x = top_pair_density(top).reshape(-1)
    coeff = dec.left_vectors[:, 1:].conj().T @ x
    return float(np.sum(np.abs(dec.eigenvalues[1:] * coeff) ** 2))


def optimize_top_local(channel: LayerChannel, cfg: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Top-state angles that best project onto the steady state of ``channel``."""
    dec = channel.spectrum()
    m = dec.eigenvalues[1:]
    left = dec.left_vectors[:, 1:].conj().T

    def objective(top):
        coeff = left @ top_pair_density(top).reshape(-1)
        return float(np.sum(np.abs(m * coeff) ** 2))

    return _minimize_top(objective, cfg)[0]


def optimize_top_boundary(dmap: DoubledMap, cfg: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Top-state angles suppressing subleading modes of the doubled map."""
    dec = dmap.spectrum()
    d = dec.eigenvalues[1:]
    trace_r = np.eye(16).reshape(-1) @ dec.right_vectors[:, 1:]
    left = dec.left_vectors[:, 1:].conj().T

    def objective(top):
        rho = top_pair_density(top)
        coeff = left @ np.kron(rho, rho).reshape(-1)
        return float(np.sum(np.abs(d * trace_r * coeff) ** 2))

    return _minimize_top(objective, cfg)[0]


def critical_mera(cfg: OptimizerConfig = OptimizerConfig(), g: float = 1.0) -> dict:
    """Scale-invariant cell plus local and boundary top states at ``g``."""
    from .mera.channels import doubled_map, layer_channel

    res = optimize_scale_invariant(TfimSpec(g), cfg)
    cell = res.params
    return {
        "result": res,
        "cell": cell,
        "local": cell.with_top(optimize_top_local(layer_channel(cell), cfg)),
        "boundary": cell.with_top(optimize_top_boundary(doubled_map(cell), cfg)),
        "steady_state": steady_state(layer_channel(cell)),
    }
