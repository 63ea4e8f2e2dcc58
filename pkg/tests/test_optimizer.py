import numpy as np
import pytest

from holomera.analysis import exact_tfim_oracle
from holomera.mera.channels import layer_channel, steady_state
from holomera.mera.params import MeraParams
from holomera.mera.channels import top_pair_density
from holomera.optimizer import (
    OptimizerConfig,
    TfimSpec,
    energy_density,
    optimize_finite,
    optimize_scale_invariant,
    optimize_top_local,
    top_local_objective,
)

from conftest import CRITICAL_CELL

FAST = OptimizerConfig(method="finite_diff_lbfgs", restarts=2)


@pytest.mark.parametrize("kwargs", [{"method": "newton"}, {"tolerance": 0}, {"restarts": 0}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizerConfig(**kwargs)


def test_negative_field_rejected():
    with pytest.raises(ValueError):
        TfimSpec(-0.1)


def test_identity_energy_is_field_term():
    assert energy_density(MeraParams.identity(2), TfimSpec(1.3)) == pytest.approx(-1.3)


@pytest.mark.parametrize("g", [0.5, 1.5])
def test_finite_optimization_is_variational_and_improves(g):
    res = optimize_finite(TfimSpec(g), 1, FAST)
    exact = exact_tfim_oracle(g)
    assert exact - 1e-9 <= res.energy < -g
    assert res.energy == pytest.approx(energy_density(res.params, TfimSpec(g)), abs=1e-12)
    assert np.all(np.diff(res.best_trace) <= 1e-15)


def test_optimization_is_deterministic():
    a = optimize_finite(TfimSpec(1.5), 1, FAST)
    b = optimize_finite(TfimSpec(1.5), 1, FAST)
    assert np.array_equal(a.params.cells, b.params.cells) and a.energy == b.energy


def test_nelder_mead_default_reaches_lbfgs_energy():
    nm = optimize_finite(TfimSpec(2.0), 1, OptimizerConfig(restarts=2))
    lb = optimize_finite(TfimSpec(2.0), 1, FAST)
    assert nm.energy == pytest.approx(lb.energy, abs=1e-4)


def test_trace_csv(tmp_path):
    res = optimize_finite(TfimSpec(1.5), 1, FAST)
    path = tmp_path / "trace.csv"
    res.write_trace_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "eval_index,energy,wall_time_s" and len(lines) == len(res.trace) + 1


def test_scale_invariant_critical_energy():
    res = optimize_scale_invariant(TfimSpec(1.0), OptimizerConfig(method="finite_diff_lbfgs", restarts=1, seed=3))
    assert res.energy == pytest.approx(exact_tfim_oracle(1.0), abs=1e-2)


def test_top_local_reaches_steady_state():
    chan = layer_channel(MeraParams(CRITICAL_CELL[None], flavor="scale_invariant"))
    top = optimize_top_local(chan, OptimizerConfig(restarts=2))
    best = top_local_objective(chan, top)
    rng = np.random.default_rng(0)
    assert all(best <= top_local_objective(chan, rng.uniform(-np.pi, np.pi, 3)) + 1e-12 for _ in range(50))
    assert np.trace(top_pair_density(top)).real == pytest.approx(1.0)
    assert np.linalg.norm(steady_state(chan)) > 0
