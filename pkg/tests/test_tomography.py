import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from holomera.analysis import fidelity, trace_distance
from holomera.gates import Circuit, GateOp, reduced_density_matrix, run
from holomera.noise import NoiseCalibration
from holomera.tomography import (
    ShotDataset,
    TomographyError,
    bootstrap_ci,
    dataset_from_counts,
    ideal_distribution,
    linear_inversion,
    measurement_vectors,
    mle_batch,
    mle_reconstruct,
    noise_averaged_distributions,
    pauli_settings,
    run_shots,
    sample_counts,
    shadow_purity,
    shadow_renyi2,
)

from conftest import random_density

PAPER = NoiseCalibration.paper()


def zero_circuit(n=1):
    return Circuit(n, [], list(range(n)))


def plus_circuit():
    return Circuit(1, [GateOp("R", (0,), np.pi / 2, np.pi / 2)], [0])


def mixed_circuit():
    # qubit 0 of a Bell pair
    return Circuit(2, [GateOp("XX", (0, 1), np.pi / 2)], [0])


def entangled_mixed_circuit():
    ops = [GateOp("R", (0,), 0.7, np.pi / 2), GateOp("XX", (0, 1), 0.9),
           GateOp("XX", (1, 2), 1.3), GateOp("R", (2,), 0.4, np.pi / 2)]
    return Circuit(3, ops, [0, 1])


# --- settings and datasets --------------------------------------------------------


@pytest.mark.parametrize("n,count", [(1, 3), (2, 9), (4, 81)])
def test_pauli_settings(n, count):
    s = pauli_settings(n)
    assert len(s) == len(set(s)) == count and s == sorted(s)
    if n == 1:
        assert s == ["X", "Y", "Z"]


def test_pauli_settings_refuses_large():
    with pytest.raises(TomographyError):
        pauli_settings(6)


def test_dataset_validation():
    with pytest.raises(TomographyError):
        ShotDataset(2, {"X": [0]})
    with pytest.raises(TomographyError):
        ShotDataset(1, {"Z": [2]})
    with pytest.raises(TomographyError):
        ShotDataset(1, {"Z": []})


def test_jsonl_roundtrip(tmp_path):
    ds = run_shots(entangled_mixed_circuit(), pauli_settings(2), 50, seed=3, circuit_id="demo")
    path = tmp_path / "shots.jsonl"
    ds.save(path)
    back = ShotDataset.load(path)
    assert back.seed == 3 and back.circuit_id == "demo" and back.bases == ds.bases
    assert all(np.array_equal(back.counts(b), ds.counts(b)) for b in ds.bases)
    assert '"seed": 3' in path.read_text().splitlines()[0]


def test_ideal_zero_state_reads_zero():
    ds = run_shots(zero_circuit(2), ["ZZ"], 500, seed=1)
    assert np.all(ds.groups["ZZ"] == 0)


def test_basis_must_cover_measured_qubits():
    with pytest.raises(TomographyError):
        run_shots(zero_circuit(2), ["Z"], 10)
    with pytest.raises(TomographyError):
        run_shots(zero_circuit(1), ["Z"], 10, noisy=True)


@pytest.mark.parametrize("noisy", [False, True])
def test_sampling_is_deterministic(noisy):
    cal = PAPER if noisy else None
    a = run_shots(entangled_mixed_circuit(), ["XZ", "YY"], 300, seed=8, cal=cal)
    b = run_shots(entangled_mixed_circuit(), ["XZ", "YY"], 300, seed=8, cal=cal)
    assert all(np.array_equal(a.groups[k], b.groups[k]) for k in a.bases)


def test_spam_only_error_rates():
    cal = PAPER.with_sources("spam")
    n = 200_000
    zeros = run_shots(zero_circuit(), ["Z"], n, seed=2, cal=cal).groups["Z"]
    ones = run_shots(Circuit(1, [GateOp("R", (0,), np.pi, 0.0)], [0]), ["Z"], n, seed=3, cal=cal).groups["Z"]
    for rate, target in ((zeros.mean(), cal.p_d), (1 - ones.mean(), cal.p_b)):
        assert rate == pytest.approx(target, abs=3 * np.sqrt(target * (1 - target) / n))


def test_fast_path_matches_per_shot_sampling():
    circ = entangled_mixed_circuit()
    dist = noise_averaged_distributions(circ, PAPER, ["XZ"], 4000, seed=1)["XZ"]
    ds = run_shots(circ, ["XZ"], 4000, seed=1, cal=PAPER)
    freq = ds.counts("XZ") / 4000
    assert np.abs(freq - dist).max() < 4 * np.sqrt(0.25 / 4000)


def test_ideal_distribution_matches_born_rule():
    psi = run(entangled_mixed_circuit())
    rho = reduced_density_matrix(psi, [0, 1])
    vecs = measurement_vectors(["XY"])
    born = np.einsum("ki,ij,kj->k", vecs.conj(), rho, vecs).real
    assert np.allclose(ideal_distribution(psi, [0, 1], "XY"), born)


@given(st.integers(0, 10_000))
@settings(max_examples=10)
def test_shot_noise_scaling_of_linear_estimate(seed):
    # <Z> from N shots: standard error sqrt((1 - z^2) / N)
    circ = Circuit(1, [GateOp("R", (0,), 1.1, 0.0)], [0])
    z = np.cos(1.1)
    rng = np.random.default_rng(seed)
    n = 10**int(rng.integers(3, 6))
    est = [1 - 2 * run_shots(circ, ["Z"], n, seed=int(s)).groups["Z"].mean() for s in rng.integers(0, 2**31, 200)]
    assert np.std(est) == pytest.approx(np.sqrt((1 - z * z) / n), rel=0.2)


# --- reconstruction -------------------------------------------------------------------


def test_mle_plus_state():
    ds = run_shots(plus_circuit(), pauli_settings(1), 10_000, seed=4)
    rec = mle_reconstruct(ds)
    plus = np.full((2, 2), 0.5)
    assert fidelity(rec.rho, plus) >= 0.999
    assert np.linalg.eigvalsh(rec.rho).min() >= -1e-12 and np.trace(rec.rho).real == pytest.approx(1)


def test_mle_maximally_mixed():
    # shot noise alone gives trace distances around 0.01; test the typical case
    dist = [trace_distance(mle_reconstruct(run_shots(mixed_circuit(), pauli_settings(1), 10_000, seed=s)).rho,
                           np.eye(2) / 2) for s in range(21)]
    assert np.median(dist) < 0.01


def test_mle_likelihood_is_monotone():
    rec = mle_reconstruct(run_shots(entangled_mixed_circuit(), pauli_settings(2), 2000, seed=6))
    assert np.all(np.diff(rec.trace) >= -1e-12)
    assert rec.iterations <= 10_000


def test_mle_requires_complete_settings():
    ds = run_shots(zero_circuit(2), ["XX", "ZZ"], 10)
    with pytest.raises(TomographyError):
        mle_reconstruct(ds)
    with pytest.raises(TomographyError):
        linear_inversion(ds)


def test_linear_inversion_agrees_with_mle():
    ds = run_shots(entangled_mixed_circuit(), pauli_settings(2), 100_000, seed=7)
    a, b = linear_inversion(ds).rho, mle_reconstruct(ds).rho
    assert trace_distance(a, b) < 0.01
    truth = reduced_density_matrix(run(entangled_mixed_circuit()), [0, 1])
    assert trace_distance(b, truth) < 0.01


def test_mle_batch_matches_single(rng):
    bases = pauli_settings(2)
    truth = random_density(rng, 4)
    vecs = measurement_vectors(bases)
    p = np.einsum("ki,ij,kj->k", vecs.conj(), truth, vecs).real.reshape(9, 4)
    counts = np.stack([rng.multinomial(3000, row / row.sum()) for row in p])[None].repeat(2, axis=0)
    batch = mle_batch(bases, counts)
    single = mle_reconstruct(dataset_from_counts(dict(zip(bases, counts[0]))))
    assert np.allclose(batch[0].rho, single.rho, atol=1e-10) and np.allclose(batch[1].rho, single.rho, atol=1e-10)


# --- classical shadows ----------------------------------------------------------------


@pytest.mark.parametrize("circuit,expected,tol", [(zero_circuit(), 0.0, 0.02), (mixed_circuit(), 1.0, 0.05)])
def test_shadow_renyi2_examples(circuit, expected, tol):
    # the estimator spread at 1e4 shots is about the tolerance; test the typical case
    est = [shadow_renyi2(run_shots(circuit, "random", 10_000, seed=s)) for s in range(21)]
    assert np.median(np.abs(np.array(est) - expected)) < tol


def test_shadow_unbiased_on_mixed_state():
    circ = entangled_mixed_circuit()
    rho = reduced_density_matrix(run(circ), [0, 1])
    exact = np.trace(rho @ rho).real
    est = np.array([shadow_purity(run_shots(circ, "random", 2000, seed=s)) for s in range(100)])
    assert abs(est.mean() - exact) < 2 * est.std(ddof=1) / np.sqrt(len(est))


def test_shadow_needs_two_shots():
    with pytest.raises(TomographyError):
        shadow_purity(ShotDataset(1, {"Z": [0]}))


# --- bootstrap --------------------------------------------------------------------------


def _z_mean(ds):
    return float(np.mean(1 - 2 * ds.groups["Z"]))


def test_bootstrap_constant_estimator():
    ds = run_shots(plus_circuit(), ["Z"], 100, seed=1)
    lo, hi = bootstrap_ci(ds, lambda d: 0.25, n_resamples=200)
    assert lo == hi == 0.25


def test_bootstrap_validation():
    ds = run_shots(plus_circuit(), ["Z"], 100)
    with pytest.raises(ValueError):
        bootstrap_ci(ds, _z_mean, n_resamples=50)
    with pytest.raises(ValueError):
        bootstrap_ci(ds, _z_mean, level=1.0)


def test_bootstrap_width_matches_normal_approximation():
    n = 20_000
    ds = run_shots(plus_circuit(), ["Z"], n, seed=3)
    lo, hi = bootstrap_ci(ds, _z_mean, n_resamples=1000, seed=1)
    sigma = np.std(1 - 2 * ds.groups["Z"])
    assert hi - lo == pytest.approx(2 * stats.norm.ppf(0.975) * sigma / np.sqrt(n), rel=0.15)
    assert (lo, hi) == bootstrap_ci(ds, _z_mean, n_resamples=1000, seed=1)


def test_bootstrap_coverage():
    rng = np.random.default_rng(0)
    hits = 0
    for r in range(1000):
        out = (rng.random(400) < 0.3).astype(int)
        lo, hi = bootstrap_ci(ShotDataset(1, {"Z": out}), _z_mean, n_resamples=200, seed=r)
        hits += lo <= 0.4 <= hi
    assert 0.93 <= hits / 1000 <= 0.97
