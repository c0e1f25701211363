import numpy as np
import pytest

from eigenrank.dicematrix import eigenvalues, is_psd, trio_feasibility
from eigenrank.masks import BinaryMask, dice
from eigenrank.synthetic import (
    FeasibilityError,
    SimulationConfig,
    SyntheticBackend,
    SyntheticCase,
    SyntheticModel,
    bimodal_difficulties,
    case_stream_seed,
    generate_dataset,
    run_conjecture_simulation,
    sample_feasible_dice_matrix,
    synthetic_predict,
    synthetic_train,
    true_dice_eval,
)


def test_generate_rejects_bad_sizes():
    with pytest.raises(ValueError):
        generate_dataset(0)
    with pytest.raises(ValueError):
        generate_dataset(5, width=8, height=32)


def test_generate_is_deterministic():
    a = generate_dataset(12, seed=3)
    b = generate_dataset(12, seed=3)
    assert a == b
    assert all(x.image.tobytes() == y.image.tobytes() for x, y in zip(a, b))
    assert generate_dataset(12, seed=4) != a


def test_generate_case_shape():
    cases = generate_dataset(5, width=20, height=24, seed=0)
    assert len({c.id for c in cases}) == 5
    for c in cases:
        assert c.truth.shape == (24, 20) == c.image.shape
        assert 0 <= c.difficulty <= 1
        assert 0 <= c.image.min() and c.image.max() <= 1
        assert c.truth.pixels.sum() > 0


def test_mean_difficulty_uniform():
    d = [c.difficulty for c in generate_dataset(100, seed=1)]
    assert 0.4 <= np.mean(d) <= 0.6


def test_bimodal_counts():
    d = bimodal_difficulties(seed=5)
    assert (d > 0.6).sum() == 10
    assert (d < 0.6).sum() == 90


def test_train_examples():
    cases = generate_dataset(3, seed=0, difficulties=[0.1, 0.2, 0.3])
    assert synthetic_train(cases[:1], seed=1, jitter=0).theta == 0.1
    assert synthetic_train(cases, seed=1, jitter=0).theta == pytest.approx(0.2, abs=1e-15)
    assert synthetic_train(cases, seed=9) == synthetic_train(cases, seed=9)
    assert abs(synthetic_train(cases, seed=9).theta - 0.2) <= 0.02
    with pytest.raises(ValueError):
        synthetic_train([], seed=0)


def test_predict_exact_when_centred():
    case = generate_dataset(1, seed=2, difficulties=[0.4])[0]
    model = SyntheticModel(theta=0.4, jitter_seed=5)
    pred = synthetic_predict(model, case, flips=False)
    assert pred == case.truth
    assert true_dice_eval(pred, case) == 1.0


def test_predict_deterministic():
    case = generate_dataset(1, seed=2)[0]
    model = SyntheticModel(theta=0.1, jitter_seed=5)
    assert synthetic_predict(model, case) == synthetic_predict(model, case)


def test_stream_seed_is_stable():
    # BLAKE2b-64 of b"\x07" + 7 zero bytes + b"case0001", little-endian.
    import hashlib

    ref = int.from_bytes(hashlib.blake2b(b"\x07" + b"\x00" * 7 + b"case0001", digest_size=8).digest(), "little")
    assert case_stream_seed(7, "case0001") == ref
    assert case_stream_seed(7, "case0001") != case_stream_seed(8, "case0001")


def test_expected_dice_non_increasing_in_gap():
    cases = generate_dataset(50, seed=17, difficulties=[1.0] * 50)
    gaps = np.linspace(0.0, 1.0, 20)
    means = []
    for gap in gaps:
        scores = [
            dice(synthetic_predict(SyntheticModel(theta=1.0 - gap, jitter_seed=s), c), c.truth)
            for s, c in enumerate(cases)
        ]
        means.append(np.mean(scores))
    assert np.all(np.diff(means) <= 0), means


def test_true_dice_eval():
    truth = BinaryMask.from_array(np.arange(16).reshape(4, 4) < 8)
    case = SyntheticCase("c", 0.5, np.zeros((4, 4)), truth)
    assert true_dice_eval(truth, case) == 1.0
    comp = BinaryMask.from_array(~truth.to_array().astype(bool))
    assert true_dice_eval(comp, case) == 0.0
    # flip 3 foreground pixels off and 2 background pixels on: overlap 5, |pred| 7, |truth| 8
    arr = truth.to_array().copy()
    arr.flat[[0, 1, 2]] = 0
    arr.flat[[10, 11]] = 1
    assert true_dice_eval(BinaryMask.from_array(arr), case) == pytest.approx(2 * 5 / (7 + 8))
    with pytest.raises(ValueError):
        true_dice_eval(BinaryMask.zeros(3, 3), case)


def test_backend_model_refs():
    be = SyntheticBackend(generate_dataset(4, seed=0))
    model = be.train(["case0000", "case0001"], seed=3)
    assert be.load_model(be.model_ref(model)) == model
    with pytest.raises(ValueError):
        be.load_model("nonsense")


def test_backend_pool_has_truths():
    cases = generate_dataset(4, seed=0)
    pool = SyntheticBackend(cases).pool()
    assert pool.ids == tuple(c.id for c in cases)
    assert pool.truths["case0002"] == cases[2].truth


class TestSampler:
    def test_epsilon_zero_is_all_ones(self, rng):
        for method in ("cap", "uniform"):
            assert np.array_equal(sample_feasible_dice_matrix(6, 0.0, rng, method).entries, np.ones((6, 6)))

    @pytest.mark.parametrize("method", ["cap", "uniform"])
    def test_entry_bounds(self, rng, method):
        e = sample_feasible_dice_matrix(5, 0.1, rng, method).entries
        off = e[~np.eye(5, dtype=bool)]
        assert off.min() >= 0.9 and off.max() <= 1.0

    @pytest.mark.parametrize("eps", [0.05, 0.1, 0.3])
    def test_samples_are_feasible(self, rng, eps):
        for i in range(1000):
            method, t = ("uniform", 3 + i % 3) if i % 4 == 0 else ("cap", 2 + i % 11)
            e = sample_feasible_dice_matrix(t, eps, rng, method).entries
            assert np.array_equal(e, e.T) and np.all(np.diag(e) == 1.0)
            if i % 10 == 0:
                assert is_psd(e, 1e-8)
                for p in range(t):
                    for q in range(p + 1, t):
                        for r in range(q + 1, t):
                            assert trio_feasibility(e[p, q], e[q, r], e[r, p])

    def test_uniform_sampler_gives_up_for_large_t(self, rng):
        with pytest.raises(FeasibilityError):
            sample_feasible_dice_matrix(30, 0.1, rng, "uniform", max_retries=50)

    def test_bad_arguments(self, rng):
        with pytest.raises(ValueError):
            sample_feasible_dice_matrix(1, 0.1, rng)
        with pytest.raises(ValueError):
            sample_feasible_dice_matrix(3, 1.5, rng)
        with pytest.raises(ValueError):
            sample_feasible_dice_matrix(3, 0.1, rng, "nope")


class TestConjecture:
    def test_epsilon_zero_exact(self):
        rows = run_conjecture_simulation(SimulationConfig((2, 5, 9), 0.0, 10, seed=1))
        assert [r.mean_ratio for r in rows] == [1.0, 1.0, 1.0]
        assert all(r.stdev_ratio == 0.0 and r.undefined_count == 0 for r in rows)

    def test_deterministic(self):
        cfg = SimulationConfig((3, 6), 0.1, 20, seed=4)
        assert run_conjecture_simulation(cfg) == run_conjecture_simulation(cfg)

    def test_t20_ratio_close_to_one(self):
        rows = run_conjecture_simulation(SimulationConfig((20,), 0.05, 50, seed=2))
        assert 0.9 <= rows[0].mean_ratio <= 1.1

    def test_trend_small_grid(self):
        rows = run_conjecture_simulation(SimulationConfig((3, 5, 10, 20), 0.1, 100, seed=0))
        dev = [r.mean_abs_deviation for r in rows]
        assert all(a >= b for a, b in zip(dev, dev[1:])), dev

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimulationConfig((1, 3), 0.1, 5)
        with pytest.raises(ValueError):
            SimulationConfig((3,), 0.1, 0)
        with pytest.raises(ValueError):
            SimulationConfig((3,), 2.0, 5)
