import numpy as np
import pytest

from bayes_surrogate import UnderdeterminedError
from bayes_surrogate.demo import BAND_COLUMNS, demo_input_samples, quartile_share, run_demo


@pytest.fixture(scope="module")
def small_demo():
    return run_demo(n_samples=40, n_times=12, n_posterior=3000, seed=1)


def test_band_layout(small_demo):
    assert small_demo.bands.shape == (12 * 2, len(BAND_COLUMNS))
    assert small_demo.train_outputs.shape == (40, 2 * 12)


def test_bands_are_ordered(small_demo):
    col = small_demo.column
    assert np.all(col("naive_lo") <= col("mean"))
    assert np.all(col("total_lo") <= col("naive_lo") + 1e-15)
    assert np.all(col("total_hi") >= col("naive_hi") - 1e-15)
    assert np.all(col("var_total") >= col("var_naive"))


def test_share_grows_over_time(small_demo):
    assert quartile_share(small_demo, 3) > quartile_share(small_demo, 0)


def test_first_time_is_exact(small_demo):
    first = small_demo.column("time") == 0
    assert np.all(small_demo.column("surrogate_share")[first] < 1e-12)


def test_deterministic():
    a = run_demo(n_samples=30, n_times=4, n_posterior=1000, seed=5)
    b = run_demo(n_samples=30, n_times=4, n_posterior=1000, seed=5, n_threads=3)
    assert np.array_equal(a.bands, b.bands)


def test_underdetermined_before_simulation():
    with pytest.raises(UnderdeterminedError):
        run_demo(n_samples=14)


def test_input_samples_stay_in_cube():
    s = demo_input_samples(5000, np.random.default_rng(0))
    assert s.shape == (5000, 4)
    assert np.all(np.abs(s) <= 1.0)
    # the two modes are mirror images
    assert abs(s[:, 0].mean()) < 0.05
