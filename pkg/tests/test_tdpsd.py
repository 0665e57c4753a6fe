import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciil.emg import EmgWindow, extract_tdpsd, extract_tdpsd_batch
from ciil.emg.io import read_feature_csv, write_feature_csv
from ciil.errors import MalformedInputError
from ciil.kernels import available_backends

from oracles import tdpsd_oracle


def _bandlimited(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((8, 402))
    # moving average -> low-pass so m0 > m2 > 0 and no clamp is active
    return scale * (x[:, :-2] + x[:, 1:-1] + x[:, 2:]) / 3


def test_zero_window_is_clamped():
    f = extract_tdpsd(EmgWindow(np.zeros((8, 400)), 0)).values
    assert f.shape == (6, 8)
    np.testing.assert_allclose(f[:3], math.log(1e-10))
    assert math.isclose(math.log(1e-10), -23.02585, abs_tol=1e-5)
    assert np.all(np.isfinite(f))


def test_scaling_by_two():
    x = _bandlimited(0)
    f1 = extract_tdpsd(x).values
    f2 = extract_tdpsd(2 * x).values
    np.testing.assert_allclose(f2[0] - f1[0], 0.1 * math.log(2), atol=1e-9)
    np.testing.assert_allclose(f2[4], f1[4], atol=1e-9)
    np.testing.assert_allclose(f2[5], f1[5], atol=1e-9)
    # direct evaluation agrees
    ref = tdpsd_oracle(2 * x)
    np.testing.assert_allclose(f2, ref, atol=1e-9)


@pytest.mark.parametrize("name", sorted(available_backends()))
def test_matches_oracle_per_backend(name):
    mod = available_backends()[name]
    rng = np.random.default_rng(123)
    wins = rng.standard_normal((5, 8, 400)) * rng.uniform(0.01, 10, (5, 8, 1))
    wins[1] = _bandlimited(7)
    got = mod.tdpsd_batch(np.ascontiguousarray(wins), 0.1, 1e-10)
    for k in range(5):
        np.testing.assert_allclose(got[k], tdpsd_oracle(wins[k]), rtol=0, atol=1e-9)


def test_wrong_shape():
    with pytest.raises(MalformedInputError):
        extract_tdpsd(np.zeros((8, 399)))
    with pytest.raises(MalformedInputError):
        extract_tdpsd_batch(np.zeros((2, 7, 400)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), log_a=st.floats(-3, 3))
def test_scaling_law_property(seed, log_a):
    a = math.exp(log_a)
    x = _bandlimited(seed)
    ref = tdpsd_oracle(x)
    # only where every clamp argument is comfortably above eps
    if np.any(ref[1:3] < math.log(10e-10)):
        return
    f = extract_tdpsd(x).values
    g = extract_tdpsd(a * x).values
    np.testing.assert_allclose(g[0] - f[0], 0.1 * math.log(a), atol=1e-9)
    np.testing.assert_allclose(g[4], f[4], atol=1e-9)
    np.testing.assert_allclose(g[5], f[5], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-6, 1e6))
def test_output_finite(seed, scale):
    x = np.random.default_rng(seed).standard_normal((8, 400)) * scale
    x[seed % 8] = 0.0
    f = extract_tdpsd(x).values
    assert np.all(np.isfinite(f))
    np.testing.assert_array_equal(f, extract_tdpsd(x).values)


def test_feature_csv_roundtrip(tmp_path):
    frames = extract_tdpsd_batch(np.random.default_rng(0).standard_normal((3, 8, 400)))
    write_feature_csv(tmp_path / "f.csv", frames, [0, 100, 200])
    back, starts = read_feature_csv(tmp_path / "f.csv")
    np.testing.assert_array_equal(back, frames)
    assert list(starts) == [0, 100, 200]
    header = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["start_index", "f1_ch0", "f1_ch1"]
    assert header[-1] == "f6_ch7"
