import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcpd.baselines import CvaState, cva_detect, cva_magnitude, sequence_magnitudes
from graphcpd.dataio import Frame
from graphcpd.errors import ConfigError, DimensionError


def test_magnitude_examples():
    a = np.arange(6.0).reshape(2, 3)
    assert cva_magnitude(a, a).tolist() == [0, 0, 0]
    assert cva_magnitude([[4.0]], [[1.0]]).tolist() == [3.0]
    assert cva_magnitude([[3.0], [4.0]], [[0.0], [0.0]]).tolist() == [5.0]
    f = Frame(np.ones((2, 2, 2)))
    assert cva_magnitude(f, np.zeros((2, 2, 2))).tolist() == [np.sqrt(2)] * 4
    with pytest.raises(DimensionError):
        cva_magnitude(np.zeros((2, 3)), np.zeros((3, 3)))


def test_detect_examples():
    m = np.array([0.1, 2.0, 0.5])
    assert cva_detect(m, 0.0).flags.ravel().tolist() == [1, 1, 1]
    assert cva_detect(m, m.max()).flags.ravel().tolist() == [0, 0, 0]
    assert cva_detect(m, 0.4, shape=(1, 3), t=7).t == 7
    with pytest.raises(ConfigError):
        cva_detect(m, -1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=20), st.floats(0, 10), st.floats(0, 10))
def test_flags_monotone_in_tau(mags, a, b):
    lo, hi = sorted((a, b))
    f_lo = cva_detect(np.array(mags), lo).flags
    f_hi = cva_detect(np.array(mags), hi).flags
    assert np.all(f_hi <= f_lo)


def test_streaming_matches_batch_and_is_memoryless(rng):
    data = rng.standard_normal((6, 3, 2, 4))
    batch = sequence_magnitudes(data)
    state = CvaState(1.5)
    assert state.update(data[0]) is None
    for t in range(1, 6):
        mag, flags = state.update(data[t])
        assert np.allclose(mag, batch[t - 1])
        assert np.array_equal(flags, (batch[t - 1] > 1.5).astype(np.uint8))
        # only frames t and t-1 matter
        assert np.allclose(cva_magnitude(data[t], data[t - 1]), mag)


def test_state_rejects_bad_input():
    with pytest.raises(ConfigError):
        CvaState(-0.1)
    s = CvaState(0.0)
    with pytest.raises(ConfigError):
        s.update(np.array([[np.inf]]))
