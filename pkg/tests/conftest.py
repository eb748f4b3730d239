import numpy as np
import pytest

from mvb_detector.data import Dataset


def make_dataset(times, status, m, t_max, x=None):
    times = np.asarray(times)
    x = np.zeros((times.size, 0)) if x is None else np.asarray(x, dtype=float)
    return Dataset(times, np.asarray(status), x, m, t_max)


def events_at(times, t_max, m=1):
    """One cause-1 event at each listed time."""
    return make_dataset(times, [1] * len(times), m, t_max)


@pytest.fixture
def tiny3():
    """m=3, t_max=8, events at every time: allowed set {2..7}."""
    t = np.array([1, 2, 3, 4, 5, 6, 7, 8, 2, 3, 4, 5, 6, 7, 8, 9])
    s = np.array([1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1, 2, 3, 1])
    return make_dataset(t, s, 3, 8)
