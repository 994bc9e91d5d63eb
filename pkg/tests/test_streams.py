import numpy as np
from scipy import stats

from stablebrw.streams import (child_keys, keyed_exponential, keyed_normal, keyed_uniform,
                               root_keys, seed_sequence, stream)


def test_stream_reproducible_and_label_sensitive():
    a = stream(7, "stage", 3).random(5)
    b = stream(7, "stage", 3).random(5)
    c = stream(7, "stage", 4).random(5)
    d = stream(7, "other", 3).random(5)
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)
    assert not np.allclose(a, d)


def test_seed_sequence_rejects_negative_labels():
    import pytest
    with pytest.raises(ValueError):
        seed_sequence(1, -2)


def test_keyed_draws_are_pure_functions_of_the_key():
    keys = root_keys(np.random.default_rng(1), 1000)
    assert np.array_equal(keyed_uniform(keys, 2), keyed_uniform(keys.copy(), 2))
    # order of evaluation does not matter
    perm = np.random.default_rng(2).permutation(keys.size)
    assert np.array_equal(keyed_uniform(keys)[perm], keyed_uniform(keys[perm]))


def test_keyed_uniform_law():
    keys = root_keys(np.random.default_rng(3), 100_000)
    u = keyed_uniform(keys, 0)
    assert np.all((u > 0) & (u < 1))
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    z = keyed_normal(child_keys(keys, 1), 0)
    assert stats.kstest(z, "norm").pvalue > 1e-3
    e = keyed_exponential(keys, 4)
    assert stats.kstest(e, "expon").pvalue > 1e-3


def test_channels_and_children_decorrelated():
    keys = root_keys(np.random.default_rng(4), 50_000)
    u0, u1 = keyed_uniform(keys, 0), keyed_uniform(keys, 1)
    c0, c1 = keyed_uniform(child_keys(keys, 0)), keyed_uniform(child_keys(keys, 1))
    assert abs(np.corrcoef(u0, u1)[0, 1]) < 0.02
    assert abs(np.corrcoef(c0, c1)[0, 1]) < 0.02
    assert len(np.unique(np.concatenate([child_keys(keys, 0), child_keys(keys, 1)]))) == 2 * keys.size
