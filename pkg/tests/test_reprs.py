from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dacmdp.dataset import ExperienceDataset
from dacmdp.errors import ConfigError
from dacmdp.reprs import Representation, Standardizer, embed, embed_dataset


def test_identity_is_exact():
    x = np.random.default_rng(0).standard_normal((5, 3))
    assert np.array_equal(embed(Representation.identity(), x), x)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-10, 10), b=st.floats(-10, 10))
def test_projection_is_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    rep = Representation.random_projection(6, 4, seed=seed)
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    np.testing.assert_allclose(rep.embed(a * x + b * y), a * rep.embed(x) + b * rep.embed(y), atol=1e-9)


def test_projection_roughly_preserves_distances():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((60, 50))
    z = Representation.random_projection(50, 400, seed=3).embed(x)
    i, j = np.triu_indices(60, 1)
    ratio = np.linalg.norm(z[i] - z[j], axis=1) / np.linalg.norm(x[i] - x[j], axis=1)
    assert 0.8 < ratio.min() and ratio.max() < 1.2


def test_projection_is_seeded():
    a = Representation.random_projection(4, 3, seed=5)
    b = Representation.random_projection(4, 3, seed=5)
    c = Representation.random_projection(4, 3, seed=6)
    assert np.array_equal(a.matrix, b.matrix) and not np.array_equal(a.matrix, c.matrix)
    assert a.matrix.shape == (3, 4) and Representation.random_projection(4).out_dim == 4


def test_dimension_checks():
    with pytest.raises(ConfigError, match="dimension"):
        Representation.random_projection(4).embed(np.zeros(3))
    with pytest.raises(ConfigError):
        Representation("pca")


def test_embed_dataset_keeps_tuples():
    ds = ExperienceDataset([[1.0, 2.0]], [0], [0.5], [[3.0, 4.0]], [True], 1)
    out = embed_dataset(Representation.random_projection(2, 3, seed=0), ds)
    assert out.states.shape == (1, 3) and out.states.dtype == np.float32
    assert out.rewards.tolist() == [0.5] and out.terminals.tolist() == [True]


def test_standardizer():
    ds = ExperienceDataset([[1.0, 5.0], [3.0, 5.0]], [0, 0], [0, 0], [[0, 0]] * 2, [False] * 2, 1)
    z = Standardizer.fit(ds).embed(ds.states)
    np.testing.assert_allclose(z, [[-1.0, 0.0], [1.0, 0.0]])
