import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from concrete_autoencoder.errors import NumericalError, ParameterError, ShapeError
from concrete_autoencoder.numcore import (
    Rng,
    as_matrix,
    gumbel_from_uniform,
    log_softmax,
    matmul,
    sample_gumbel,
    sample_uniform,
    softmax,
)

EULER_GAMMA = 0.5772156649015329


def _triple_loop(a, b):
    out = [[0.0] * len(b[0]) for _ in a]
    for i in range(len(a)):
        for j in range(len(b[0])):
            for t in range(len(b)):
                out[i][j] += a[i][t] * b[t][j]
    return np.array(out)


def _splitmix64_reference(seed, n):
    # Straight transcription of the public-domain C reference.
    mask = (1 << 64) - 1
    state, out = seed, []
    for _ in range(n):
        state = (state + 0x9E3779B97F4A7C15) & mask
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
        out.append(z ^ (z >> 31))
    return out


class TestMatmul:
    def test_identity(self):
        a = Rng(3).uniform((3, 4))
        np.testing.assert_array_equal(matmul(np.eye(3), a), a)

    def test_small_example(self):
        np.testing.assert_array_equal(matmul([[1, 2], [3, 4]], [[0], [1]]), [[2], [4]])

    def test_matches_triple_loop(self):
        rng = Rng(11)
        a, b = rng.uniform((5, 7)) - 0.5, rng.uniform((7, 3)) - 0.5
        np.testing.assert_allclose(matmul(a, b), _triple_loop(a.tolist(), b.tolist()),
                                   rtol=0, atol=1e-12)

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_overflow_is_reported(self):
        with pytest.raises(NumericalError):
            matmul([[1e200]], [[1e200]])

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32), st.integers(1, 6), st.integers(1, 6), st.integers(1, 6),
           st.integers(1, 6))
    def test_associativity(self, seed, m, n, p, q):
        rng = Rng(seed)
        a, b, c = rng.uniform((m, n)), rng.uniform((n, p)), rng.uniform((p, q))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), rtol=1e-9)


class TestAsMatrix:
    def test_promotes_vector(self):
        assert as_matrix([1.0, 2.0]).shape == (1, 2)

    def test_rejects_nan(self):
        with pytest.raises(NumericalError):
            as_matrix([[np.nan]])

    def test_rejects_3d(self):
        with pytest.raises(ShapeError):
            as_matrix(np.zeros((2, 2, 2)))


class TestRng:
    def test_matches_splitmix64_reference(self):
        expected = _splitmix64_reference(1234567, 5)
        assert [int(v) for v in Rng(1234567).next_u64(5)] == expected
        # published test vector for this seed
        assert expected[0] == 6457827717110365317

    def test_seed_42_first_draws_frozen(self):
        rng = Rng(42)
        assert rng.uniform() == 0.7415648787718233
        assert rng.uniform() == 0.15991039287692022

    def test_block_equals_single_draws(self):
        block = Rng(9).uniform(50)
        rng = Rng(9)
        singles = [rng.uniform() for _ in range(50)]
        np.testing.assert_array_equal(block, singles)

    def test_uniform_open_interval(self):
        u = Rng(1).uniform(200_000)
        assert u.min() > 0.0 and u.max() < 1.0

    def test_uniform_extremes_are_interior(self):
        # the all-zero and all-one bit patterns still land strictly inside (0, 1)
        lo = (0 + 0.5) * 2.0 ** -52
        hi = ((2**52 - 1) + 0.5) * 2.0 ** -52
        assert 0.0 < lo and hi < 1.0
        assert np.isfinite(gumbel_from_uniform(np.array([lo, hi]))).all()

    def test_uniform_mean(self):
        assert abs(sample_uniform(Rng(5), 100_000).mean() - 0.5) < 0.01

    def test_sequence_deterministic(self):
        a, b = Rng(77), Rng(77)
        np.testing.assert_array_equal(a.uniform(100), b.uniform(100))
        np.testing.assert_array_equal(a.gumbel(100), b.gumbel(100))

    def test_permutation_is_permutation(self):
        p = Rng(4).permutation(1000)
        np.testing.assert_array_equal(np.sort(p), np.arange(1000))

    def test_choice_distinct(self):
        c = Rng(4).choice(30, 30)
        assert len(set(c.tolist())) == 30
        with pytest.raises(ParameterError):
            Rng(4).choice(3, 4)

    def test_spawn_streams_differ(self):
        root = Rng(0)
        a, b = root.spawn(0).uniform(8), root.spawn(1).uniform(8)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, Rng(0).spawn(0).uniform(8))


class TestGumbel:
    def test_known_points(self):
        assert gumbel_from_uniform(1 / math.e) == pytest.approx(0.0, abs=1e-15)
        assert gumbel_from_uniform(math.exp(-math.e)) == pytest.approx(-1.0, abs=1e-15)

    def test_mean_is_euler_gamma(self):
        g = sample_gumbel(Rng(8), 100_000)
        assert abs(g.mean() - EULER_GAMMA) < 0.02


class TestSoftmax:
    def test_uniform_logits(self):
        np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)

    def test_one_hot_logit(self):
        e = math.e
        np.testing.assert_allclose(softmax([1.0, 0.0, 0.0]),
                                   [e / (e + 2), 1 / (e + 2), 1 / (e + 2)], atol=1e-15)
        np.testing.assert_allclose(softmax([1.0, 0.0, 0.0]), [0.57612, 0.21194, 0.21194],
                                   atol=1e-5)

    def test_low_temperature_limit(self):
        assert softmax([1.0, 0.0, 0.0], 0.1).max() > 0.9999

    def test_no_overflow_at_low_temperature(self):
        p = softmax([5.0, 3.0, -2.0], 0.01)
        assert np.all(np.isfinite(p))
        assert p[0] == pytest.approx(1.0)

    @pytest.mark.parametrize("t", [0.0, -1.0])
    def test_rejects_non_positive_temperature(self, t):
        with pytest.raises(ParameterError):
            softmax([1.0, 2.0], t)

    def test_log_softmax_consistent(self):
        z = np.array([[0.3, -1.2, 4.0]])
        np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), rtol=1e-14)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 12),
                  elements=st.floats(-50, 50, allow_nan=False)),
           st.floats(1e-4, 1e4))
    def test_simplex(self, logits, t):
        p = softmax(logits, t)
        assert np.all(p >= 0) and np.all(p <= 1)
        assert abs(p.sum() - 1.0) < 1e-12

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 12),
                  elements=st.floats(-50, 50, allow_nan=False)),
           st.floats(1e-2, 1e2))
    def test_temperature_identity(self, logits, t):
        np.testing.assert_allclose(softmax(logits, t), softmax(logits / t, 1.0),
                                   rtol=0, atol=1e-12)
