import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import rankdata

from riesense import attention as att
from riesense import geometry as geo
from riesense.errors import ContractError

ARCOSH_2 = 1.3169578969248167086  # mpmath acosh(2)


def make_weights(rng, dim, scale=0.5):
    return {k: rng.uniform(-scale, scale, size=(dim, dim)) for k in ("wq", "wk", "wv", "wo")}


def random_sequence(rng, length, dim, c=1.0, radius=0.8):
    v = rng.normal(size=(length, dim))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    return v * rng.uniform(0.05, radius, size=(length, 1)) / np.sqrt(c)


class TestCosine:
    def test_parallel(self):
        assert att.cosine_similarity([1.0, 2.0], [1.0, 2.0]) == pytest.approx(1.0)

    def test_orthogonal(self):
        assert att.cosine_similarity([1.0, 0.0], [0.0, 3.0]) == 0.0

    def test_diagonal(self):
        assert att.cosine_similarity([1.0, 0.0], [1.0, 1.0]) == pytest.approx(0.70710678118654752, rel=1e-15)

    def test_zero_vector(self):
        assert att.cosine_similarity([0.0, 0.0], [1.0, 1.0]) == 0.0


class TestDistance:
    def test_identical_directions(self):
        for c in (0.1, 1.0, 5.0):
            assert att.similarity_to_distance(1.0, c) == 0.0

    def test_orthogonal_unit_curvature(self):
        assert att.similarity_to_distance(0.0, 1.0) == pytest.approx(ARCOSH_2, rel=1e-15)

    def test_opposite_half_curvature(self):
        assert att.similarity_to_distance(-1.0, 0.5) == pytest.approx(ARCOSH_2, rel=1e-15)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            att.similarity_to_distance(1.0 + 1e-6, 1.0)

    @pytest.mark.parametrize("c", [0.1, 1.0, 2.0])
    def test_strictly_decreasing_in_similarity(self, c):
        grid = np.linspace(-1.0, 1.0, 1000)
        h = att.similarity_to_distance(grid, c)
        assert np.all(np.diff(h) < 0)
        assert np.all(h >= 0)

    def test_literal_form_collapses(self):
        grid = np.linspace(-1.0, 1.0, 101)
        for c in (0.1, 1.0, 2.0):
            h, h_in = att.similarity_to_distance(grid, c, literal=True, return_input=True)
            assert np.all(h_in <= 1.0)
            np.testing.assert_array_equal(h, 0.0)


class TestWeights:
    def test_uniform(self):
        np.testing.assert_allclose(att.attention_weights([[0.0, 0.0]]), [[0.5, 0.5]])

    def test_two_values(self):
        np.testing.assert_allclose(
            att.attention_weights([0.0, 1.0]), [0.7310585786300048793, 0.2689414213699951207], rtol=1e-14
        )

    def test_saturation(self):
        w = att.attention_weights([0.0, 50.0])
        assert abs(w[0] - 1.0) < 1e-20 and w[1] < 1e-20

    def test_shift_invariance(self):
        rng = np.random.default_rng(0)
        h = rng.uniform(0, 3, size=(6, 6))
        np.testing.assert_allclose(att.attention_weights(h), att.attention_weights(h + 2.5), atol=1e-15)

    def test_larger_distance_smaller_weight(self):
        w = att.attention_weights([0.1, 0.7, 0.3])
        assert w[0] > w[2] > w[1]


class TestScoreMatrix:
    def test_rows_and_ranks(self):
        rng = np.random.default_rng(1)
        for c in (1e-3, 0.1, 1.0, 2.0, 10.0):
            q = rng.normal(size=(7, 4))
            k = rng.normal(size=(7, 4))
            s = att.score_matrix(q, k, c)
            np.testing.assert_allclose(s.weights.sum(axis=-1), 1.0, atol=1e-6)
            assert np.all(s.weights > 0)
            assert np.all(s.distance >= 0)
            for row in range(7):
                np.testing.assert_array_equal(rankdata(s.weights[row]), rankdata(s.cosine[row]))

    def test_vanishing_curvature_is_uniform(self):
        rng = np.random.default_rng(2)
        s = att.score_matrix(rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), 1e-9)
        assert np.max(np.abs(s.weights - 1 / 5)) < 1e-4


class TestAttentionForward:
    config = att.AttentionConfig(model_dim=8, head_count=2)

    def test_config_validation(self):
        with pytest.raises(ContractError):
            att.AttentionConfig(model_dim=6, head_count=4)
        assert self.config.per_head_dim == 4

    def test_single_token(self):
        rng = np.random.default_rng(3)
        w = make_weights(rng, 8)
        x = random_sequence(rng, 1, 8)
        out, scores = att.attention_forward(x, w, 1.0, self.config)
        for s in scores:
            np.testing.assert_array_equal(s.weights, [[1.0]])
        u = geo.log_map_origin(x, 1.0)
        expected = geo.mobius_add(x, geo.exp_map_origin(u @ w["wv"] @ w["wo"], 1.0), 1.0)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_identical_tokens_uniform(self):
        rng = np.random.default_rng(4)
        x = np.repeat(random_sequence(rng, 1, 8), 5, axis=0)
        _, scores = att.attention_forward(x, make_weights(rng, 8), 1.0, self.config)
        for s in scores:
            np.testing.assert_allclose(s.weights, 0.2, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        w = make_weights(rng, 8)
        for _ in range(20):
            x = random_sequence(rng, 5, 8)
            perm = rng.permutation(5)
            out, _ = att.attention_forward(x, w, 1.3, self.config)
            out_p, _ = att.attention_forward(x[perm], w, 1.3, self.config)
            np.testing.assert_allclose(out_p, out[perm], atol=1e-12)

    @pytest.mark.parametrize("c", [0.1, 1.0, 2.0])
    def test_closure(self, c):
        rng = np.random.default_rng(6)
        w = make_weights(rng, 8, scale=5.0)
        x = random_sequence(rng, 6, 8, c=c, radius=0.999)
        out, _ = att.attention_forward(x, w, c, self.config)
        assert geo.inside_ball(out, c).all()

    def test_matches_numpy_reference_scores(self):
        rng = np.random.default_rng(7)
        w = make_weights(rng, 8)
        x = random_sequence(rng, 6, 8)
        _, scores = att.attention_forward(x, w, 0.7, self.config)
        u = geo.log_map_origin(x, 0.7)
        q, k = u @ w["wq"], u @ w["wk"]
        for h, s in enumerate(scores):
            sl = slice(4 * h, 4 * h + 4)
            ref = att.score_matrix(q[:, sl], k[:, sl], 0.7)
            np.testing.assert_allclose(s.cosine, ref.cosine, atol=1e-12)
            np.testing.assert_allclose(s.distance, ref.distance, atol=1e-7)
            np.testing.assert_allclose(s.weights, ref.weights, atol=1e-10)

    def test_literal_variant_uniform(self):
        rng = np.random.default_rng(8)
        x = random_sequence(rng, 7, 8)
        _, scores = att.attention_forward(x, make_weights(rng, 8), 1.0, self.config, variant="literal")
        for s in scores:
            assert np.max(np.abs(s.weights - 1 / 7)) < 1e-6

    def test_rejects_bad_shape(self):
        with pytest.raises(ContractError):
            att.attention_forward(np.zeros((3, 5)), {}, 1.0, self.config)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(0.0, 20.0), min_size=2, max_size=10),
    st.floats(-5.0, 5.0),
)
def test_weight_rows_normalized_and_shift_invariant(row, shift):
    w = att.attention_weights(np.array(row))
    assert abs(w.sum() - 1.0) < 1e-6
    np.testing.assert_allclose(att.attention_weights(np.array(row) + shift), w, atol=1e-12)
