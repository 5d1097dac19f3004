import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from eegshape import evaluate as ev, gan
from eegshape.errors import TrainingError
from eegshape.stimuli import canonical_shapes


@pytest.fixture(scope="module")
def scorer():
    return ev.train_scoring_classifier(0)[0]


class TestInceptionScore:
    def test_uniform_scores_give_one(self):
        assert ev.inception_score_from_probs(np.full((7, 5), 0.2)) == pytest.approx(1.0, abs=1e-9)

    def test_distinct_one_hot_gives_five(self):
        assert ev.inception_score_from_probs(np.eye(5)) == pytest.approx(5.0, abs=1e-6)

    def test_mixed_case_by_hand(self):
        p = np.array([[1, 0, 0, 0, 0], [0.5, 0.5, 0, 0, 0]], float)
        # marginal (0.75, 0.25); KL1 = log(1/0.75); KL2 = 0.5 log(0.5/0.75) + 0.5 log(0.5/0.25)
        kl1 = math.log(1 / 0.75)
        kl2 = 0.5 * math.log(0.5 / 0.75) + 0.5 * math.log(0.5 / 0.25)
        assert ev.inception_score_from_probs(p) == pytest.approx(math.exp((kl1 + kl2) / 2), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 12), st.just(5)), elements=st.floats(1e-3, 1.0)))
    def test_bounded_by_class_count(self, raw):
        probs = raw / raw.sum(axis=1, keepdims=True)
        s = ev.inception_score_from_probs(probs)
        assert 1 - 1e-12 <= s <= 5 + 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(5), size=40)
        a = ev.inception_score_from_probs(probs)
        b = ev.inception_score_from_probs(probs[rng.permutation(40)])
        assert abs(a - b) < 1e-12

    def test_empty_rejected(self, scorer):
        with pytest.raises(ValueError):
            ev.inception_score(np.zeros((0, 40, 56)), scorer)
        with pytest.raises(ValueError):
            ev.inception_score_from_probs(np.zeros((0, 5)))


class TestScorer:
    def test_canonical_shapes_recognised(self, scorer):
        probs = ev.enc.predict(scorer, canonical_shapes())
        np.testing.assert_array_equal(probs.argmax(axis=1), np.arange(5))

    def test_shifted_circle(self, scorer):
        moved = ev.shift_image(canonical_shapes()[0], 2, -2)
        assert ev.enc.predict(scorer, moved[None]).argmax() == 0

    def test_canonical_is_near_five(self, scorer):
        assert ev.inception_score(canonical_shapes(), scorer) > 4.5

    def test_deterministic(self, scorer):
        again, _ = ev.train_scoring_classifier(0)
        assert all(again[k].tobytes() == scorer[k].tobytes() for k in scorer)

    def test_unreachable_target_raises(self):
        cfg = ev.AugmentConfig(train_per_class=4, heldout_per_class=4, max_epochs=1, target_accuracy=1.01)
        with pytest.raises(TrainingError, match="seed"):
            ev.train_scoring_classifier(0, cfg)


class TestShift:
    def test_shift_moves_and_fills(self):
        img = np.arange(12, dtype=float).reshape(3, 4)
        out = ev.shift_image(img, 1, -1)
        np.testing.assert_array_equal(out[0], -1)
        np.testing.assert_array_equal(out[1:, :3], img[:2, 1:])
        np.testing.assert_array_equal(out[:, 3], -1)

    def test_zero_shift_is_identity(self):
        img = canonical_shapes()[1]
        np.testing.assert_array_equal(ev.shift_image(img, 0, 0), img)

    def test_augmented_stay_in_domain(self):
        imgs, labels = ev.augmented_shapes(3, np.random.default_rng(0), ev.AugmentConfig())
        assert imgs.shape == (15, 40, 56) and np.all(np.abs(imgs) <= 1)
        np.testing.assert_array_equal(labels, np.repeat(np.arange(5), 3))


class TestInceptionAccuracy:
    def _disc_with_class_bias(self, winner):
        d = {k: np.zeros_like(v) for k, v in gan.init_discriminator(0).items()}
        d["class.bias"][winner] = 1.0
        return d

    def test_perfect_head_gives_one(self):
        imgs = canonical_shapes()[:1].repeat(4, axis=0)
        assert ev.inception_accuracy(imgs, np.full(4, 3), np.zeros((4, 40)), self._disc_with_class_bias(3)) == 1.0

    def test_uniform_head_breaks_ties_to_first_class(self):
        d = {k: np.zeros_like(v) for k, v in gan.init_discriminator(0).items()}
        imgs = canonical_shapes()
        acc = ev.inception_accuracy(imgs, np.arange(5), np.zeros((5, 40)), d)
        assert acc == pytest.approx(0.2)

    def test_permuted_labels_near_chance(self):
        rng = np.random.default_rng(0)
        d = self._disc_with_class_bias(2)
        labels = rng.permutation(np.repeat(np.arange(5), 40))
        imgs = np.zeros((200, 40, 56), np.float32)
        assert ev.inception_accuracy(imgs, labels, np.zeros((200, 40)), d) == pytest.approx(0.2)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ev.inception_accuracy(np.zeros((0, 40, 56)), [], np.zeros((0, 40)), gan.init_discriminator(0))


class TestGrid:
    def _pool(self):
        rng = np.random.default_rng(0)
        return rng.uniform(0, 2, (25, 40)).astype(np.float32), np.arange(25) % 5

    @pytest.mark.parametrize("n", [1, 3, 8])
    def test_dimensions(self, n):
        grid = ev.sample_grid(gan.init_generator(0), *self._pool(), n_per_class=n)
        assert grid.shape == (5 * 40 + 4 * 2, n * 56 + (n - 1) * 2)

    def test_separators_are_white(self):
        grid = ev.sample_grid(gan.init_generator(0), *self._pool(), n_per_class=2)
        np.testing.assert_array_equal(grid[40:42], 1.0)
        np.testing.assert_array_equal(grid[:, 56:58], 1.0)

    def test_same_seed_same_grid(self):
        a = ev.sample_grid(gan.init_generator(0), *self._pool(), n_per_class=2, seed=4)
        b = ev.sample_grid(gan.init_generator(0), *self._pool(), n_per_class=2, seed=4)
        assert a.tobytes() == b.tobytes()

    def test_rows_follow_class_order(self):
        imgs = np.stack([np.full((40, 56), v, np.float32) for v in np.linspace(-0.8, 0.8, 5)])
        grid = ev.tile_grid(imgs, 1)
        assert [grid[r * 42, 0] for r in range(5)] == pytest.approx(list(np.linspace(-0.8, 0.8, 5)))

    def test_missing_class_rejected(self):
        reprs, labels = self._pool()
        with pytest.raises(ValueError, match="rhombus"):
            ev.sample_grid(gan.init_generator(0), reprs[labels != 3], labels[labels != 3])


class TestReport:
    def test_round_trip(self):
        rep = ev.EvalReport(1.5, 0.25, {"circle": 2, "star": 2}, "acgan", 0.01, 3, 4, 5)
        again = ev.EvalReport.from_text(rep.to_text())
        assert again == rep

    def test_key_value_lines(self):
        text = ev.EvalReport(1.5, 0.25, {"circle": 2}, "full", 0.01, 3, 4, 5).to_text()
        assert "inception_score=1.5\n" in text and "count.circle=2\n" in text and "is_splits=1\n" in text

    def test_evaluate_gan_counts_and_ranges(self, scorer):
        rng = np.random.default_rng(0)
        reprs, labels = rng.uniform(0, 2, (10, 40)).astype(np.float32), np.arange(10) % 5
        cfg = gan.GanTrainConfig(mode="gan", seed=7)
        rep = ev.evaluate_gan(gan.init_generator(0), gan.init_discriminator(0), scorer, reprs, labels, cfg,
                              samples_per_class=6, seed=1)
        assert rep.class_counts == {k: 6 for k in ("circle", "star", "triangle", "rhombus", "rectangle")}
        assert 1 <= rep.inception_score <= 5 and 0 <= rep.inception_accuracy <= 1
        assert rep.mode == "gan" and rep.gan_seed == 7
