import math
import warnings

import numpy as np
import pytest

from tata import autograd as ag
from tata.autograd import Tensor
from tata.losses import (
    TagBatch,
    TawBatch,
    cross_entropy_loss,
    supervised_contrastive_loss,
    triplet_taw_loss,
)


def brute_force_triplet(anchors: np.ndarray, positives: np.ndarray, margin: float = 0.0) -> float:
    """Naive per-pair double loop: the independent oracle."""
    n = anchors.shape[0]
    total = 0.0
    for i in range(n):
        d_pos = float(((anchors[i] - positives[i]) ** 2).sum())
        for k in range(n):
            if k == i:
                continue
            d_neg = float(((anchors[i] - positives[k]) ** 2).sum())
            total += max(0.0, margin + d_pos - d_neg)
    return total / n


def brute_force_supcon(hiddens: np.ndarray, labels, tau: float) -> float:
    n = hiddens.shape[0]
    terms = []
    for i in range(n):
        numer = denom = 0.0
        has_positive = False
        for j in range(n):
            if j == i:
                continue
            cos = hiddens[i] @ hiddens[j] / (
                np.linalg.norm(hiddens[i]) * np.linalg.norm(hiddens[j])
            )
            e = math.exp(cos / tau)
            denom += e
            if labels[i] == labels[j]:
                numer += e
                has_positive = True
        if has_positive:
            terms.append(math.log(numer / denom))
    if not terms:
        return 0.0
    return -sum(terms) / len(terms)


class TestTripletLoss:
    def test_well_separated_pairs_give_zero(self):
        batch = TawBatch(Tensor([[0.0], [10.0]]), Tensor([[1.0], [9.0]]))
        assert triplet_taw_loss(batch).item() == 0.0

    def test_hand_enumeration_two_anchors(self):
        # anchor 1: max(0, 1 - 0.25) = 0.75
        # anchor 2: pos (10-0.5)^2 = 90.25, neg (10-1)^2 = 81 -> 9.25
        # mean over anchors: (0.75 + 9.25) / 2 = 5.0 (matches the oracle)
        anchors = np.array([[0.0], [10.0]])
        positives = np.array([[1.0], [0.5]])
        value = triplet_taw_loss(TawBatch(Tensor(anchors), Tensor(positives))).item()
        assert value == pytest.approx(5.0, abs=1e-12)
        assert value == pytest.approx(brute_force_triplet(anchors, positives), abs=1e-12)

    def test_identical_pairs_distinct_rows_give_zero(self):
        h = np.array([[0.0, 1.0], [2.0, 3.0], [5.0, 5.0]])
        assert triplet_taw_loss(TawBatch(Tensor(h.copy()), Tensor(h.copy()))).item() == 0.0

    def test_matches_brute_force_on_200_random_batches(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            n = int(rng.integers(2, 17))
            e = int(rng.integers(1, 33))
            margin = float(rng.choice([0.0, 0.1, 1.0]))
            anchors = rng.normal(size=(n, e))
            positives = rng.normal(size=(n, e))
            ours = triplet_taw_loss(TawBatch(Tensor(anchors), Tensor(positives)), margin).item()
            oracle = brute_force_triplet(anchors, positives, margin)
            assert abs(ours - oracle) < 1e-9, f"trial {trial}"

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        anchors = rng.normal(size=(6, 4))
        positives = rng.normal(size=(6, 4))
        base = triplet_taw_loss(TawBatch(Tensor(anchors), Tensor(positives))).item()
        perm = rng.permutation(6)
        permuted = triplet_taw_loss(
            TawBatch(Tensor(anchors[perm]), Tensor(positives[perm]))
        ).item()
        assert permuted == pytest.approx(base, abs=1e-12)

    def test_gradient_passes_grad_check(self):
        rng = np.random.default_rng(3)
        anchors = Tensor(rng.normal(size=(4, 5)))
        positives = Tensor(rng.normal(size=(4, 5)))
        err = ag.grad_check(
            lambda a, b: triplet_taw_loss(TawBatch(a, b), margin=0.2), [anchors, positives]
        )
        assert err < 1e-4

    def test_batch_of_one_rejected(self):
        with pytest.raises(ValueError, match="2"):
            TawBatch(Tensor([[1.0]]), Tensor([[1.0]]))

    def test_negative_margin_rejected(self):
        batch = TawBatch(Tensor([[0.0], [1.0]]), Tensor([[0.0], [1.0]]))
        with pytest.raises(ValueError):
            triplet_taw_loss(batch, margin=-0.1)


class TestSupervisedContrastiveLoss:
    def test_two_anchors_same_label_is_zero(self):
        batch = TagBatch(Tensor([[1.0, 0.0], [0.0, 1.0]]), [0, 0])
        assert supervised_contrastive_loss(batch).item() == pytest.approx(0.0, abs=1e-12)

    def test_hand_enumeration_orthogonal_hiddens(self):
        # Anchors 1, 2 see one positive and one negative at cosine 0:
        # ratio 1/2 each; anchor 3 has no positive and is skipped.
        batch = TagBatch(Tensor(np.eye(3)), [0, 0, 1])
        value = supervised_contrastive_loss(batch, tau=0.07).item()
        assert value == pytest.approx(math.log(2.0), abs=1e-12)

    def test_scale_invariance_of_hiddens(self):
        rng = np.random.default_rng(11)
        h = rng.normal(size=(6, 8))
        labels = [0, 1, 2, 0, 1, 2]
        a = supervised_contrastive_loss(TagBatch(Tensor(h), labels)).item()
        b = supervised_contrastive_loss(TagBatch(Tensor(5.0 * h), labels)).item()
        assert a == pytest.approx(b, abs=1e-9)

    def test_matches_brute_force_on_200_random_batches(self):
        rng = np.random.default_rng(43)
        for trial in range(200):
            n = int(rng.integers(2, 17))
            e = int(rng.integers(2, 33))
            h = rng.normal(size=(n, e))
            labels = rng.integers(0, 3, size=n).tolist()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ours = supervised_contrastive_loss(TagBatch(Tensor(h), labels), tau=0.07).item()
            oracle = brute_force_supcon(h, labels, 0.07)
            assert abs(ours - oracle) < 1e-9, f"trial {trial}"

    def test_loss_decreases_when_positive_cosine_increases(self):
        # Rotate one positive toward its anchor, everything else fixed.
        base = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.2]])
        labels = [0, 0, 1]
        losses = []
        for angle in (np.pi / 2, np.pi / 3, np.pi / 6, np.pi / 12):
            h = base.copy()
            h[1] = [np.cos(angle), np.sin(angle)]
            losses.append(supervised_contrastive_loss(TagBatch(Tensor(h), labels)).item())
        assert all(a > b for a, b in zip(losses, losses[1:]))

    def test_all_anchors_skipped_warns_and_returns_zero(self):
        batch = TagBatch(Tensor(np.eye(3)), [0, 1, 2])
        with pytest.warns(UserWarning, match="no positive pairs"):
            value = supervised_contrastive_loss(batch)
        assert value.item() == 0.0

    def test_large_temperature_approaches_label_count_baseline(self):
        # At tau = 1e3 the loss approaches mean log((N_b - 1) / n_pos_i).
        rng = np.random.default_rng(5)
        h = rng.normal(size=(8, 6))
        labels = [0, 0, 0, 1, 1, 2, 2, 2]
        value = supervised_contrastive_loss(TagBatch(Tensor(h), labels), tau=1e3).item()
        n = len(labels)
        baseline = np.mean([
            math.log((n - 1) / sum(1 for j in range(n) if j != i and labels[j] == labels[i]))
            for i in range(n)
        ])
        assert value == pytest.approx(baseline, abs=1e-3)

    def test_gradient_passes_grad_check(self):
        rng = np.random.default_rng(9)
        h = Tensor(rng.normal(size=(5, 4)))
        err = ag.grad_check(
            lambda x: supervised_contrastive_loss(TagBatch(x, [0, 1, 0, 2, 1])), h
        )
        assert err < 1e-4

    def test_invalid_temperature(self):
        batch = TagBatch(Tensor(np.eye(2)), [0, 0])
        with pytest.raises(ValueError):
            supervised_contrastive_loss(batch, tau=0.0)

    def test_mismatched_lengths_rejected(self):
        with pytest.raises(ValueError):
            TagBatch(Tensor(np.eye(3)), [0, 1])


class TestCrossEntropyLoss:
    def test_perfect_one_hot_is_zero(self):
        probs = Tensor([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        assert cross_entropy_loss(probs, [0, 2]).item() == pytest.approx(0.0, abs=1e-10)

    def test_uniform_is_log_three(self):
        probs = Tensor(np.full((4, 3), 1.0 / 3.0))
        assert cross_entropy_loss(probs, [0, 1, 2, 0]).item() == pytest.approx(math.log(3.0), abs=1e-12)

    def test_gradient_through_softmax_is_probs_minus_onehot(self):
        rng = np.random.default_rng(13)
        logits = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        probs = ag.softmax(logits, axis=-1)
        cross_entropy_loss(probs, [1]).backward()
        expected = probs.values - np.array([[0.0, 1.0, 0.0]])
        assert np.allclose(logits.grad, expected, atol=1e-12)

    def test_grad_check_through_softmax(self):
        rng = np.random.default_rng(17)
        logits = Tensor(rng.normal(size=(3, 3)))
        err = ag.grad_check(lambda l: cross_entropy_loss(ag.softmax(l, axis=-1), [0, 1, 2]), logits)
        assert err < 1e-4

    def test_label_out_of_range_rejected(self):
        probs = Tensor(np.full((1, 3), 1.0 / 3.0))
        with pytest.raises(ValueError, match="range"):
            cross_entropy_loss(probs, [3])

    def test_rows_must_sum_to_one(self):
        with pytest.raises(ValueError, match="sum to 1"):
            cross_entropy_loss(Tensor([[0.5, 0.2, 0.1]]), [0])
