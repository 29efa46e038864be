"""
Tests for the masked hierarchical loss, text alignment, affinity graphs,
the taxonomy-aligned contrastive loss and the pseudo-label loss
"""
import math

import numpy as np
import pytest
from conftest import check_gradient
from scipy.special import logsumexp

from src import diffcore as dc
from src.errors import InputError
from src.losses.objectives import (
    ACCEPT_NOTHING,
    NONE,
    build_affinity,
    combine,
    hier_loss,
    pseudo_label_loss,
    tacl_loss,
    text_loss,
)
from src.model.hier_classifier import ForwardOutput, forward, init

M = NONE


def _output(logits):
    n = logits[0].shape[0]
    return ForwardOutput(logits_per_level=[l if isinstance(l, dc.Tensor) else dc.tensor(l) for l in logits],
                         projected=dc.tensor(np.zeros((n, 2))), trunk_features=dc.tensor(np.zeros((n, 2))))


def _unit(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# hierarchical loss

def test_uniform_logits_give_log_k():
    out = _output([np.zeros((1, 2)), np.zeros((1, 4)), np.zeros((1, 8))])
    result = hier_loss(out, np.array([[1, 2, 5]]))
    np.testing.assert_allclose(result.per_level, [math.log(2), math.log(4), math.log(8)])
    assert result.loss.item() == pytest.approx(math.log(2) + math.log(4) + math.log(8))


def test_mixed_granularity_batch_by_hand():
    rng = np.random.default_rng(0)
    logits = [rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), rng.standard_normal((4, 4))]
    labels = np.array([[0, 0, 0], [0, 0, M], [1, M, M], [1, 1, 3]])
    expected = 0.0
    for level in range(3):
        terms = [logsumexp(logits[level][i]) - logits[level][i, labels[i, level]]
                 for i in range(4) if labels[i, level] != M]
        expected += sum(terms) / len(terms)
    result = hier_loss(_output(logits), labels)
    assert result.loss.item() == pytest.approx(expected, rel=1e-12)
    assert result.labeled_per_level == [4, 3, 2]


def test_level_without_labels_contributes_zero():
    logits = [np.ones((2, 2)), np.ones((2, 3))]
    result = hier_loss(_output(logits), np.array([[0, M], [1, M]]))
    assert result.per_level[1] == 0.0


def test_coarse_only_batch_leaves_fine_heads_untouched(small_taxonomy):
    p = init(small_taxonomy, feature_dim=5, hidden_dims=(6,), seed=0)
    out = forward(p, np.random.default_rng(1).standard_normal((4, 5)))
    loss = hier_loss(out, np.array([[0, M, M], [1, M, M], [1, M, M], [0, M, M]])).loss
    dc.backward(loss)
    for level in (2, 3):
        for param in p.head_parameters(level):
            assert param.grad is None or not np.any(param.grad)
    assert np.any(p.head_parameters(1)[0].grad)


def test_hier_loss_rejects_out_of_range_labels():
    with pytest.raises(InputError):
        hier_loss(_output([np.zeros((1, 2))]), np.array([[2]]))


@pytest.mark.parametrize("seed", range(10))
def test_hier_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    logits = [rng.standard_normal((5, 2)), rng.standard_normal((5, 3)), rng.standard_normal((5, 6))]
    labels = np.array([[0, 1, 2], [1, 2, M], [0, M, M], [1, 2, 5], [0, 0, 1]])
    for level in range(3):
        def build(t, level=level):
            parts = list(logits)
            parts[level] = t
            return hier_loss(_output(parts), labels).loss
        check_gradient(build, logits[level])


# text alignment

def test_text_loss_single_pair_is_zero():
    z = _unit(np.random.default_rng(0).standard_normal((1, 4)))
    assert text_loss(dc.tensor(z), _unit(np.ones((1, 4))), tau=0.5).item() == pytest.approx(0.0, abs=1e-12)


def test_text_loss_orthonormal_closed_form():
    eye = np.eye(2)
    assert text_loss(dc.tensor(eye), eye, tau=1.0).item() == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
    assert text_loss(dc.tensor(eye), eye, tau=1.0).item() == pytest.approx(0.3133, abs=1e-4)


def test_text_loss_joint_permutation_invariance():
    rng = np.random.default_rng(3)
    z = _unit(rng.standard_normal((6, 4)))
    text = _unit(rng.standard_normal((6, 4)))
    perm = rng.permutation(6)
    a = text_loss(dc.tensor(z), text, 0.2).item()
    b = text_loss(dc.tensor(z[perm]), text[perm], 0.2).item()
    assert a == pytest.approx(b, rel=1e-12)


def test_text_loss_errors():
    eye = np.eye(2)
    with pytest.raises(InputError):
        text_loss(dc.tensor(eye), eye, tau=0.0)
    with pytest.raises(InputError):
        text_loss(dc.tensor(np.zeros((0, 2))), np.zeros((0, 2)), tau=1.0)
    with pytest.raises(InputError):
        text_loss(dc.tensor(eye), 2 * eye, tau=1.0)


@pytest.mark.parametrize("seed", range(10))
def test_text_loss_gradient(seed):
    rng = np.random.default_rng(100 + seed)
    z = rng.standard_normal((4, 3))
    text = _unit(rng.standard_normal((4, 3)))
    check_gradient(lambda t: text_loss(t, text, tau=0.3), z)


# affinity graphs

def test_affinity_all_equal_paths():
    graphs = build_affinity([np.zeros(4, dtype=int), np.ones(4, dtype=int), np.full(4, 3)])
    assert graphs.conjunction.all()


def test_affinity_conjunction_needs_every_level():
    graphs = build_affinity([np.array([0, 0]), np.array([1, 1]), np.array([2, 3])])
    assert graphs.per_level[0][0, 1]
    assert not graphs.conjunction[0, 1]


def test_affinity_missing_labels_never_agree():
    graphs = build_affinity([np.array([0, 0, 0]), np.array([M, M, 1])])
    assert not graphs.per_level[1][0, 1]
    assert not graphs.per_level[1][0, 0]
    assert graphs.per_level[1][2, 2]


def test_affinity_matches_brute_force():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 17))
        labels = [np.where(rng.random(n) < 0.2, M, rng.integers(0, 3, n)) for _ in range(3)]
        graphs = build_affinity(labels)
        expected = np.zeros((n, n), dtype=bool)
        for i in range(n):
            for j in range(n):
                expected[i, j] = all(labels[l][i] != M and labels[l][i] == labels[l][j] for l in range(3))
        np.testing.assert_array_equal(graphs.conjunction, expected)
        np.testing.assert_array_equal(graphs.conjunction, graphs.conjunction.T)


# taxonomy-aligned contrastive loss

def _three_sample_graph():
    return build_affinity([np.array([0, 0, 1]), np.array([0, 0, 2]), np.array([4, 4, 5])])


G3 = np.array([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]])


def test_tacl_printed_by_hand():
    # anchors 0 and 1 have one positive and one negative each, anchor 2 has no positive
    value = tacl_loss(dc.tensor(G3), _three_sample_graph(), t=1.0, form="printed").item()
    anchor0 = -3 * (0.6 - 0.0)
    anchor1 = -3 * (0.6 - 0.8)
    assert value == pytest.approx((anchor0 + anchor1) / 2, abs=1e-12)


def test_tacl_supcon_by_hand():
    value = tacl_loss(dc.tensor(G3), _three_sample_graph(), t=1.0, form="supcon").item()
    anchor0 = -(0.6 - math.log(math.exp(0.6) + math.exp(0.0)))
    anchor1 = -(0.6 - math.log(math.exp(0.6) + math.exp(0.8)))
    assert value == pytest.approx((anchor0 + anchor1) / 2, abs=1e-12)


def test_tacl_without_positives_is_zero_with_zero_gradient():
    g = dc.tensor(_unit(np.random.default_rng(0).standard_normal((3, 4))), requires_grad=True)
    graphs = build_affinity([np.array([0, 1, 2])])
    loss = tacl_loss(g, graphs, t=0.5)
    assert loss.item() == 0.0
    dc.backward(loss)
    assert g.grad is None or not np.any(g.grad)



def test_single_class_batch_has_no_printed_anchor():
    g = dc.tensor(G3)
    graphs = build_affinity([np.array([1, 1, 1]), np.array([2, 2, 2])])
    assert tacl_loss(g, graphs, t=1.0, form="printed").item() == 0.0
    assert tacl_loss(g, graphs, t=1.0, form="supcon").item() > 0.0

def test_tacl_is_permutation_invariant():
    rng = np.random.default_rng(5)
    g = _unit(rng.standard_normal((8, 4)))
    labels = [rng.integers(0, 2, 8), rng.integers(0, 2, 8)]
    perm = rng.permutation(8)
    a = tacl_loss(dc.tensor(g), build_affinity(labels), t=0.2).item()
    b = tacl_loss(dc.tensor(g[perm]), build_affinity([l[perm] for l in labels]), t=0.2).item()
    assert a == pytest.approx(b, rel=1e-10)


def test_tacl_ignores_feature_scale():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((6, 3))
    graphs = build_affinity([np.array([0, 0, 1, 1, 0, 1])])
    a = tacl_loss(dc.l2_normalize_rows(x), graphs, t=0.3).item()
    b = tacl_loss(dc.l2_normalize_rows(7.5 * x), graphs, t=0.3).item()
    assert a == pytest.approx(b, rel=1e-9)


def test_tacl_errors():
    graphs = _three_sample_graph()
    with pytest.raises(InputError):
        tacl_loss(dc.tensor(G3), graphs, t=0.0)
    with pytest.raises(InputError):
        tacl_loss(dc.tensor(G3), graphs, t=1.0, form="other")
    with pytest.raises(InputError):
        tacl_loss(dc.tensor(G3[:2]), graphs, t=1.0)


@pytest.mark.parametrize("form", ["printed", "supcon"])
@pytest.mark.parametrize("seed", range(10))
def test_tacl_gradient(form, seed):
    rng = np.random.default_rng(200 + seed)
    g = _unit(rng.standard_normal((6, 3)))
    graphs = build_affinity([rng.integers(0, 2, 6), rng.integers(0, 2, 6)])
    check_gradient(lambda t: tacl_loss(t, graphs, t=0.5, form=form), g)


# pseudo-label loss

def _pl_inputs(seed, n=5):
    rng = np.random.default_rng(seed)
    weak = [rng.standard_normal((n, 2)), rng.standard_normal((n, 3)), rng.standard_normal((n, 6))]
    strong = [rng.standard_normal((n, 2)), rng.standard_normal((n, 3)), rng.standard_normal((n, 6))]
    labels = np.array([[0, 1, 2], [1, 2, M], [0, M, M], [1, M, M], [0, 0, M]])[:n]
    return weak, strong, labels


def test_accept_nothing_threshold():
    weak, strong, labels = _pl_inputs(0)
    result = pseudo_label_loss(weak, [dc.tensor(s) for s in strong], [ACCEPT_NOTHING] * 3, labels)
    assert result.loss.item() == 0.0
    assert result.accepted_per_level == [0, 0, 0]
    for level in range(3):
        np.testing.assert_array_equal(result.pseudo_labels[level], labels[:, level])


def test_threshold_zero_accepts_every_unlabeled_entry():
    weak, strong, labels = _pl_inputs(1)
    result = pseudo_label_loss(weak, [dc.tensor(s) for s in strong], [0.0, 0.0, 0.0], labels)
    assert sum(result.accepted_per_level) == int(np.sum(labels == M))
    for level in range(3):
        assert np.all(result.pseudo_labels[level] != M)
        np.testing.assert_array_equal(result.pseudo_labels[level][labels[:, level] != M],
                                      labels[labels[:, level] != M, level])


def test_one_confident_entry_by_hand():
    labels = np.array([[0, 0, 0], [0, 0, M], [1, 1, M]])
    weak = [np.zeros((3, 2)), np.zeros((3, 2)),
            np.array([[0.0, 0, 0, 0], [10.0, 0, 0, 0], [0.0, 0, 0, 0.1]])]
    strong_fine = np.array([[0.0, 0, 0, 0], [1.0, 2.0, 0, 0], [0.0, 0, 0, 0]])
    strong = [dc.tensor(np.zeros((3, 2))), dc.tensor(np.zeros((3, 2))), dc.tensor(strong_fine)]
    result = pseudo_label_loss(weak, strong, [0.9, 0.9, 0.9], labels)
    assert result.accepted_per_level == [0, 0, 1]
    assert result.loss.item() == pytest.approx(logsumexp([1.0, 2.0, 0, 0]) - 1.0, abs=1e-12)
    np.testing.assert_array_equal(result.pseudo_labels[2], [0, 0, M])


def test_threshold_out_of_range():
    weak, strong, labels = _pl_inputs(2)
    with pytest.raises(InputError):
        pseudo_label_loss(weak, [dc.tensor(s) for s in strong], [0.5, 1.5, 0.5], labels)


@pytest.mark.parametrize("seed", range(10))
def test_pseudo_label_gradient(seed):
    weak, strong, labels = _pl_inputs(300 + seed)
    for level in range(3):
        def build(t, level=level):
            parts = [dc.tensor(s) for s in strong]
            parts[level] = t
            return pseudo_label_loss(weak, parts, [0.0, 0.3, 0.2], labels).loss
        check_gradient(build, strong[level])


# combination

def test_breakdown_identity_is_exact():
    rng = np.random.default_rng(9)
    for _ in range(50):
        logits = [rng.standard_normal((3, 2))]
        hier = hier_loss(_output(logits), np.array([[0], [1], [1]]))
        terms = [dc.tensor(float(v)) for v in rng.random(3) * 5]
        weights = rng.random(3) * 3
        total, breakdown = combine(hier, terms[0], terms[1], terms[2], *weights)
        assert breakdown.identity_holds()
        assert total.item() == breakdown.total


def test_absent_terms_count_as_zero():
    hier = hier_loss(_output([np.zeros((2, 2))]), np.array([[0], [1]]))
    total, breakdown = combine(hier, None, None, None, 1.0, 1.0, 1.0)
    assert total.item() == hier.loss.item()
    assert breakdown.text == breakdown.pl == breakdown.tacl == 0.0
