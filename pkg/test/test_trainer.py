"""
Tests for augmentation, the confidence memory bank, optimizers and the
training loop under every regime
"""
import json
from dataclasses import replace

import numpy as np
import pytest

from src import diffcore as dc
from src.config_loader import TrainConfig, load_config
from src.data.synthgen import attach_synthetic_text, generate
from src.errors import InputError, NumericError
from src.losses.objectives import ACCEPT_NOTHING, pseudo_label_loss
from src.model.hier_classifier import save_checkpoint
from src.pruning.label_pruning import parse_prune_spec, random_prune
from src.taxonomy.tree import MISSING, Taxonomy, random_taxonomy
from src.trainer.augment import augment
from src.trainer.experiments import alpha_sweep, paired_differences, paired_seed_comparison
from src.trainer.memory_bank import MemoryBank, update_thresholds
from src.trainer.optimizer import SGD, Adam, learning_rate
from src.trainer.trainer import HierarchicalTrainer, active_terms, train

TINY = Taxonomy(level_sizes=(2, 4, 8), parents=((0, 0, 1, 1), (0, 0, 1, 1, 2, 2, 3, 3)))


def _tiny_data(seed=0, per_leaf=8, text=True):
    d = generate(TINY, per_leaf=per_leaf, feature_dim=6, noise_scale=0.1, hier_corr=0.6, seed=seed)
    return attach_synthetic_text(d, 4, 0.9, seed=seed) if text else d


def _tiny_config(**overrides):
    base = dict(epochs=3, batch_size=16, hidden_dims=(8,), warmup_epochs=1, memory_bank_size=64, seed=0)
    base.update(overrides)
    return load_config(overrides=base)


# augmentation

def test_zero_noise_weak_view_is_identity():
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_array_equal(augment(x, "weak", 1, weak_noise=0.0), x)


def test_strong_view_without_noise_or_dropout_is_identity():
    x = np.random.default_rng(0).standard_normal((5, 3))
    np.testing.assert_array_equal(augment(x, "strong", 1, strong_noise=0.0, strong_dropout=0.0), x)


def test_strong_view_is_unbiased():
    x = np.array([[1.0, -2.0, 0.5]])
    draws = augment(np.repeat(x, 10000, axis=0), "strong", 3, strong_noise=0.2, strong_dropout=0.3)
    np.testing.assert_allclose(draws.mean(axis=0), x[0], rtol=0.02, atol=0.02)


def test_jitter_norm_is_independent_of_width():
    for width in (16, 400):
        x = np.zeros((2000, width))
        weak = augment(x, "weak", 2, weak_noise=0.1)
        strong = augment(x, "strong", 2, strong_noise=0.4, strong_dropout=0.0)
        assert abs(np.linalg.norm(weak, axis=1).mean() - 0.1) < 0.01
        assert abs(np.linalg.norm(strong, axis=1).mean() - 0.4) < 0.04


def test_augment_is_seeded():
    x = np.ones((4, 2))
    np.testing.assert_array_equal(augment(x, "strong", 5), augment(x, "strong", 5))
    with pytest.raises(InputError):
        augment(x, "medium", 5)


# memory bank and thresholds

def test_empty_bank_accepts_nothing():
    bank = MemoryBank(num_levels=2, capacity=10)
    cfg = TrainConfig(k_start=0.0, k_end=100.0, epochs=10)
    assert update_thresholds(bank, 0, cfg) == [ACCEPT_NOTHING, ACCEPT_NOTHING]


def test_saturated_bank_still_accepts_saturated_confidences():
    bank = MemoryBank(num_levels=1, capacity=10)
    bank.push([np.ones(4)])
    thresholds = update_thresholds(bank, 0, TrainConfig(k_start=50.0, k_end=50.0, epochs=10))
    assert thresholds == [1.0]
    weak = [np.array([[1000.0, 0.0], [0.0, 1000.0]])]
    result = pseudo_label_loss(weak, [dc.tensor(np.zeros((2, 2)))], thresholds, np.array([[MISSING], [MISSING]]))
    assert result.accepted_per_level == [2]


def test_nearest_rank_percentile():
    bank = MemoryBank(num_levels=1, capacity=20)
    bank.push([np.linspace(0.1, 1.0, 10)])
    cfg = TrainConfig(k_start=50.0, k_end=50.0, epochs=10)
    assert update_thresholds(bank, 3, cfg) == [pytest.approx(0.5)]
    everything = TrainConfig(k_start=100.0, k_end=100.0, epochs=10)
    assert update_thresholds(bank, 0, everything) == [pytest.approx(0.1)]
    nothing_but_top = TrainConfig(k_start=0.0, k_end=0.0, epochs=10)
    assert update_thresholds(bank, 0, nothing_but_top) == [pytest.approx(1.0)]


def test_keep_percent_is_linear_in_epoch():
    bank = MemoryBank(num_levels=1, capacity=100)
    bank.push([np.arange(1, 101) / 100.0])
    cfg = TrainConfig(k_start=20.0, k_end=80.0, epochs=10)
    assert update_thresholds(bank, 0, cfg) == [pytest.approx(0.8)]
    assert update_thresholds(bank, 5, cfg) == [pytest.approx(0.5)]
    assert update_thresholds(bank, 10, cfg) == [pytest.approx(0.2)]


def test_bank_never_exceeds_capacity():
    bank = MemoryBank(num_levels=2, capacity=5)
    for i in range(4):
        bank.push([np.full(3, i / 10), np.full(2, i / 10)])
    assert bank.size(1) == 5
    assert bank.size(2) == 5
    np.testing.assert_allclose(bank.values(1), [0.2, 0.2, 0.3, 0.3, 0.3])


# optimizers and schedule

@pytest.mark.parametrize("kind", [SGD, Adam])
def test_zero_gradient_parameters_do_not_move(kind):
    moving = dc.tensor(np.ones(3), requires_grad=True)
    idle = dc.tensor(np.ones(3), requires_grad=True)
    opt = kind([moving, idle], weight_decay=0.1)
    for _ in range(3):
        opt.zero_grad()
        dc.backward(dc.sum(dc.add(dc.mul(moving, moving), dc.scale(idle, 0.0))))
        opt.step(0.1)
    np.testing.assert_array_equal(idle.data, np.ones(3))
    assert np.all(moving.data < 1.0)


def test_sgd_momentum_step_by_hand():
    p = dc.tensor(np.array([1.0]), requires_grad=True)
    opt = SGD([p], momentum=0.5, weight_decay=0.0)
    for _ in range(2):
        opt.zero_grad()
        dc.backward(dc.sum(dc.scale(p, 2.0)))
        opt.step(0.1)
    # velocity 2, then 0.5 * 2 + 2 = 3
    np.testing.assert_allclose(p.data, [1.0 - 0.2 - 0.3])


def test_learning_rate_schedule():
    cfg = TrainConfig(learning_rate=1.0, epochs=10, warmup_epochs=2)
    assert learning_rate(0, cfg) == pytest.approx(0.5)
    assert learning_rate(1, cfg) == pytest.approx(1.0)
    assert learning_rate(2, cfg) == pytest.approx(1.0)
    assert learning_rate(6, cfg) == pytest.approx(0.5)
    assert learning_rate(9, replace(cfg, cosine_decay=False)) == 1.0


# regimes

def test_active_terms_per_regime():
    assert active_terms(TrainConfig(regime="hier-only"), 0) == (False, False)
    assert active_terms(TrainConfig(regime="textattr"), 0) == (True, False)
    assert active_terms(TrainConfig(regime="taxonssl"), 0) == (False, True)
    assert active_terms(TrainConfig(regime="combined"), 0) == (True, True)
    staged = TrainConfig(regime="combined", epochs=4, stage_switch_epoch=2)
    assert [active_terms(staged, e) for e in range(4)] == [(True, False)] * 2 + [(False, True)] * 2
    reverse = replace(staged, stage_order="taxonssl-first")
    assert [active_terms(reverse, e) for e in range(4)] == [(False, True)] * 2 + [(True, False)] * 2


def test_masking_head_without_fine_labels_is_frozen():
    d = _tiny_data()
    cfg = _tiny_config(regime="taxonssl", weight_decay=0.05)
    trainer = HierarchicalTrainer(TINY, cfg, d.feature_dim, d.text_dim)
    labels = d.labels()[:16].copy()
    labels[:, 2] = MISSING
    before = [p.data.copy() for p in trainer.params.head_parameters(3)]
    coarse_before = trainer.params.head_parameters(1)[0].data.copy()
    # the empty bank accepts nothing: no fine pseudo-labels either
    result = trainer.step(d.features()[:16], labels, d.text_embeddings()[:16], epoch=0, lr=0.01)
    assert result.accepted_per_level[2] == 0
    for old, param in zip(before, trainer.params.head_parameters(3)):
        np.testing.assert_array_equal(param.data, old)
    assert not np.array_equal(trainer.params.head_parameters(1)[0].data, coarse_before)


def test_alpha_zero_textattr_matches_hier_only(tmp_path):
    d = _tiny_data()
    hier, hist_a = train(d, TINY, _tiny_config(regime="hier-only"))
    text, hist_b = train(d, TINY, _tiny_config(regime="textattr", alpha=0.0, learning_rate=1e-3))
    for (name, a), (_, b) in zip(hier.named_parameters(), text.named_parameters()):
        if name.startswith("projection"):
            continue
        np.testing.assert_array_equal(a.data, b.data)
    assert hist_a[-1].heldout == hist_b[-1].heldout


def test_training_is_deterministic(tmp_path):
    d = _tiny_data()
    cfg = _tiny_config(regime="combined")
    first, log_a = train(d, TINY, cfg, step_log_path=str(tmp_path / "a.jsonl"))
    second, log_b = train(d, TINY, cfg, step_log_path=str(tmp_path / "b.jsonl"))
    save_checkpoint(first, str(tmp_path / "a.ckpt"))
    save_checkpoint(second, str(tmp_path / "b.ckpt"))
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.jsonl").read_text() == (tmp_path / "b.jsonl").read_text()


@pytest.mark.parametrize("regime", ["hier-only", "textattr", "taxonssl", "combined"])
def test_step_log_identity_and_metrics(tmp_path, regime):
    d = _tiny_data()
    pruned = random_prune(d, parse_prune_spec("100-50-20"), seed=0)
    log_path = tmp_path / "steps.jsonl"
    _, history = train(pruned, TINY, _tiny_config(regime=regime), reference=d, step_log_path=str(log_path))
    records = [json.loads(line) for line in log_path.read_text().splitlines()]
    assert len(records) == 3
    for record in records:
        assert record["identity_ok"]
        heldout = record["heldout"]
        assert heldout["n"] == 13
        assert 0.0 <= heldout["fpa"] <= 1.0 - heldout["tice"] + 1e-12
        assert heldout["fpa"] <= min(heldout["level_accuracy"].values())


def test_two_stage_schedule_switches_terms(tmp_path):
    d = _tiny_data()
    cfg = _tiny_config(regime="combined", epochs=4, stage_switch_epoch=2)
    _, history = train(d, TINY, cfg)
    assert [r.active_terms for r in history] == [["hier", "text"]] * 2 + [["hier", "pl", "tacl"]] * 2
    assert history[0].losses["tacl"] == 0.0 and history[0].losses["text"] > 0.0
    assert history[3].losses["text"] == 0.0


def test_train_input_errors():
    d = _tiny_data(text=False)
    with pytest.raises(InputError):
        train(d.with_samples([]), TINY, _tiny_config())
    with pytest.raises(InputError):
        train(d, TINY, _tiny_config(regime="textattr"))
    with pytest.raises(InputError):
        train(d, Taxonomy(level_sizes=(2, 4, 8), parents=((0, 1, 0, 1), (0, 0, 1, 1, 2, 2, 3, 3))), _tiny_config())


def test_non_finite_loss_names_the_term():
    d = _tiny_data()
    cfg = _tiny_config(regime="textattr", tau=1e-320)
    with pytest.raises(NumericError) as err:
        train(d, TINY, cfg)
    assert err.value.op == "text"


def test_paired_comparison_and_alpha_sweep():
    d = _tiny_data()
    configs = {"hier-only": _tiny_config(regime="hier-only", epochs=2),
               "textattr": _tiny_config(regime="textattr", epochs=2)}
    frame = paired_seed_comparison(d, TINY, configs, seeds=[0, 1])
    assert len(frame) == 4
    summary = paired_differences(frame, "hier-only")
    assert summary.loc["hier-only", "mean_diff_vs_baseline"] == 0.0
    sweep = alpha_sweep(d, TINY, _tiny_config(regime="textattr", epochs=2), [0.0, 1.0], seeds=[0])
    assert sweep["alpha"].tolist() == [0.0, 1.0]
    with pytest.raises(InputError):
        paired_differences(frame, "missing")


# directional desk-scale experiments

def _benchmark(seed, informativeness=0.9):
    t = random_taxonomy([4, 12, 48], seed=seed)
    d = generate(t, per_leaf=60, feature_dim=64, noise_scale=0.3, hier_corr=0.6, seed=seed)
    return t, attach_synthetic_text(d, 32, informativeness, seed=seed)


def _shared_config(seed, epochs=60):
    # one optimizer, learning rate and schedule for every compared run
    return load_config(regime="hier-only", overrides={"epochs": epochs, "seed": seed})


@pytest.mark.slow
def test_hier_only_learns_full_paths():
    t, d = _benchmark(0)
    _, history = train(d, t, _shared_config(0, epochs=100))
    assert history[-1].heldout["fpa"] >= 0.90


@pytest.mark.slow
def test_pruning_degrades_full_path_accuracy():
    drops = []
    for seed in range(5):
        t, d = _benchmark(seed)
        cfg = _shared_config(seed)
        _, h_full = train(d, t, cfg)
        _, h_pruned = train(random_prune(d, parse_prune_spec("100-50-10"), seed=seed), t, cfg, reference=d)
        drops.append(h_full[-1].heldout["fpa"] - h_pruned[-1].heldout["fpa"])
    assert np.mean(drops) >= 0.05


@pytest.mark.slow
def test_text_and_taxonomy_terms_help_on_pruned_data():
    rows = {"hier-only": [], "textattr": [], "taxonssl": []}
    for seed in range(5):
        t, d = _benchmark(seed)
        pruned = random_prune(d, parse_prune_spec("100-50-10"), seed=seed)
        base = _shared_config(seed)
        configs = {
            "hier-only": base,
            "textattr": replace(base, regime="textattr", alpha=1.0).validate(),
            "taxonssl": replace(base, regime="taxonssl", lambda_pl=1.0, lambda_tacl=1.0).validate(),
        }
        for regime, cfg in configs.items():
            _, history = train(pruned, t, cfg, reference=d)
            rows[regime].append(history[-1].heldout["level_accuracy"]["3"])
    baseline = np.asarray(rows["hier-only"])
    assert np.mean(np.asarray(rows["textattr"]) - baseline) > 0
    assert np.mean(np.asarray(rows["taxonssl"]) - baseline) > 0


@pytest.mark.slow
def test_alpha_sweep_text_weight_does_not_hurt():
    t, d = _benchmark(0)
    pruned = random_prune(d, parse_prune_spec("100-50-10"), seed=0)
    base = replace(_shared_config(0), regime="textattr").validate()
    curve = alpha_sweep(pruned, t, base, [0.0, 0.5, 1.0, 2.0], seeds=range(5), reference=d).set_index("alpha")
    assert curve.loc[1.0, "fine_accuracy"] >= curve.loc[0.0, "fine_accuracy"]
