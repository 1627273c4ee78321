import numpy as np
import pytest

from misinfo_mtl.data import Dataset, SplitDataset, SyntheticSuiteConfig, generate_synthetic_suite, split
from misinfo_mtl.encoder import EncoderConfig
from misinfo_mtl.multitask import build_model, flatten_params
from misinfo_mtl.tokenization import build_vocab
from misinfo_mtl.training import (
    GRID_BATCH_SIZES,
    GRID_LEARNING_RATES,
    AdamState,
    EarlyStopper,
    TrainConfig,
    adam_step,
    finetune_task,
    hyperparameter_grid,
    lr_at,
    make_epoch_schedule,
    train_multitask,
)

TABLE1_SIZES = {"newsbias": 7984, "fakenews": 1627, "rumor": 1705, "clickbait": 19538}


def test_train_config_defaults_match_protocol():
    cfg = TrainConfig()
    assert cfg.learning_rate == 5e-6
    assert cfg.batch_size == 32
    assert cfg.max_epochs == 15
    assert cfg.patience == 5
    assert cfg.max_seq_len == 128
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon) == (0.9, 0.999, 1e-8)
    assert cfg.lr_schedule == "linear-decay"


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(patience=20, max_epochs=15)


def test_schedule_equal_sizes_no_oversampling():
    sched = make_epoch_schedule({"A": 10, "B": 10}, batch_size=5, seed=0)
    assert sched.batch_counts() == {"A": 2, "B": 2}
    assert len(sched.batches) == 4
    a_indices = sorted(i for task, idx in sched.batches if task == "A" for i in idx)
    assert a_indices == list(range(10))  # a permutation, no repeats
    b_indices = sorted(i for task, idx in sched.batches if task == "B" for i in idx)
    assert b_indices == list(range(10))


def test_schedule_table1_sizes_balanced():
    sched = make_epoch_schedule(TABLE1_SIZES, batch_size=32, seed=1)
    counts = sched.batch_counts()
    assert counts == {task: 611 for task in TABLE1_SIZES}
    drawn = sched.example_counts()
    assert max(drawn.values()) - min(drawn.values()) <= 32
    # largest task is a without-replacement shuffle
    click = [i for task, idx in sched.batches if task == "clickbait" for i in idx]
    assert sorted(click) == list(range(19538))
    # smaller tasks oversample with replacement but stay in range
    rumor = [i for task, idx in sched.batches if task == "rumor" for i in idx]
    assert len(rumor) == 19538
    assert min(rumor) >= 0 and max(rumor) < 1705


def test_schedule_batches_homogeneous_and_bounded():
    sched = make_epoch_schedule({"A": 7, "B": 23}, batch_size=4, seed=3)
    for task, idx in sched.batches:
        assert task in ("A", "B")
        assert 1 <= len(idx) <= 4


def test_schedule_deterministic_per_seed():
    s1 = make_epoch_schedule(TABLE1_SIZES, 32, seed=5)
    s2 = make_epoch_schedule(TABLE1_SIZES, 32, seed=5)
    s3 = make_epoch_schedule(TABLE1_SIZES, 32, seed=6)
    assert s1.batches == s2.batches
    assert s1.batches != s3.batches


def test_schedule_rejects_bad_input():
    with pytest.raises(ValueError, match="empty task set"):
        make_epoch_schedule({}, 32, 0)
    with pytest.raises(ValueError, match="no examples"):
        make_epoch_schedule({"A": 0}, 32, 0)


def test_lr_at_linear_decay():
    assert lr_at(0, 100, 5e-6) == 5e-6
    assert lr_at(100, 100, 5e-6) == 0.0
    assert lr_at(50, 100, 5e-6) == pytest.approx(2.5e-6, rel=1e-15)
    values = [lr_at(s, 100, 5e-6) for s in range(101)]
    assert all(a >= b for a, b in zip(values, values[1:]))
    with pytest.raises(ValueError):
        lr_at(101, 100, 5e-6)
    with pytest.raises(ValueError):
        lr_at(0, 0, 5e-6)


def test_adam_lr_zero_is_bit_exact_noop():
    rng = np.random.default_rng(0)
    params = {"w": rng.standard_normal((4, 4)), "b": rng.standard_normal(4)}
    before = {k: v.copy() for k, v in params.items()}
    state = AdamState()
    new, state = adam_step(params, {k: rng.standard_normal(v.shape) for k, v in params.items()}, state, lr=0.0)
    for k in params:
        assert np.array_equal(new[k], before[k])
    # moments did advance
    assert state.t["w"] == 1 and np.any(state.m["w"] != 0)


def test_adam_first_step_magnitude_is_lr():
    params = {"w": np.array([1.0])}
    new, _ = adam_step(params, {"w": np.array([1.0])}, AdamState(), lr=0.5)
    delta = params["w"][0] - new["w"][0]
    # bias-corrected first step moves by lr/(1 + eps)
    assert delta == pytest.approx(0.5, rel=1e-7)


def test_adam_zero_gradients_leave_params():
    params = {"w": np.array([2.0, -3.0])}
    state = AdamState()
    new, state = adam_step(params, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.array_equal(new["w"], params["w"])
    # after a real step, zero grads decay the moments toward 0
    new, state = adam_step(new, {"w": np.ones(2)}, state, lr=0.1)
    m_after_grad = state.m["w"].copy()
    _, state = adam_step(new, {"w": np.zeros(2)}, state, lr=0.1)
    assert np.all(np.abs(state.m["w"]) < np.abs(m_after_grad))


def test_adam_rejects_nonfinite_gradients():
    with pytest.raises(ValueError, match="non-finite"):
        adam_step({"w": np.zeros(2)}, {"w": np.array([1.0, np.nan])}, AdamState(), lr=0.1)


def test_adam_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), lr=0.1)


def test_early_stopper_patience_trace():
    # val sequence [3,2,2,2,2,2,2] with patience 5: stop after epoch 7, best 2
    stopper = EarlyStopper(patience=5)
    stops = [stopper.update(e, v) for e, v in enumerate([3, 2, 2, 2, 2, 2, 2], start=1)]
    assert stops == [False, False, False, False, False, False, True]
    assert stopper.best_epoch == 2


# --- end-to-end loop behavior ---------------------------------------------------


def _tiny_setup(task_names=("alpha", "beta"), examples=60, seed=0, p_shared=0.0):
    suite = generate_synthetic_suite(
        seed, SyntheticSuiteConfig(task_names=tuple(task_names), examples_per_task=examples,
                                   p_shared=p_shared)
    )
    splits = {t: split(ds, seed=0) for t, ds in suite.items()}
    texts = [ex.text for t in sorted(splits) for ex in splits[t].train.examples]
    vocab = build_vocab(texts)
    config = EncoderConfig(vocab_size=vocab.size, embed_dim=16, num_layers=1, num_heads=2,
                           ffn_dim=32, max_seq_len=16, dropout_rate=0.1, seed=seed)
    model = build_model(config, [splits[t].train.spec for t in sorted(splits)], vocab=vocab)
    return model, splits


def _quick_config(**overrides):
    base = dict(learning_rate=1e-3, batch_size=32, max_epochs=3, patience=3, max_seq_len=16, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


def test_train_multitask_requires_matching_task_set():
    model, splits = _tiny_setup()
    with pytest.raises(ValueError, match="missing"):
        train_multitask(model, {"alpha": splits["alpha"]}, _quick_config())


def test_train_rejects_empty_split():
    model, splits = _tiny_setup()
    spec = splits["alpha"].train.spec
    empty = SplitDataset(
        train=Dataset(spec=spec, examples=()),
        validation=splits["alpha"].validation,
        test=splits["alpha"].test,
        seed=0, ratios=(0.8, 0.1, 0.1),
    )
    with pytest.raises(ValueError, match="empty train split"):
        train_multitask(model, {"alpha": empty, "beta": splits["beta"]}, _quick_config())


def test_training_is_deterministic():
    model, splits = _tiny_setup()
    m1, h1 = train_multitask(model, splits, _quick_config())
    m2, h2 = train_multitask(model, splits, _quick_config())
    f1, f2 = flatten_params(m1), flatten_params(m2)
    for k in f1:
        assert np.array_equal(f1[k], f2[k])
    assert [r.to_dict() for r in h1.epochs] == [r.to_dict() for r in h2.epochs]
    assert h1.best_epoch == h2.best_epoch


def test_training_leaves_input_model_untouched():
    model, splits = _tiny_setup()
    before = {k: v.copy() for k, v in flatten_params(model).items()}
    train_multitask(model, splits, _quick_config())
    after = flatten_params(model)
    for k in before:
        assert np.array_equal(before[k], after[k])


def test_single_task_multitask_equals_finetune_loop():
    # With one task the stage-1 loop is plain single-task training.
    model, splits = _tiny_setup(task_names=("alpha", "beta"))
    single = {"alpha": splits["alpha"]}
    only_alpha, _ = finetune_task(model, "alpha", splits["alpha"], _quick_config())

    import misinfo_mtl.multitask as mt

    solo_model = mt.MultiTaskModel(encoder=model.encoder, vocab=model.vocab)
    mt.register_task(solo_model, model.tasks["alpha"], seed=0)
    solo_model.heads["alpha"] = {k: v.copy() for k, v in model.heads["alpha"].items()}
    solo_trained, _ = train_multitask(solo_model, single, _quick_config())
    for k in solo_trained.encoder.tensors:
        assert np.array_equal(solo_trained.encoder.tensors[k], only_alpha.encoder.tensors[k])
    for k in solo_trained.heads["alpha"]:
        assert np.array_equal(solo_trained.heads["alpha"][k], only_alpha.heads["alpha"][k])


def test_stage1_step_isolation_and_stage2_head_freeze():
    model, splits = _tiny_setup()
    trained, _ = train_multitask(model, splits, _quick_config(max_epochs=1, patience=1))
    tuned, _ = finetune_task(trained, "alpha", splits["alpha"], _quick_config(max_epochs=2, patience=2))
    for k in trained.heads["beta"]:
        assert np.array_equal(tuned.heads["beta"][k], trained.heads["beta"][k])
    assert any(
        not np.array_equal(tuned.encoder.tensors[k], trained.encoder.tensors[k])
        for k in trained.encoder.tensors
    )


def test_early_stopping_bounds_respected():
    model, splits = _tiny_setup(examples=40)
    cfg = _quick_config(learning_rate=5e-2, max_epochs=10, patience=2)
    _, hist = train_multitask(model, splits, cfg)
    assert len(hist.epochs) <= 10
    assert len(hist.epochs) - hist.best_epoch <= cfg.patience
    vals = [r.val_loss_total for r in hist.epochs]
    assert hist.best_epoch == int(np.argmin(vals)) + 1
    if hist.stop_reason == "early_stopping":
        assert len(hist.epochs) - hist.best_epoch == cfg.patience


def test_history_records_are_complete():
    model, splits = _tiny_setup()
    _, hist = train_multitask(model, splits, _quick_config(max_epochs=2, patience=2))
    assert [r.epoch for r in hist.epochs] == list(range(1, len(hist.epochs) + 1))
    for record in hist.epochs:
        assert set(record.train_loss) == {"alpha", "beta"}
        assert set(record.val_loss) == {"alpha", "beta"}
        assert record.val_loss_total == pytest.approx(sum(record.val_loss.values()))
        assert 0.0 <= record.lr <= 1e-3


def test_finetune_unknown_task(tiny_model):
    with pytest.raises(KeyError, match="unknown task"):
        finetune_task(tiny_model, "nope", None, _quick_config())


def test_grid_bounds_are_the_published_ones():
    assert GRID_LEARNING_RATES == (5e-5, 5e-6, 5e-7)
    assert GRID_BATCH_SIZES == (16, 32)
    grid = hyperparameter_grid()
    assert len(grid) == 6
    assert (5e-6, 32) in grid


def test_stage2_improves_or_ties_validation_macro_f1():
    # Mean over 3 seeds: specializing on one task must not hurt its val macro-F1.
    from misinfo_mtl.evaluation import evaluate_model

    stage1_scores, stage2_scores = [], []
    for seed in (0, 1, 2):
        suite = generate_synthetic_suite(
            4, SyntheticSuiteConfig(task_names=("alpha", "beta"), examples_per_task=150)
        )
        splits = {t: split(ds, seed=0) for t, ds in suite.items()}
        vocab = build_vocab([ex.text for t in sorted(splits) for ex in splits[t].train.examples])
        enc = EncoderConfig(vocab_size=vocab.size, embed_dim=32, num_layers=2, num_heads=4,
                            ffn_dim=64, max_seq_len=16, dropout_rate=0.1, seed=seed)
        cfg = TrainConfig(learning_rate=1e-3, batch_size=32, max_epochs=10, patience=10,
                          max_seq_len=16, seed=seed)
        model = build_model(enc, [splits[t].train.spec for t in sorted(splits)], vocab=vocab)
        stage1, _ = train_multitask(model, splits, cfg)
        stage2, _ = finetune_task(stage1, "alpha", splits["alpha"], cfg)
        val = splits["alpha"].validation.examples
        stage1_scores.append(evaluate_model(stage1, "alpha", val).macro_f1)
        stage2_scores.append(evaluate_model(stage2, "alpha", val).macro_f1)
    assert np.mean(stage2_scores) >= np.mean(stage1_scores) - 1e-9


def test_grid_search_picks_lowest_validation_loss():
    from misinfo_mtl.training import grid_search

    model, splits = _tiny_setup(examples=40)
    best_cfg, points = grid_search(
        lambda: model, splits, _quick_config(max_epochs=2, patience=2),
        learning_rates=(1e-2, 1e-3), batch_sizes=(32,),
    )
    assert len(points) == 2
    winner = min(points, key=lambda p: p.best_val_loss)
    assert best_cfg.learning_rate == winner.learning_rate
    assert best_cfg.batch_size == winner.batch_size
    assert best_cfg.max_epochs == 2  # other settings carried over
