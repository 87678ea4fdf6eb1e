"""Training loop, metrics, checkpoint persistence, ablation harness."""

from __future__ import annotations

import dataclasses
import math
import warnings

import numpy as np
import pytest

from conftest import tiny_model_config
from mibvqa import data as dt
from mibvqa.training import (
    ABLATION_VARIANTS,
    Checkpoint,
    CheckpointError,
    DivergenceError,
    TrainConfig,
    ablate,
    build_model,
    compute_metrics,
    evaluate,
    evaluate_model,
    format_ablation_table,
    load_checkpoint,
    model_config_for,
    save_checkpoint,
    train,
)


def quick_config(**overrides) -> TrainConfig:
    base = dict(epochs=2, batch_size=16, learning_rate=2e-3, seed=1)
    base.update(overrides)
    return TrainConfig(**base)


def run_quick(dataset, **overrides):
    cfg = quick_config(**overrides)
    return train(cfg, dataset, model_config=tiny_model_config(dataset, cfg))


# ---------------------------------------------------------------- defaults


def test_default_train_config_follows_published_protocol():
    cfg = TrainConfig()
    assert cfg.epochs == 150
    assert cfg.batch_size == 280
    assert cfg.learning_rate == 1e-5
    assert cfg.lam == 1.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lam=-0.5)


def test_model_config_for_derives_widths_from_dataset(small_dataset):
    mc = model_config_for(small_dataset, TrainConfig())
    assert mc.vocab_size == len(dt.VOCABULARY)
    assert mc.n_classes == len(small_dataset.answer_space.answers)
    assert mc.t_max == small_dataset.config.t_max
    assert mc.k_max == small_dataset.config.k_max
    assert mc.d_raw == len(dt.OBJECT_CLASSES) + 3


# ---------------------------------------------------------------- determinism


def test_identical_runs_reproduce_per_step_losses(micro_dataset):
    first = run_quick(micro_dataset)
    second = run_quick(micro_dataset)
    assert len(first.step_records) == len(second.step_records)
    for a, b in zip(first.step_records, second.step_records):
        assert a == b  # exact float equality, every recorded term


def test_different_seed_changes_trajectory(micro_dataset):
    a = run_quick(micro_dataset, seed=1)
    b = run_quick(micro_dataset, seed=2)
    assert a.step_records != b.step_records


def test_lambda_zero_final_equals_cross_entropy_bitwise(micro_dataset):
    result = run_quick(micro_dataset, lam=0.0)
    for record in result.step_records:
        assert record["final"] == record["ce"]


# ---------------------------------------------------------------- flags


def test_flag_isolation_no_bottleneck_parameters(micro_dataset):
    result = run_quick(micro_dataset, enable_infomax=False)
    names = set(result.model.parameter_map())
    assert not any(name.startswith("ib.") for name in names)
    assert not any(name.startswith("ib.") for name in result.checkpoint.parameters)


def test_flag_isolation_no_attention_parameters(micro_dataset):
    result = run_quick(micro_dataset, enable_cross_attention=False)
    names = set(result.model.parameter_map())
    assert not any(name.startswith("att.") for name in names)


def test_disabled_infomax_reports_zero_info_terms(micro_dataset):
    result = run_quick(micro_dataset, enable_infomax=False)
    for record in result.step_records:
        assert record["mi_estimate"] == 0.0
        assert record["skl"] == 0.0
        assert record["final"] == record["ce"]


# ---------------------------------------------------------------- learning


def test_loss_decreases_on_separable_presence_task():
    cfg = dt.DatasetConfig(n_samples=64, seed=41,
                           category_mix={"presence": 1.0})
    ds = dt.generate_dataset(cfg)
    result = run_quick(ds, epochs=12, learning_rate=5e-3)
    first = result.epoch_records[0]["mean_ce"]
    last = result.epoch_records[-1]["mean_ce"]
    assert math.isfinite(first) and math.isfinite(last)
    assert last < first


def test_epoch_callback_can_stop_training(small_dataset):
    seen = []

    def stop_after_first(epoch, model, record):
        seen.append(epoch)
        return True

    cfg = quick_config(epochs=10)
    result = train(cfg, small_dataset,
                   model_config=tiny_model_config(small_dataset, cfg),
                   epoch_callback=stop_after_first)
    assert seen == [0]
    assert len(result.epoch_records) == 1


def test_divergence_raises_with_context(micro_dataset):
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError) as info:
            run_quick(micro_dataset, learning_rate=1e150, epochs=3)
    err = info.value
    assert err.term in {"ce", "mi_estimate", "skl", "info_loss", "final"}
    assert err.step >= 0
    assert not math.isfinite(err.value) or math.isnan(err.value)


# ---------------------------------------------------------------- metrics


def test_metrics_hand_count():
    # class A: 3/4 correct, class B: 1/2 correct -> OA 4/6, AA 0.625
    labels = [0, 0, 0, 0, 1, 1]
    preds = [0, 0, 0, 9, 1, 9]
    cats = ["a", "a", "a", "a", "b", "b"]
    m = compute_metrics(labels, preds, cats)
    assert m.overall_accuracy == pytest.approx(4 / 6)
    assert m.average_accuracy == pytest.approx(0.625)
    assert m.per_category_accuracy == {"a": 0.75, "b": 0.5}
    assert m.n_samples == 6


def test_metrics_constant_predictor():
    # Always predicts class 0; class 0 is 25% of samples in each category.
    labels, preds, cats = [], [], []
    for c, cat in enumerate(["w", "x", "y", "z"]):
        labels += [0, 1, 2, 3]
        preds += [0, 0, 0, 0]
        cats += [cat] * 4
    m = compute_metrics(labels, preds, cats)
    assert m.overall_accuracy == 0.25
    assert m.average_accuracy == 0.25


def test_metrics_perfect_predictor():
    m = compute_metrics([3, 1, 4], [3, 1, 4], ["a", "b", "a"])
    assert m.overall_accuracy == 1.0
    assert m.average_accuracy == 1.0


def test_metrics_confusion_counts():
    m = compute_metrics([0, 0, 1], [0, 1, 1], ["a", "a", "a"])
    assert m.confusion[0][0] == 1
    assert m.confusion[0][1] == 1
    assert m.confusion[1][1] == 1
    assert sum(c for row in m.confusion.values() for c in row.values()) == 3
    as_dict = m.to_dict()
    assert as_dict["confusion"]["0"]["1"] == 1  # JSON-safe string keys


def test_evaluation_warns_when_category_missing(micro_dataset):
    # A 10-sample dataset's 2-sample test split cannot hold all 4 categories.
    ds = dt.generate_dataset(dt.DatasetConfig(n_samples=10, seed=42))
    result = run_quick(micro_dataset, epochs=1)
    with pytest.warns(UserWarning):
        evaluate_model(result.model, ds, "test")


def test_evaluation_is_deterministic(small_dataset):
    result = run_quick(small_dataset, epochs=1)
    a = evaluate_model(result.model, small_dataset, "test")
    b = evaluate_model(result.model, small_dataset, "test")
    assert a == b


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    loaded = load_checkpoint(path)

    for name, arr in result.checkpoint.parameters.items():
        np.testing.assert_array_equal(loaded.parameters[name], arr)
    assert loaded.model_config == result.checkpoint.model_config
    assert loaded.train_config == result.checkpoint.train_config
    assert loaded.answers == result.checkpoint.answers
    assert loaded.step_count == result.checkpoint.step_count

    path2 = tmp_path / "model2.ckpt"
    save_checkpoint(loaded, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_checkpoint_evaluation_equality(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    loaded = load_checkpoint(path)
    direct = evaluate_model(result.model, small_dataset, "test")
    reloaded = evaluate(loaded, small_dataset, "test")
    assert direct == reloaded


def test_checkpoint_header_shape(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    header = path.read_text().splitlines()[0].split()
    assert header[0] == "ckpt"
    assert header[1] == "v1"
    assert int(header[2]) == result.checkpoint.seed
    assert int(header[3]) == len(result.checkpoint.parameters)


def test_checkpoint_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_checkpoint_tampered_shape_names_parameter(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    lines = path.read_text().splitlines(keepends=True)
    idx = next(i for i, l in enumerate(lines)
               if l.startswith("tensor fus.mlp_b2 "))
    parts = lines[idx].split()
    parts[-1] = str(int(parts[-1]) + 1)  # claim one more column than stored
    lines[idx] = " ".join(parts) + "\n"
    bad = tmp_path / "tampered.ckpt"
    bad.write_text("".join(lines))
    with pytest.raises(CheckpointError) as info:
        load_checkpoint(bad)
    assert "fus.mlp_b2" in str(info.value)


def test_checkpoint_truncated_values_rejected(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    text = path.read_text()
    cut = tmp_path / "cut.ckpt"
    cut.write_text(text[: int(len(text) * 0.7)])
    with pytest.raises(CheckpointError):
        load_checkpoint(cut)


def test_checkpoint_malformed_float_rejected(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    lines = path.read_text().splitlines(keepends=True)
    idx = next(i for i, l in enumerate(lines) if l.startswith("tensor ")) + 1
    lines[idx] = lines[idx].replace(lines[idx].split()[0], "bogus", 1)
    bad = tmp_path / "badfloat.ckpt"
    bad.write_text("".join(lines))
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_checkpoint_version_mismatch_rejected(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    path = tmp_path / "model.ckpt"
    save_checkpoint(result.checkpoint, path)
    text = path.read_text().replace("ckpt v1 ", "ckpt v9 ", 1)
    bad = tmp_path / "v9.ckpt"
    bad.write_text(text)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_build_model_missing_parameter_named(small_dataset):
    result = run_quick(small_dataset)
    ckpt = result.checkpoint
    params = dict(ckpt.parameters)
    params.pop("enc.embed")
    broken = dataclasses.replace(ckpt, parameters=params)
    with pytest.raises(CheckpointError) as info:
        build_model(broken)
    assert "enc.embed" in str(info.value)


def test_evaluate_rejects_mismatched_answer_space(tmp_path, small_dataset):
    result = run_quick(small_dataset)
    ckpt = dataclasses.replace(result.checkpoint,
                               answers=("yes", "no"))
    with pytest.raises(CheckpointError):
        evaluate(ckpt, small_dataset, "test")


# ---------------------------------------------------------------- ablation


@pytest.fixture(scope="module")
def ablation_setup():
    ds = dt.generate_dataset(dt.DatasetConfig(n_samples=160, seed=55))
    cfg = TrainConfig(epochs=3, batch_size=16, learning_rate=2e-3, seed=77)
    mc = tiny_model_config(ds, cfg)
    return ds, cfg, mc


@pytest.fixture(scope="module")
def ablation_result(ablation_setup):
    ds, cfg, mc = ablation_setup
    return ablate(ds, cfg, master_seed=77, model_config=mc)


def test_ablation_has_four_structured_rows(ablation_result):
    rows = ablation_result.rows
    assert [r["name"] for r in rows] == [v[0] for v in ABLATION_VARIANTS]
    for row in rows:
        for category in ("count", "presence", "comparison", "rural_urban"):
            assert category in row["per_category_accuracy"]
        assert 0.0 <= row["overall_accuracy"] <= 1.0
        assert 0.0 <= row["average_accuracy"] <= 1.0


def test_ablation_table_contains_columns(ablation_result):
    table = ablation_result.table
    for needle in ("variant", "count", "presence", "comparison",
                   "rural_urban", "OA", "AA", "baseline",
                   "cross-attention+infomax"):
        assert needle in table
    assert format_ablation_table(ablation_result.rows) == table


def test_ablation_rerun_byte_identical(ablation_setup, ablation_result):
    ds, cfg, mc = ablation_setup
    again = ablate(ds, cfg, master_seed=77, model_config=mc)
    assert again.table == ablation_result.table
    assert again.rows == ablation_result.rows
    for name, ckpt in ablation_result.checkpoints.items():
        other = again.checkpoints[name]
        for pname, arr in ckpt.parameters.items():
            np.testing.assert_array_equal(other.parameters[pname], arr)


def test_ablation_baseline_consistent_with_standalone_run(ablation_setup,
                                                          ablation_result):
    ds, cfg, mc = ablation_setup
    standalone_cfg = dataclasses.replace(
        cfg, seed=77 + 0, enable_cross_attention=False, enable_infomax=False)
    standalone_mc = dataclasses.replace(
        mc, enable_cross_attention=False, enable_infomax=False)
    result = train(standalone_cfg, ds, model_config=standalone_mc)
    metrics = evaluate_model(result.model, ds, "test")
    baseline = ablation_result.rows[0]
    assert baseline["name"] == "baseline"
    assert baseline["overall_accuracy"] == metrics.overall_accuracy
    assert baseline["average_accuracy"] == metrics.average_accuracy


def test_ablation_flags_per_variant(ablation_result):
    flags = {(r["enable_cross_attention"], r["enable_infomax"])
             for r in ablation_result.rows}
    assert flags == {(False, False), (True, False), (False, True), (True, True)}
