"""Tests for the experiment harness."""

import math

import numpy as np
import pytest

import highway_evo.harness as harness_mod
from highway_evo.codec import GENOTYPE_BITS
from highway_evo.evolution import HistoryRecord
from highway_evo.fitness import FitnessRecord
from highway_evo.harness import (
    ExperimentConfig,
    HISTORY_COLUMNS,
    SUMMARY_COLUMNS,
    build_standard_network,
    run_experiment,
    run_seed_for,
    standard_network_baseline,
    summarize,
    write_history_csv,
)
from highway_evo.synthdigits import generate_dataset


@pytest.fixture(scope="module")
def small_data(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("digits")
    generate_dataset(data_dir, train_count=1500, test_count=300, seed=0)
    return data_dir


def tiny_config(data_dir, out_dir, **overrides):
    settings = dict(
        variant="niching", generations=2, repetitions=1, seed=5,
        epochs=1, batch_size=32,
        train_subset=300, val_subset=60, test_subset=60, validation_count=200,
        data_dir=data_dir, out_dir=out_dir,
    )
    settings.update(overrides)
    return ExperimentConfig(**settings)


def test_summarize_singleton():
    row = summarize([0.5])
    assert (row.minimum, row.mean, row.std, row.maximum) == (0.5, 0.5, 0.0, 0.5)


def test_summarize_two_points():
    row = summarize([0.0, 1.0])
    assert (row.minimum, row.mean, row.std, row.maximum) == (0.0, 0.5, 0.5, 1.0)


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        summarize([])


def test_summarize_orders():
    row = summarize([0.3, 0.7, 0.1, 0.9, 0.5])
    assert row.minimum <= row.mean <= row.maximum
    assert row.std >= 0.0


def test_variant_semantics():
    base = dict(data_dir="d", out_dir="o")
    simple = ExperimentConfig(variant="simple", **base).ea_config()
    assert simple.adapt_mutation is False and simple.eta == 0.0
    rech = ExperimentConfig(variant="rechenberg", **base).ea_config()
    assert rech.adapt_mutation is True and rech.eta == 0.0
    niching = ExperimentConfig(variant="niching", **base).ea_config()
    assert niching.adapt_mutation is True and niching.eta == 0.1
    assert niching.n_bits == GENOTYPE_BITS


def test_unknown_variant_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig(variant="annealing").validate()


def test_paper_scale_protocol():
    config = ExperimentConfig().apply_paper_scale()
    assert config.generations == 30
    assert config.repetitions == 10
    assert config.epochs == 5
    assert config.train_subset is None
    assert config.val_subset is None
    assert config.test_subset is None


def test_run_seed_spacing():
    assert run_seed_for(0, 0) != run_seed_for(1, 0)
    assert run_seed_for(0, 1) != run_seed_for(0, 0)
    seeds = {run_seed_for(master, rep) for master in range(50) for rep in range(10)}
    assert len(seeds) == 500


def test_history_csv_layout(tmp_path):
    history = [
        HistoryRecord(0, 3.5, 3.5, 3.5, 0.05, False, "0" * 20),
        HistoryRecord(1, math.inf, 3.5, 3.5, 0.05, True, "1" * 20),
    ]
    path = tmp_path / "history.csv"
    write_history_csv(path, history)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(HISTORY_COLUMNS)
    assert lines[1] == "0,3.5,3.5,3.5,0.05,0," + "0" * 20
    assert lines[2] == "1,inf,3.5,3.5,0.05,1," + "1" * 20


def test_standard_network_structure():
    model = build_standard_network()
    names = [layer.name for layer in model.layers]
    assert names == [
        "module0.project", "module0.highway0", "module0.pool", "module0.norm",
        "module1.highway0", "module1.pool", "module1.norm",
        "module2.highway0", "module2.pool", "module2.norm",
        "flatten", "dense1", "dense2", "head",
    ]
    by_name = {p.name: p.data for p in model.parameters()}
    assert by_name["module0.highway0.conv_w"].shape == (16, 16, 3, 3)
    assert by_name["module1.highway0.conv_w"].shape == (16, 16, 2, 2)
    assert by_name["module2.highway0.conv_w"].shape == (16, 16, 1, 1)
    assert by_name["dense1.weight"].shape[1] == 128
    assert by_name["dense2.weight"].shape[1] == 256
    assert model.shape_trace[-1][1] == (10,)


def test_standard_baseline_deterministic(small_data, tmp_path):
    from highway_evo.harness import load_experiment_splits
    config = tiny_config(small_data, tmp_path)
    splits = load_experiment_splits(config)
    a = standard_network_baseline(splits, seed=3, epochs=1, batch_size=32)
    b = standard_network_baseline(splits, seed=3, epochs=1, batch_size=32)
    assert a.fitness == b.fitness
    assert a.test_accuracy == b.test_accuracy
    assert 0.0 < a.test_accuracy < 1.0


def test_experiment_artifacts_and_reruns_identical(small_data, tmp_path):
    first = run_experiment(tiny_config(small_data, tmp_path / "a"))
    second = run_experiment(tiny_config(small_data, tmp_path / "b"))

    run = first.runs[0]
    assert run.status == "ok"
    # 1 initial evaluation + one per generation
    assert len(run.history) == 1 + first.config.generations
    history_a = run.history_path.read_bytes()
    history_b = second.runs[0].history_path.read_bytes()
    assert history_a == history_b
    assert run.best_record.bits == second.runs[0].best_record.bits
    assert run.spec_path.read_bytes() == second.runs[0].spec_path.read_bytes()

    summary = first.summary_path.read_text().splitlines()
    assert summary[0] == ",".join(SUMMARY_COLUMNS)
    assert summary[1].startswith("niching,")
    report = first.report_path.read_text()
    assert "published full-scale reference" in report
    assert "0.991" in report and "0.977" in report


def test_experiment_best_json_fields(small_data, tmp_path):
    import json
    result = run_experiment(tiny_config(small_data, tmp_path))
    payload = json.loads(result.runs[0].spec_path.read_text())
    for key in ("num_modules", "layers_per_module", "filters", "pool_size",
                "highway_activation", "dense_activation", "dense1_units",
                "dense2_units", "learning_rate", "genotype_bits", "seed",
                "fitness", "test_accuracy"):
        assert key in payload
    assert payload["seed"] == run_seed_for(5, 0)
    assert len(payload["genotype_bits"]) == GENOTYPE_BITS


def test_saved_best_model_loads(small_data, tmp_path):
    from highway_evo.nn import load_model
    result = run_experiment(tiny_config(small_data, tmp_path))
    model = load_model(result.runs[0].model_path)
    assert model.genotype_bits == result.runs[0].best_record.bits
    x = np.zeros((2, 1, 28, 28), dtype=np.float32)
    assert model.forward(x, training=False).shape == (2, 10)


class AllFailFitness:
    """Stand-in fitness whose every evaluation diverges."""

    def __init__(self, data, config, base_seed):
        self.cache = {}

    def __call__(self, bits):
        key = "".join(str(int(b)) for b in bits)
        self.cache[key] = FitnessRecord(
            bits=key, fitness=math.inf, validation_accuracy=0.0,
            test_accuracy=None, wall_time=0.0, status="failed")
        return math.inf


def test_all_failed_runs_marked_incomplete(small_data, tmp_path, monkeypatch):
    monkeypatch.setattr(harness_mod, "NetworkFitness", AllFailFitness)
    result = run_experiment(tiny_config(small_data, tmp_path, repetitions=2))
    assert all(run.status == "failed" for run in result.runs)
    assert result.stats is None
    assert result.median_init is None
    summary_row = result.summary_path.read_text().splitlines()[1]
    assert summary_row.endswith(",,,,")  # min/mean/std/max cells empty
    report = result.report_path.read_text()
    assert "INCOMPLETE" in report
    assert "FAILED" in report
    # failed runs still leave their histories on disk
    assert result.runs[0].history_path.exists()
    assert result.runs[0].model_path is None


def test_median_init_matches_initial_records(small_data, tmp_path):
    result = run_experiment(tiny_config(small_data, tmp_path, repetitions=2))
    values = sorted(run.initial_record.test_accuracy for run in result.runs)
    expected = (values[0] + values[1]) / 2
    assert result.median_init == pytest.approx(expected, abs=0.0)
