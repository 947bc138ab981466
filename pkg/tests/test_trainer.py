import json
from dataclasses import replace

import numpy as np
import pytest

import cycleadapt.losses as losses_mod
from cycleadapt.autodiff import NonFiniteError
from cycleadapt.data import default_benchmark_pair, gen_two_moons_pair, ShiftSpec
from cycleadapt.models import ArchConfig, build_suite
from cycleadapt.trainer import (
    BatchStream,
    CheckpointError,
    MetricsRow,
    TrainConfig,
    TrainingAborted,
    ablation_run,
    config_from_flat,
    default_train_config,
    evaluate,
    flatten_config,
    load_checkpoint,
    read_metrics_csv,
    save_checkpoint,
    stability_spread,
    train,
)

PAIR = default_benchmark_pair(seed=21, n_per_domain=96)


def quick_cfg(**overrides) -> TrainConfig:
    base = dict(total_steps=60, eval_every=20, batch_size=16, seed=5)
    base.update(overrides)
    return default_train_config(**base)


class TestTrainBasics:
    def test_zero_steps_returns_initialized_suite_and_empty_history(self):
        result = train(quick_cfg(total_steps=0), PAIR)
        assert result.history == []
        fresh = build_suite(quick_cfg().arch)
        for a, b in zip(result.suite.parameters(), fresh.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_history_and_metrics_file_agree(self, tmp_path):
        path = tmp_path / "metrics.csv"
        result = train(quick_cfg(), PAIR, metrics_path=path)
        rows = read_metrics_csv(path)
        assert rows == result.history
        assert [r.step for r in rows] == [20, 40, 60]

    def test_determinism_bytewise(self, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        ckpts = [tmp_path / "a.bin", tmp_path / "b.bin"]
        for mp, cp in zip(paths, ckpts):
            result = train(quick_cfg(), PAIR, metrics_path=mp)
            save_checkpoint(result.suite, quick_cfg(), cp, step=60)
        assert paths[0].read_bytes() == paths[1].read_bytes()
        assert ckpts[0].read_bytes() == ckpts[1].read_bytes()

    def test_different_seed_changes_metrics(self, tmp_path):
        a = train(quick_cfg(seed=5), PAIR)
        b = train(quick_cfg(seed=6), PAIR)
        assert a.history != b.history

    def test_s0_never_draws_target_batches(self):
        result = train(quick_cfg(ablation_mode="S0"), PAIR)
        assert result.target_batches_drawn == 0
        assert result.source_batches_drawn == 60

    def test_adversarial_modes_draw_target(self):
        result = train(quick_cfg(ablation_mode="S1"), PAIR)
        assert result.target_batches_drawn == 60

    def test_data_arch_mismatch_rejected(self):
        cfg = quick_cfg()
        bad_arch = replace(cfg.arch, num_classes=3)
        with pytest.raises(ValueError, match="classes"):
            train(replace(cfg, arch=bad_arch), PAIR)

    def test_nan_abort_carries_last_breakdown(self, monkeypatch):
        calls = {"n": 0}
        real = losses_mod.total_loss

        def exploding(*args, **kwargs):
            calls["n"] += 1
            if calls["n"] >= 3:
                raise NonFiniteError("mul", "injected blowup")
            return real(*args, **kwargs)

        monkeypatch.setattr("cycleadapt.trainer.total_loss", exploding)
        with pytest.raises(TrainingAborted) as exc:
            train(quick_cfg(), PAIR)
        assert exc.value.step == 3
        assert exc.value.last_breakdown is not None

    def test_alternating_mode_runs_and_is_deterministic(self):
        a = train(quick_cfg(minimax_mode="alternating"), PAIR)
        b = train(quick_cfg(minimax_mode="alternating"), PAIR)
        assert a.history == b.history
        assert len(a.history) == 3


class TestBatchStream:
    def test_epoch_integrity(self):
        stream = BatchStream(10, 3, np.random.default_rng(0))
        seen = np.concatenate([stream.next() for _ in range(10)])  # 30 draws = 3 epochs
        counts = np.bincount(seen, minlength=10)
        assert np.all(counts == 3)
        assert stream.epochs_completed == 3

    def test_wrapping_batch_spans_epochs(self):
        stream = BatchStream(5, 3, np.random.default_rng(1))
        first_epoch = list(stream.order)
        batches = [stream.next() for _ in range(5)]  # 15 indices = 3 epochs
        flat = np.concatenate(batches)
        assert sorted(flat[:5].tolist()) == sorted(first_epoch)

    def test_draw_counter(self):
        stream = BatchStream(8, 4, np.random.default_rng(2))
        for _ in range(7):
            stream.next()
        assert stream.draws == 7


class TestEvaluate:
    def test_three_of_four(self, small_suite):
        # craft labels from the suite's own predictions, then corrupt one
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 3))
        from cycleadapt.models import predict
        from cycleadapt.autodiff import Tensor, no_grad

        with no_grad():
            _, p = predict(small_suite, Tensor(x))
        y = p.data.argmax(axis=1)
        y[0] = (y[0] + 1) % 3
        assert evaluate(small_suite, x, y) == pytest.approx(0.75)

    def test_all_correct(self, small_suite):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 3))
        from cycleadapt.models import predict
        from cycleadapt.autodiff import Tensor, no_grad

        with no_grad():
            _, p = predict(small_suite, Tensor(x))
        assert evaluate(small_suite, x, p.data.argmax(axis=1)) == 1.0

    def test_untrained_predictor_near_chance_on_balanced_labels(self):
        # binomial bound: n=10000, 4 sigma ~ 0.02
        suite = build_suite(ArchConfig(input_dim=2, num_classes=2, seed=123))
        rng = np.random.default_rng(7)
        x = rng.standard_normal((10000, 2))
        y = np.tile([0, 1], 5000)
        assert abs(evaluate(suite, x, y) - 0.5) < 0.02

    def test_missing_labels_rejected(self, small_suite):
        with pytest.raises(ValueError):
            evaluate(small_suite, np.ones((2, 3)), None)


class TestStabilitySpread:
    def rows(self, accs, total):
        step = total // len(accs)
        return [
            MetricsRow(step=(i + 1) * step, l_cls=0, l_dom=0, l_s2t=0, l_t2s=0,
                       l_cyc=0, l_total=0, source_acc=1.0, target_acc=a,
                       d_d_mean_out=0.5)
            for i, a in enumerate(accs)
        ]

    def test_constant_tail_has_zero_spread(self):
        history = self.rows([0.5, 0.9, 0.8, 0.8, 0.8], 100)
        assert stability_spread(history, 100, final_frac=0.6) == pytest.approx(0.0)

    def test_moving_tail_measured(self):
        history = self.rows([0.8, 0.8, 0.8, 0.5, 0.9], 100)
        spread = stability_spread(history, 100, final_frac=0.4)
        assert spread == pytest.approx(0.2)  # running means 0.5 then 0.7


class TestCheckpoint:
    def test_round_trip_identical_evaluation(self, tmp_path):
        cfg = quick_cfg()
        result = train(cfg, PAIR)
        path = tmp_path / "model.bin"
        save_checkpoint(result.suite, cfg, path, step=60)
        loaded, cfg2, step = load_checkpoint(path)
        assert step == 60
        assert flatten_config(cfg2) == flatten_config(cfg)
        for a, b in zip(result.suite.parameters(), loaded.parameters()):
            assert a.data.tobytes() == b.data.tobytes()
        assert evaluate(loaded, PAIR.x_t, PAIR.y_t_eval) == evaluate(
            result.suite, PAIR.x_t, PAIR.y_t_eval
        )

    def test_randomized_conditioning_maps_rebuilt_from_header(self, tmp_path):
        arch = replace(
            quick_cfg().arch, feature_dim=8, cond_threshold=4, cond_randomized_dim=12
        )
        cfg = replace(quick_cfg(), arch=arch)
        pair = gen_two_moons_pair(64, ShiftSpec(rotation_deg=30.0), seed=2)
        result = train(cfg, pair)
        assert result.suite.maps is not None
        path = tmp_path / "model.bin"
        save_checkpoint(result.suite, cfg, path, step=60)
        loaded, _, _ = load_checkpoint(path)
        assert np.array_equal(loaded.maps.r_f, result.suite.maps.r_f)
        assert np.array_equal(loaded.maps.r_p, result.suite.maps.r_p)
        assert evaluate(loaded, pair.x_t, pair.y_t_eval) == evaluate(
            result.suite, pair.x_t, pair.y_t_eval
        )

    def test_truncated_file_rejected(self, tmp_path):
        cfg = quick_cfg()
        suite = build_suite(cfg.arch)
        path = tmp_path / "model.bin"
        save_checkpoint(suite, cfg, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-16])
        with pytest.raises(CheckpointError, match="bytes"):
            load_checkpoint(path)

    def test_header_param_count_mismatch_rejected(self, tmp_path):
        cfg = quick_cfg()
        suite = build_suite(cfg.arch)
        path = tmp_path / "model.bin"
        save_checkpoint(suite, cfg, path)
        header, _, rest = path.read_bytes().partition(b"\n")
        doc = json.loads(header)
        doc["param_count"] += 8
        path.write_bytes(json.dumps(doc, sort_keys=True).encode() + b"\n" + rest)
        with pytest.raises(CheckpointError, match="mismatch|parameters"):
            load_checkpoint(path)

    def test_version_mismatch_rejected(self, tmp_path):
        cfg = quick_cfg()
        suite = build_suite(cfg.arch)
        path = tmp_path / "model.bin"
        save_checkpoint(suite, cfg, path)
        header, _, rest = path.read_bytes().partition(b"\n")
        doc = json.loads(header)
        doc["format_version"] = 99
        path.write_bytes(json.dumps(doc, sort_keys=True).encode() + b"\n" + rest)
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"\x00\x01\x02 not json\n junk")
        with pytest.raises(CheckpointError, match="header"):
            load_checkpoint(path)


class TestFlatConfig:
    def test_round_trip(self):
        cfg = default_train_config(seed=9, total_steps=123)
        flat = flatten_config(cfg)
        rebuilt = config_from_flat(flat)
        assert flatten_config(rebuilt) == flat

    def test_lambda_key_maps_to_domain_weight(self):
        cfg = config_from_flat(
            {"input_dim": 2, "num_classes": 2, "lambda": 0.5, "eta2": 0.25}
        )
        assert cfg.weights.lam == 0.5
        assert cfg.weights.eta2 == 0.25

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown config keys"):
            config_from_flat({"input_dim": 2, "num_classes": 2, "learning_rate": 0.1})

    def test_seed_reseeds_arch(self):
        cfg = config_from_flat({"input_dim": 2, "num_classes": 2, "seed": 77})
        assert cfg.seed == 77 and cfg.arch.seed == 77

    def test_reference_defaults(self):
        cfg = default_train_config()
        assert cfg.lr == 1e-3
        assert cfg.momentum == 0.9
        assert cfg.weight_decay == 5e-4
        assert cfg.batch_size == 32
        w = cfg.weights
        assert (w.lam, w.beta, w.eta1, w.eta2) == (1.0, 1.0, 0.01, 0.1)


class TestSourceOnlyOracles:
    """Source-only training as the yardstick for the synthetic domain gaps."""

    def test_rotated_moons_gap(self):
        pair = default_benchmark_pair(seed=7)
        cfg = default_train_config(seed=1, ablation_mode="S0", total_steps=4000)
        result = train(cfg, pair)
        held_out = default_benchmark_pair(seed=8)
        source_holdout_acc = evaluate(result.suite, held_out.x_s, held_out.y_s)
        target_acc = result.history[-1].target_acc
        assert source_holdout_acc >= 0.95
        assert target_acc < 0.90

    def test_large_translate_shift_drops_to_near_chance(self):
        from cycleadapt.data import gen_gaussian_shift_pair

        shift = ShiftSpec(kind="affine", rotation_deg=0.0, scale=(1.0, 1.0),
                          translate=(14.0, 0.0), noise_std=0.0)
        pair = gen_gaussian_shift_pair(
            240, 2, [[-2.0, 0.0], [2.0, 0.0]], np.eye(2) * 0.25, shift, seed=3
        )
        cfg = default_train_config(seed=1, ablation_mode="S0", total_steps=1500)
        result = train(cfg, pair)
        assert result.history[-1].source_acc >= 0.99
        assert abs(result.history[-1].target_acc - 0.5) <= 0.12

    def test_accuracy_matches_brute_force_recount(self):
        result = train(quick_cfg(), PAIR)
        from cycleadapt.autodiff import Tensor, no_grad
        from cycleadapt.models import predict

        with no_grad():
            _, p = predict(result.suite, Tensor(PAIR.x_t))
        correct = sum(
            1 for i in range(len(PAIR.x_t))
            if int(np.argmax(p.data[i])) == int(PAIR.y_t_eval[i])
        )
        assert result.history[-1].target_acc == pytest.approx(correct / len(PAIR.x_t))


class TestAblationRun:
    def test_needs_two_seeds(self):
        with pytest.raises(ValueError):
            ablation_run(quick_cfg(), PAIR, seeds=[1])

    def test_table_shape_and_determinism(self):
        cfg = quick_cfg(total_steps=30, eval_every=15)
        t1 = ablation_run(cfg, PAIR, seeds=[1, 2])
        t2 = ablation_run(cfg, PAIR, seeds=[1, 2])
        assert list(t1) == ["S0", "S1", "S2", "S3", "S4"]
        for mode in t1:
            assert t1[mode].accuracies == t2[mode].accuracies
            assert len(t1[mode].accuracies) == 2
            assert 0.0 <= t1[mode].mean <= 1.0
