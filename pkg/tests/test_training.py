"""Tests for metrics, Adam, the training loop, and report writers."""

import math

import numpy as np
import pytest

import oracles
from speechbp.dataset import fit_scaler
from speechbp.features import BASE_NAMES, FeatureVector
from speechbp.model import (EncoderConfig, ShapeMismatch, forward,
                            init_params, load_params, save_params)
from speechbp.textcodec import build_vocabulary, serialize_features, tokenize
from speechbp.training import (DIVERGENCE_LIMIT, Empty, EmptyDataset,
                               LabeledSequence, LengthMismatch, Metrics,
                               TrainConfig, TrainHistory, TrainingDiverged,
                               ZeroVariance, adam_step, confusion_matrix,
                               evaluate, init_adam_state, mae, mse, r2,
                               read_history_csv, total_loss,
                               total_loss_gradients, train,
                               validation_split, write_confusion_json,
                               write_history_csv, write_metrics_json)

VOCAB = build_vocabulary(BASE_NAMES)


def toy_encoder(**kw):
    base = dict(vocab_size=len(VOCAB), hidden_dim=8, n_layers=1, n_heads=2,
                ff_dim=16, max_len=128, dropout_p=0.1, seed=0)
    base.update(kw)
    return EncoderConfig(**base)


def labeled_examples(n=10, seed=1):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        sbp = 100.0 + 5.0 * i
        vec = FeatureVector(names=BASE_NAMES, values=rng.normal(0, 1, 17),
                            n_segments=1, schema_id="base")
        seq = tokenize(serialize_features(vec), VOCAB, max_len=128)
        out.append(LabeledSequence(f"p{i}", seq, sbp, sbp - 35.0))
    return out


def target_scaler(examples):
    return fit_scaler(np.array([[e.sbp, e.dbp] for e in examples]),
                      "standard")


class TestMse:
    def test_perfect(self):
        assert mse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_constant_offset(self):
        assert mse([0.0, 0.0], [2.0, 2.0]) == 4.0

    def test_hand_value(self):
        assert mse([1, 2, 3], [2, 2, 2]) == pytest.approx(2.0 / 3.0,
                                                          abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            mse([1.0], [1.0, 2.0])

    def test_empty(self):
        with pytest.raises(Empty):
            mse([], [])


class TestMae:
    def test_perfect(self):
        assert mae([5.0, 5.0], [5.0, 5.0]) == 0.0

    def test_hand_value(self):
        assert mae([0.0, 0.0], [1.0, 3.0]) == 2.0

    def test_jensen_bound(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            y = rng.normal(100, 20, 25)
            p = y + rng.normal(0, 6, 25)
            assert mae(y, p) <= math.sqrt(mse(y, p)) + 1e-12


class TestR2:
    def test_perfect(self):
        assert r2([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0

    def test_mean_baseline(self):
        y = [1.0, 2.0, 3.0]
        assert r2(y, [2.0, 2.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert r2([1, 2, 3], [1, 2, 4]) == pytest.approx(0.5, abs=1e-15)

    def test_zero_variance(self):
        with pytest.raises(ZeroVariance):
            r2([4.0, 4.0, 4.0], [1.0, 2.0, 3.0])

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        y = rng.normal(120, 15, 40)
        p = y + rng.normal(0, 4, 40)
        base = r2(y, p)
        for a, b in ((3.0, -7.0), (-0.5, 100.0)):
            assert r2(a * y + b, a * p + b) == pytest.approx(base,
                                                             abs=1e-12)


class TestMetricOracles:
    def test_twenty_fixtures(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            n = int(rng.integers(3, 40))
            y = rng.normal(110, 18, n)
            p = y + rng.normal(0, 5, n)
            assert abs(mse(y, p) - oracles.mse_oracle(y, p)) < 1e-12
            assert abs(mae(y, p) - oracles.mae_oracle(y, p)) < 1e-12
            assert abs(r2(y, p) - oracles.r2_oracle(y, p)) < 1e-12

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        y = rng.normal(100, 10, 30)
        p = y + rng.normal(0, 3, 30)
        perm = rng.permutation(30)
        assert mse(y[perm], p[perm]) == pytest.approx(mse(y, p), abs=1e-12)
        assert mae(y[perm], p[perm]) == pytest.approx(mae(y, p), abs=1e-12)
        assert r2(y[perm], p[perm]) == pytest.approx(r2(y, p), abs=1e-12)

    def test_equal_magnitude_residuals(self):
        # all residuals |r| = 3: mse = 9 = mae^2
        y = np.array([10.0, 20.0, 30.0, 40.0])
        p = y + np.array([3.0, -3.0, 3.0, -3.0])
        assert mse(y, p) == mae(y, p) ** 2


class TestTotalLoss:
    def test_perfect(self):
        assert total_loss([1.0], [2.0], [1.0], [2.0]) == 0.0

    def test_additivity(self):
        # sbp residuals [1, 0] -> 0.5; dbp residuals [1, 1] -> 1.0
        assert total_loss([1.0, 0.0], [1.0, 1.0],
                          [0.0, 0.0], [0.0, 0.0]) == 1.5

    def test_matches_component_sum(self):
        rng = np.random.default_rng(7)
        sp, dp = rng.normal(size=6), rng.normal(size=6)
        st, dt = rng.normal(size=6), rng.normal(size=6)
        assert total_loss(sp, dp, st, dt) == pytest.approx(
            mse(st, sp) + mse(dt, dp), abs=1e-15)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        sp, dp = rng.normal(size=5), rng.normal(size=5)
        st, dt = rng.normal(size=5), rng.normal(size=5)
        gs, gd = total_loss_gradients(sp, dp, st, dt)
        assert gs.shape == (5, 1) and gd.shape == (5, 1)
        for j in range(5):
            fd = oracles.central_difference(
                lambda: total_loss(sp, dp, st, dt),
                lambda: sp[j], lambda v: sp.__setitem__(j, v))
            assert gs[j, 0] == pytest.approx(fd, rel=1e-8)
            assert gs[j, 0] == pytest.approx(2.0 * (sp[j] - st[j]) / 5.0,
                                             abs=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            total_loss([1.0, 2.0], [1.0, 2.0], [1.0], [1.0, 2.0])


class TestAdam:
    def cfg(self, **kw):
        base = dict(epochs=1, batch_size=1, learning_rate=2e-5, seed=0)
        base.update(kw)
        return TrainConfig(**base)

    def test_first_step_hand_value(self):
        params = {"w": np.zeros(4)}
        state = init_adam_state(params)
        adam_step(params, {"w": np.ones(4)}, state, 1, self.cfg())
        want = oracles.adam_single_step_oracle(0.0, 1.0)
        assert np.all(params["w"] == want)
        assert params["w"][0] == pytest.approx(-2e-5, rel=1e-7)

    def test_zero_gradient_leaves_params(self):
        params = {"w": np.array([1.0, -2.0, 3.0])}
        before = params["w"].copy()
        state = init_adam_state(params)
        adam_step(params, {"w": np.zeros(3)}, state, 1, self.cfg())
        np.testing.assert_array_equal(params["w"], before)

    def test_update_opposes_gradient_sign(self):
        rng = np.random.default_rng(13)
        g = rng.normal(size=20)
        params = {"w": np.zeros(20)}
        state = init_adam_state(params)
        adam_step(params, {"w": g}, state, 1, self.cfg())
        nz = g != 0
        assert np.all(np.sign(params["w"][nz]) == -np.sign(g[nz]))

    def test_two_steps_match_scalar_recurrence(self):
        lr, b1, b2, eps = 2e-5, 0.9, 0.999, 1e-8
        params = {"w": np.array([0.5])}
        state = init_adam_state(params)
        theta, m, v = 0.5, 0.0, 0.0
        for t, g in ((1, 0.3), (2, -1.1)):
            adam_step(params, {"w": np.array([g])}, state, t, self.cfg())
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            theta -= lr * (m / (1 - b1 ** t)) / (
                math.sqrt(v / (1 - b2 ** t)) + eps)
        assert params["w"][0] == pytest.approx(theta, abs=1e-18)

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = init_adam_state(params)
        with pytest.raises(ShapeMismatch):
            adam_step(params, {"w": np.zeros(4)}, state, 1, self.cfg())
        with pytest.raises(ShapeMismatch):
            adam_step(params, {"x": np.zeros(3)}, state, 1, self.cfg())

    def test_step_index_starts_at_one(self):
        params = {"w": np.zeros(3)}
        with pytest.raises(ValueError):
            adam_step(params, {"w": np.zeros(3)}, init_adam_state(params),
                      0, self.cfg())


class TestTrainConfig:
    def test_defaults_echo_published_table(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.learning_rate) == (50, 32,
                                                                   2e-5)
        assert (cfg.beta1, cfg.beta2, cfg.epsilon) == (0.9, 0.999, 1e-8)

    @pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0),
                                    dict(learning_rate=0.0),
                                    dict(learning_rate=-1e-5),
                                    dict(beta1=1.0), dict(beta2=-0.1)])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestValidationSplit:
    def test_stratified_and_disjoint(self):
        examples = []
        for i in range(30):
            hyper = i % 2
            sbp = 130.0 if hyper else 100.0
            seq = tokenize("mfcc1 1.00", VOCAB, max_len=16)
            examples.append(LabeledSequence(f"p{i}", seq, sbp, 60.0))
        train_set, val = validation_split(examples, seed=5)
        assert len(train_set) == 28 and len(val) == 2
        ids = {e.participant_id for e in train_set}
        assert ids.isdisjoint({e.participant_id for e in val})
        assert {e.sbp for e in val} == {100.0, 130.0}

    def test_deterministic(self):
        examples = labeled_examples(20)
        a = validation_split(examples, seed=3)
        b = validation_split(examples, seed=3)
        assert [e.participant_id for e in a[1]] == \
            [e.participant_id for e in b[1]]

    def test_zero_fraction(self):
        examples = labeled_examples(8)
        train_set, val = validation_split(examples, seed=0, fraction=0.0)
        assert val == [] and len(train_set) == 8


class TestTrain:
    def test_bit_exact_determinism(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3,
                          seed=9, target_scaler=scaler)
        p1, h1 = train(enc, init_params(enc), examples[:8], examples[8:],
                       cfg)
        p2, h2 = train(enc, init_params(enc), examples[:8], examples[8:],
                       cfg)
        assert h1 == h2
        for name in p1:
            np.testing.assert_array_equal(p1[name], p2[name])

    def test_seed_changes_trajectory(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        kw = dict(epochs=3, batch_size=4, learning_rate=1e-3,
                  target_scaler=scaler)
        _, h1 = train(enc, init_params(enc), examples[:8], examples[8:],
                      TrainConfig(seed=1, **kw))
        _, h2 = train(enc, init_params(enc), examples[:8], examples[8:],
                      TrainConfig(seed=2, **kw))
        assert h1 != h2

    def test_history_lengths_and_finiteness(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        _, hist = train(enc, init_params(enc), examples[:8], examples[8:],
                        TrainConfig(epochs=4, batch_size=4,
                                    learning_rate=1e-3, seed=0,
                                    target_scaler=scaler))
        assert len(hist.train_loss) == len(hist.val_loss) == 4
        assert all(math.isfinite(v) for v in hist.train_loss)
        assert all(math.isfinite(v) for v in hist.val_loss)

    def test_empty_val_records_nan(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        _, hist = train(enc, init_params(enc), examples, [],
                        TrainConfig(epochs=1, batch_size=4,
                                    learning_rate=1e-3, seed=0,
                                    target_scaler=scaler))
        assert math.isnan(hist.val_loss[0])

    def test_empty_train_rejected(self):
        enc = toy_encoder()
        scaler = target_scaler(labeled_examples())
        with pytest.raises(EmptyDataset):
            train(enc, init_params(enc), [], [],
                  TrainConfig(target_scaler=scaler))

    def test_missing_scaler_rejected(self):
        enc = toy_encoder()
        with pytest.raises(ValueError):
            train(enc, init_params(enc), labeled_examples(), [],
                  TrainConfig())

    def test_divergent_learning_rate(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        with pytest.raises(TrainingDiverged):
            train(enc, init_params(enc), examples, [],
                  TrainConfig(epochs=12, batch_size=4, learning_rate=10.0,
                              seed=0, target_scaler=scaler))

    def test_parameters_move(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        before = init_params(enc)
        frozen = {n: a.copy() for n, a in before.items()}
        after, _ = train(enc, before, examples, [],
                         TrainConfig(epochs=1, batch_size=4,
                                     learning_rate=1e-3, seed=0,
                                     target_scaler=scaler))
        assert any(not np.array_equal(frozen[n], after[n]) for n in frozen)


class TestEvaluate:
    def test_constant_predictor_r2_nonpositive(self):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        params = init_params(enc)
        for head in ("sbp", "dbp"):
            params[f"{head}_weight"] = np.zeros_like(
                params[f"{head}_weight"])
            params[f"{head}_bias"] = np.array([0.3])
        m = evaluate(enc, params, examples, scaler)
        assert m.sbp_r2 <= 0.0
        assert m.dbp_r2 <= 0.0
        assert m.n == len(examples)

    def test_metrics_survive_weight_round_trip(self, tmp_path):
        enc = toy_encoder()
        examples = labeled_examples()
        scaler = target_scaler(examples)
        params, _ = train(enc, init_params(enc), examples, [],
                          TrainConfig(epochs=2, batch_size=4,
                                      learning_rate=1e-3, seed=0,
                                      target_scaler=scaler))
        before = evaluate(enc, params, examples, scaler)
        path = tmp_path / "weights.bin"
        save_params(path, enc, params)
        enc2, params2 = load_params(path)
        after = evaluate(enc2, params2, examples, scaler)
        assert before == after

    def test_empty_set_rejected(self):
        enc = toy_encoder()
        scaler = target_scaler(labeled_examples())
        with pytest.raises(EmptyDataset):
            evaluate(enc, init_params(enc), [], scaler)


class TestConfusion:
    def test_perfect_predictions(self):
        sbp = [130.0, 100.0, 120.0, 90.0]
        dbp = [80.0, 60.0, 65.0, 55.0]
        truth = [1, 0, 1, 0]
        counts = confusion_matrix(sbp, dbp, truth)
        assert counts == {"tp": 2, "fp": 0, "fn": 0, "tn": 2}

    def test_degenerate_normotensive_predictor(self):
        n = 10
        counts = confusion_matrix([100.0] * n, [60.0] * n,
                                  [1] * (n // 2) + [0] * (n // 2))
        assert counts == {"tp": 0, "fp": 0, "fn": 5, "tn": 5}

    def test_twenty_pairs_against_enumeration(self):
        rng = np.random.default_rng(17)
        sbp = rng.uniform(80, 180, 20)
        dbp = rng.uniform(40, 110, 20)
        truth = rng.integers(0, 2, 20)
        pred_classes = [oracles.hypertensive_oracle(s, d)
                        for s, d in zip(sbp, dbp)]
        want = oracles.confusion_oracle(pred_classes,
                                        [bool(t) for t in truth])
        assert confusion_matrix(sbp, dbp, truth) == want

    def test_out_of_range_predictions_clipped(self):
        counts = confusion_matrix([500.0, 10.0], [20.0, 20.0], [1, 0])
        assert counts == {"tp": 1, "fp": 0, "fn": 0, "tn": 1}

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            confusion_matrix([120.0], [80.0, 70.0], [1, 0])


class TestWriters:
    def test_history_round_trip(self, tmp_path):
        hist = TrainHistory(train_loss=(2.0, 1.0 / 3.0),
                            val_loss=(1.9, 0.123456789012345678))
        path = tmp_path / "loss_curve.csv"
        write_history_csv(path, hist)
        assert read_history_csv(path) == hist
        header = path.read_text().splitlines()[0]
        assert header == "epoch,train_loss,val_loss"

    def test_metrics_json_layout(self, tmp_path):
        m = Metrics(sbp_mae=1.5, sbp_mse=4.0, sbp_r2=0.9, dbp_mae=1.0,
                    dbp_mse=2.0, dbp_r2=0.8, n=20)
        path = tmp_path / "metrics.json"
        write_metrics_json(path, m)
        import json
        payload = json.loads(path.read_text())
        assert payload["n"] == 20
        assert payload["sbp"] == {"mae": 1.5, "mse": 4.0, "r2": 0.9}
        assert payload["dbp"] == {"mae": 1.0, "mse": 2.0, "r2": 0.8}

    def test_confusion_json(self, tmp_path):
        path = tmp_path / "confusion.json"
        write_confusion_json(path, {"tp": 1, "fp": 2, "fn": 3, "tn": 4})
        import json
        assert json.loads(path.read_text()) == {"tp": 1, "fp": 2, "fn": 3,
                                                "tn": 4}
