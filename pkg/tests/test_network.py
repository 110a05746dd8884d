"""Network container, optimizer, gradient checker and checkpoint format."""

import struct
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pedk.errors import TrainingDiverged
from pedk.nn import SGD, Conv, Dense, Dropout, Flatten, MaxPool, Network, ReLU, Softmax, checkpoint, sgd_step
from pedk.nn import functional as F
from pedk.nn.gradcheck import GradCheckReport, gradient_check
from pedk.nn.layers import layer_from_config
from pedk.zoo import ArchSpec, build_network


def micro_net(seed=0, dtype=np.float64):
    layers = [Conv(1, 2, 3, 1, 0), ReLU(), MaxPool(), Flatten(), Dense(2 * 3 * 3, 2), Softmax()]
    net = Network(layers, meta={"input_side": 8}, dtype=dtype)
    return net.init_weights(np.random.default_rng(seed))


class TestNetworkStructure:
    def test_must_end_with_softmax(self):
        with pytest.raises(ValueError):
            Network([Dense(2, 2)])

    def test_parameters_in_layer_order_weight_first(self):
        net = micro_net()
        names = [(i, n) for i, n, _ in net.parameters()]
        assert names == [(0, "weight"), (0, "bias"), (4, "weight"), (4, "bias")]
        assert net.param_count == 2 * 9 + 2 + 18 * 2 + 2

    def test_layer_config_round_trip(self):
        for layer in (Conv(3, 8, 3, 2, 1), MaxPool(), ReLU(), Flatten(), Dense(5, 4), Dropout(0.3), Softmax()):
            clone = layer_from_config(layer.config())
            assert clone.config() == layer.config()

    def test_set_weights_checks_shapes(self):
        net = micro_net()
        w = net.get_weights()
        w[0] = w[0][:1]
        with pytest.raises(ValueError):
            net.set_weights(w)

    def test_predict_proba_rows_sum_to_one(self, rng):
        net = micro_net()
        p = net.predict_proba(rng.uniform(size=(7, 1, 8, 8)))
        assert p.shape == (7, 2)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_batch_size_does_not_change_predictions(self, rng):
        net = micro_net()
        x = rng.uniform(size=(9, 1, 8, 8))
        np.testing.assert_array_equal(net.predict_proba(x, batch_size=2), net.predict_proba(x, batch_size=100))

    def test_dropout_active_only_in_training(self, rng):
        layers = [Flatten(), Dense(4, 4), ReLU(), Dropout(0.5), Dense(4, 2), Softmax()]
        net = Network(layers).init_weights(rng)
        x = rng.uniform(size=(3, 1, 2, 2))
        eval_a, _ = net.forward_train(x, train=False)
        eval_b, _ = net.forward_train(x, train=False)
        np.testing.assert_array_equal(eval_a, eval_b)
        train, _ = net.forward_train(np.repeat(x, 20, axis=0), train=True, rng=np.random.default_rng(1))
        assert not np.allclose(train, np.repeat(eval_a, 20, axis=0))

    def test_concurrent_inference_matches_serial(self, rng):
        net = micro_net(dtype=np.float32)
        xs = [rng.uniform(size=(5, 1, 8, 8)).astype(np.float32) for _ in range(8)]
        serial = [net.predict_proba(x) for x in xs]
        with ThreadPoolExecutor(4) as pool:
            threaded = list(pool.map(net.predict_proba, xs))
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a, b)


class TestGradientCheck:
    def test_micro_net_passes(self, rng):
        net = micro_net()
        report = gradient_check(net, rng.normal(size=(3, 1, 8, 8)), np.array([0, 1, 1]))
        assert report.passed, str(report)
        assert report.max_rel_error < 1e-4

    def test_all_zero_weights(self, rng):
        net = micro_net()
        net.set_weights([np.zeros_like(w) for w in net.get_weights()])
        report = gradient_check(net, rng.normal(size=(2, 1, 8, 8)), np.array([0, 1]))
        assert all(np.isfinite(e) for *_, e in report.per_parameter)
        assert report.passed

    def test_sign_flip_in_backward_is_caught(self, rng, monkeypatch):
        net = micro_net()
        real = F.dense_backward

        def flipped(dout, cache):
            dx, dw, db = real(dout, cache)
            return dx, -dw, db

        monkeypatch.setattr(F, "dense_backward", flipped)
        report = gradient_check(net, rng.normal(size=(2, 1, 8, 8)), np.array([0, 1]))
        assert not report.passed
        assert report.max_rel_error > 0.5

    def test_requires_float64(self, rng):
        with pytest.raises(ValueError):
            gradient_check(micro_net(dtype=np.float32), rng.normal(size=(1, 1, 8, 8)), np.array([1]))

    def test_zoo_network_with_padding_and_dropout(self, rng):
        net = build_network(ArchSpec(3, 3), 16, seed=2, dtype=np.float64)
        report = gradient_check(net, rng.uniform(size=(2, 3, 16, 16)), np.array([1, 0]), max_entries=20)
        assert report.passed, str(report)

    def test_report_text(self):
        rep = GradCheckReport(1e-4, [(0, "weight", 2e-5), (0, "bias", 3e-6)])
        assert rep.passed and "PASS" in str(rep)
        assert not GradCheckReport(1e-4, [(0, "weight", float("nan"))]).passed


class TestSGD:
    def test_zero_learning_rate(self, rng):
        net = micro_net()
        before = net.get_weights()
        sgd_step(net, [rng.normal(size=w.shape) for w in before], learning_rate=0.0, momentum=0.9)
        for a, b in zip(before, net.get_weights()):
            np.testing.assert_array_equal(a, b)

    def test_plain_step_hand_value(self):
        net = Network([Dense(1, 1), Softmax()])
        net.set_weights([np.array([[1.0]]), np.array([1.0])])
        sgd_step(net, [np.array([[0.5]]), np.array([0.5])], learning_rate=1.0, momentum=0.0)
        assert net.get_weights()[0][0, 0] == 0.5

    def test_momentum_accumulates(self):
        net = Network([Dense(1, 1), Softmax()])
        net.set_weights([np.array([[0.0]]), np.array([0.0])])
        g = [np.array([[1.0]]), np.array([0.0])]
        opt = SGD(net, learning_rate=0.1, momentum=0.5)
        opt.step(g)
        opt.step(g)
        # v1 = -0.1, v2 = 0.5 * -0.1 - 0.1 = -0.15, w = -0.25
        assert net.get_weights()[0][0, 0] == pytest.approx(-0.25)

    def test_non_finite_gradient_aborts(self):
        net = micro_net()
        grads = [np.zeros_like(w) for w in net.get_weights()]
        grads[1][0] = np.nan
        with pytest.raises(TrainingDiverged):
            SGD(net).step(grads)

    def test_separable_toy_problem(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(64, 2))
        y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(np.int64)
        net = Network([Dense(2, 8), ReLU(), Dense(8, 2), Softmax()]).init_weights(rng)
        opt = SGD(net, learning_rate=0.1, momentum=0.9)
        for _ in range(200):
            _, grads = net.loss_and_grads(x, y)
            opt.step(grads)
        assert (net.predict(x) == y).all()

    def test_training_is_bit_reproducible(self):
        def train():
            net = micro_net(seed=4, dtype=np.float32)
            rng = np.random.default_rng(9)
            x = rng.uniform(size=(16, 1, 8, 8)).astype(np.float32)
            y = rng.integers(0, 2, 16)
            opt = SGD(net)
            for _ in range(10):
                opt.step(net.loss_and_grads(x, y)[1])
            return net.get_weights()

        for a, b in zip(train(), train()):
            assert a.tobytes() == b.tobytes()


class TestCheckpoint:
    def test_header_layout(self):
        blob = checkpoint.to_bytes(micro_net(dtype=np.float32))
        assert blob[:4] == b"PEDK"
        version, n = struct.unpack_from("<HI", blob, 4)
        assert version == 1
        assert len(blob) == 10 + n + 4 * micro_net().param_count

    def test_round_trip_bit_exact(self, tmp_path):
        net = build_network(ArchSpec(3, 3), 16, seed=5)
        a = checkpoint.save(net, tmp_path / "a.pedk")
        b = checkpoint.save(checkpoint.load(a), tmp_path / "b.pedk")
        assert a.read_bytes() == b.read_bytes()

    def test_loaded_network_predicts_identically(self, rng, tmp_path):
        net = build_network(ArchSpec(3, 4), 16, seed=6)
        loaded = checkpoint.load(checkpoint.save(net, tmp_path / "n.pedk"))
        x = rng.uniform(size=(20, 3, 16, 16)).astype(np.float32)
        np.testing.assert_array_equal(net.predict_proba(x), loaded.predict_proba(x))
        assert loaded.meta == net.meta

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.pedk"):
            checkpoint.load(tmp_path / "nope.pedk")

    @pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:-3], lambda b: b + b"\0"])
    def test_corrupt_blobs_rejected(self, mutate):
        blob = checkpoint.to_bytes(micro_net(dtype=np.float32))
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.from_bytes(mutate(blob))

    def test_unknown_version_rejected(self):
        blob = bytearray(checkpoint.to_bytes(micro_net(dtype=np.float32)))
        blob[4:6] = struct.pack("<H", 9)
        with pytest.raises(checkpoint.CheckpointError, match="version"):
            checkpoint.from_bytes(bytes(blob))
