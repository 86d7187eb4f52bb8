import numpy as np
import pytest

from errors import InvalidArgumentError
from models import EnvConfig, MediaType
from network import (CONV_PRESETS, ConvSpec, QNetwork, conv_output_size, resolve_preset, softmax_cross_entropy)


def tiny_network(seed=0):
    """全局 8×8×2 → 4 → 2 → 1，局部 3×3×2，隐藏层 5，4 个动作"""
    rng = np.random.default_rng(seed)
    network = QNetwork((8, 8, 2), (3, 3, 2), 4, [ConvSpec(3, 2, 2), ConvSpec(4, 2, 2), ConvSpec(3, 2, 1)],
                       hidden_width=5, local_filters=4, rng=rng)
    # 非零偏置，避免激活前值恰好落在 ReLU 拐点
    for name, value in network.params.items():
        if name.endswith(".b"):
            value[...] = rng.uniform(0.05, 0.2, size=value.shape)
    return network


def numerical_gradient(network, global_x, local_x, grad_q, name, h=1e-5):
    param = network.params[name]
    grad = np.zeros_like(param)
    for index in np.ndindex(param.shape):
        original = param[index]
        param[index] = original + h
        plus = float(np.sum(network.predict(global_x, local_x) * grad_q))
        param[index] = original - h
        minus = float(np.sum(network.predict(global_x, local_x) * grad_q))
        param[index] = original
        grad[index] = (plus - minus) / (2 * h)
    return grad


class TestShapes:
    def test_conv_output_size(self):
        assert conv_output_size(84, 8, 4) == 20
        with pytest.raises(InvalidArgumentError):
            conv_output_size(28, 8, 4)

    def test_presets(self):
        assert resolve_preset(84) == CONV_PRESETS["dqn"]
        assert resolve_preset(28) == CONV_PRESETS["compact"]
        with pytest.raises(InvalidArgumentError):
            resolve_preset(28, "dqn")

    def test_full_scale_network(self):
        network = QNetwork.build(EnvConfig(side=84, media=MediaType.SKETCH), hidden_width=32)
        assert network.global_sizes == [84, 20, 9, 7]
        q = network.predict(np.zeros((2, 84, 84, 4)), np.zeros((2, 11, 11, 2)))
        assert q.shape == (2, 242)

    def test_desk_scale_color_network(self):
        network = QNetwork.build(EnvConfig(side=28, media=MediaType.COLOR_SKETCH), hidden_width=16)
        assert network.global_sizes == [28, 13, 6, 4]
        assert network.n_actions == 484

    def test_global_only(self, sketch_config):
        network = QNetwork.build(sketch_config, hidden_width=8, use_local_stream=False)
        assert not network.uses_local_stream
        assert "local.w" not in network.params
        assert network.predict(np.ones((1, 28, 28, 4))).shape == (1, 242)

    def test_missing_local_input(self, small_network):
        with pytest.raises(InvalidArgumentError):
            small_network.predict(np.ones((1, 28, 28, 4)))

    def test_wrong_input_shape(self, small_network):
        with pytest.raises(InvalidArgumentError):
            small_network.predict(np.ones((1, 27, 27, 4)), np.ones((1, 11, 11, 2)))

    def test_param_shape_mismatch(self, small_network):
        params = dict(small_network.params)
        params["output.b"] = np.zeros(3)
        with pytest.raises(InvalidArgumentError):
            QNetwork.from_metadata(small_network.metadata, params)


class TestForward:
    def test_batch_matches_single(self, rng):
        network = tiny_network()
        global_x = rng.uniform(size=(3, 8, 8, 2))
        local_x = rng.uniform(size=(3, 3, 3, 2))
        batch = network.predict(global_x, local_x)
        for i in range(3):
            np.testing.assert_allclose(batch[i], network.predict(global_x[i], local_x[i])[0], rtol=1e-12)

    def test_clone_is_independent(self, small_network):
        clone = small_network.clone()
        clone.params["output.b"] += 1.0
        assert not np.array_equal(clone.params["output.b"], small_network.params["output.b"])

    def test_metadata_round_trip(self, small_network, rng):
        rebuilt = QNetwork.from_metadata(small_network.metadata, small_network.params)
        global_x = rng.uniform(size=(2, 28, 28, 4))
        local_x = rng.uniform(size=(2, 11, 11, 2))
        np.testing.assert_array_equal(rebuilt.predict(global_x, local_x), small_network.predict(global_x, local_x))

    def test_same_seed_same_init(self, sketch_config):
        a = QNetwork.build(sketch_config, hidden_width=8, rng=np.random.default_rng(3))
        b = QNetwork.build(sketch_config, hidden_width=8, rng=np.random.default_rng(3))
        for name in a.params:
            np.testing.assert_array_equal(a.params[name], b.params[name])


class TestGradients:
    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        network = tiny_network(seed=1)
        global_x = rng.uniform(size=(2, 8, 8, 2))
        local_x = rng.uniform(size=(2, 3, 3, 2))
        grad_q = rng.normal(size=(2, 4))
        _, cache = network.forward(global_x, local_x)
        analytic = network.backward(cache, grad_q)
        assert set(analytic) == set(network.params)
        for name in network.params:
            numeric = numerical_gradient(network, global_x, local_x, grad_q, name)
            np.testing.assert_allclose(analytic[name], numeric, rtol=1e-4, atol=1e-6, err_msg=name)

    def test_global_only_gradients(self):
        rng = np.random.default_rng(8)
        network = QNetwork((8, 8, 2), None, 3, [ConvSpec(2, 2, 2), ConvSpec(3, 2, 2), ConvSpec(2, 2, 1)],
                           hidden_width=4, rng=rng)
        network.params["global1.b"][...] = 0.1
        global_x = rng.uniform(size=(3, 8, 8, 2))
        grad_q = rng.normal(size=(3, 3))
        _, cache = network.forward(global_x)
        analytic = network.backward(cache, grad_q)
        for name in network.params:
            numeric = numerical_gradient(network, global_x, None, grad_q, name)
            np.testing.assert_allclose(analytic[name], numeric, rtol=1e-4, atol=1e-6, err_msg=name)


class TestSoftmaxCrossEntropy:
    def test_uniform_logits(self):
        loss, grad = softmax_cross_entropy(np.zeros((2, 4)), [1, 3])
        assert loss == pytest.approx(np.log(4))
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-15)
        assert grad[0, 1] == pytest.approx((0.25 - 1.0) / 2)

    def test_confident_prediction(self):
        logits = np.zeros((1, 10))
        logits[0, 7] = 100.0
        loss, _ = softmax_cross_entropy(logits, [7])
        assert loss < 1e-20

    def test_label_out_of_range(self):
        with pytest.raises(InvalidArgumentError):
            softmax_cross_entropy(np.zeros((1, 4)), [4])

    def test_gradient_matches_finite_differences(self, rng):
        logits = rng.normal(size=(3, 5))
        labels = [0, 4, 2]
        _, grad = softmax_cross_entropy(logits, labels)
        h = 1e-6
        numeric = np.zeros_like(logits)
        for index in np.ndindex(logits.shape):
            plus, minus = logits.copy(), logits.copy()
            plus[index] += h
            minus[index] -= h
            numeric[index] = (softmax_cross_entropy(plus, labels)[0] - softmax_cross_entropy(minus, labels)[0]) / (2 * h)
        np.testing.assert_allclose(grad, numeric, rtol=1e-5, atol=1e-8)
