"""双流卷积 Q 网络

全局流: 三层卷积处理整张画布（画布、参考图像、距离图、颜色图）。
局部流: 一层与裁剪块同尺寸的卷积处理笔位置附近的小块。
两路特征拼接后经过一个 ReLU 全连接隐藏层，再由线性输出层给出每个动作的 Q 值。

网络结构固定，反向传播为手写推导；所有数组为 float64，布局为 (N, H, W, C)。
"""
import logging
from dataclasses import asdict, dataclass
from typing import Any, Optional, Sequence

import numpy as np

from errors import InvalidArgumentError
from models import EnvConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConvSpec:
    """卷积层规格"""
    filters: int
    kernel: int
    stride: int


CONV_PRESETS = {
    # 84×84: 20 → 9 → 7
    "dqn": (ConvSpec(32, 8, 4), ConvSpec(64, 4, 2), ConvSpec(64, 3, 1)),
    # 28×28: 13 → 6 → 4
    "compact": (ConvSpec(32, 4, 2), ConvSpec(64, 3, 2), ConvSpec(64, 3, 1)),
}

DEFAULT_HIDDEN_WIDTH = 512
DEFAULT_LOCAL_FILTERS = 128


def conv_output_size(size: int, kernel: int, stride: int) -> int:
    """valid 卷积输出尺寸，(size - kernel) 必须能被 stride 整除"""
    if size < kernel:
        raise InvalidArgumentError(f"输入尺寸 {size} 小于卷积核 {kernel}")
    if (size - kernel) % stride != 0:
        raise InvalidArgumentError(f"(输入尺寸 {size} - 卷积核 {kernel}) 不能被步长 {stride} 整除")
    return (size - kernel) // stride + 1


def resolve_preset(side: int, preset: str = "auto") -> tuple[ConvSpec, ...]:
    """按画布边长选择卷积预设"""
    if preset != "auto":
        if preset not in CONV_PRESETS:
            raise InvalidArgumentError(f"未知的卷积预设: {preset}")
        return CONV_PRESETS[preset]
    for name in ("dqn", "compact"):
        try:
            _chain(side, CONV_PRESETS[name])
            return CONV_PRESETS[name]
        except InvalidArgumentError:
            continue
    raise InvalidArgumentError(f"没有适用于边长 {side} 的卷积预设")


def _chain(side: int, specs: Sequence[ConvSpec]) -> list[int]:
    sizes = [side]
    for spec in specs:
        sizes.append(conv_output_size(sizes[-1], spec.kernel, spec.stride))
    return sizes


def _conv_slices(k_i: int, k_j: int, stride: int, out_h: int, out_w: int):
    return (slice(None), slice(k_i, k_i + stride * (out_h - 1) + 1, stride),
            slice(k_j, k_j + stride * (out_w - 1) + 1, stride), slice(None))


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int,
                   activation: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """互相关 + 偏置 (+ ReLU)，返回 (输出, 激活前)

    x: (N, H, W, C)，weights: (k, k, C, F)
    """
    if x.ndim == 3:
        x = x[None]
    n, h, w, c = x.shape
    k = weights.shape[0]
    if weights.shape[2] != c:
        raise InvalidArgumentError(f"输入通道 {c} 与卷积核通道 {weights.shape[2]} 不一致")
    out_h = conv_output_size(h, k, stride)
    out_w = conv_output_size(w, k, stride)
    pre = np.zeros((n, out_h, out_w, weights.shape[3]))
    for i in range(k):
        for j in range(k):
            pre += x[_conv_slices(i, j, stride, out_h, out_w)] @ weights[i, j]
    pre += bias
    out = np.maximum(pre, 0.0) if activation else pre
    return out, pre


def conv2d_backward(x: np.ndarray, weights: np.ndarray, stride: int, grad_pre: np.ndarray,
                    input_grad: bool = True) -> tuple[Optional[np.ndarray], np.ndarray, np.ndarray]:
    """卷积层反向传播，返回 (dx, dW, db)"""
    k = weights.shape[0]
    _, out_h, out_w, _ = grad_pre.shape
    grad_w = np.zeros_like(weights)
    grad_x = np.zeros_like(x) if input_grad else None
    for i in range(k):
        for j in range(k):
            window = _conv_slices(i, j, stride, out_h, out_w)
            grad_w[i, j] = np.tensordot(x[window], grad_pre, axes=([0, 1, 2], [0, 1, 2]))
            if input_grad:
                grad_x[window] += grad_pre @ weights[i, j].T
    grad_b = grad_pre.sum(axis=(0, 1, 2))
    return grad_x, grad_w, grad_b


def relu_backward(grad_out: np.ndarray, pre: np.ndarray) -> np.ndarray:
    return grad_out * (pre > 0)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """softmax 交叉熵（批均值），返回 (loss, d loss / d logits)"""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.atleast_1d(np.asarray(labels))
    n, classes = logits.shape
    if labels.shape[0] != n:
        raise InvalidArgumentError(f"标签数量 {labels.shape[0]} 与样本数量 {n} 不一致")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise InvalidArgumentError(f"标签超出范围 [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    sums = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(sums)
    loss = -float(np.mean(log_probs[np.arange(n), labels]))
    grad = exp / sums
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def clone_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """深拷贝参数"""
    return {name: value.copy() for name, value in params.items()}


def _he_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class QNetwork:
    """双流 Q 网络"""

    def __init__(self, global_shape: tuple[int, int, int], local_shape: Optional[tuple[int, int, int]],
                 n_actions: int, conv_specs: Sequence[ConvSpec],
                 hidden_width: int = DEFAULT_HIDDEN_WIDTH, local_filters: int = DEFAULT_LOCAL_FILTERS,
                 params: Optional[dict[str, np.ndarray]] = None,
                 rng: Optional[np.random.Generator] = None):
        self.global_shape = tuple(int(v) for v in global_shape)
        self.local_shape = tuple(int(v) for v in local_shape) if local_shape else None
        self.n_actions = int(n_actions)
        self.conv_specs = tuple(conv_specs)
        self.hidden_width = int(hidden_width)
        self.local_filters = int(local_filters)

        if self.global_shape[0] != self.global_shape[1]:
            raise InvalidArgumentError(f"全局输入必须是正方形: {self.global_shape}")
        # 构造时检查形状链，不匹配直接报错
        self.global_sizes = _chain(self.global_shape[0], self.conv_specs)
        if self.local_shape and self.local_shape[0] != self.local_shape[1]:
            raise InvalidArgumentError(f"局部输入必须是正方形: {self.local_shape}")

        final = self.global_sizes[-1]
        self.global_features = final * final * self.conv_specs[-1].filters
        self.local_features = self.local_filters if self.local_shape else 0
        self.feature_width = self.global_features + self.local_features

        expected = self._param_shapes()
        if params is None:
            params = self._init_params(rng or np.random.default_rng(0), expected)
        for name, shape in expected.items():
            if name not in params or params[name].shape != shape:
                got = params[name].shape if name in params else None
                raise InvalidArgumentError(f"参数 {name} 形状不匹配: 期望 {shape}，实际 {got}")
        self.params = {name: np.asarray(params[name], dtype=np.float64) for name in expected}

    @classmethod
    def build(cls, env_config: EnvConfig, preset: str = "auto", hidden_width: int = DEFAULT_HIDDEN_WIDTH,
              use_local_stream: bool = True, rng: Optional[np.random.Generator] = None) -> "QNetwork":
        """按环境配置构造网络"""
        specs = resolve_preset(env_config.side, preset)
        local_shape = env_config.local_shape if use_local_stream else None
        network = cls(env_config.global_shape, local_shape, env_config.action_spec.total, specs,
                      hidden_width=hidden_width, rng=rng)
        logger.info(f"已构造Q网络: 全局 {network.global_sizes}, 特征 {network.feature_width}, 动作 {network.n_actions}")
        return network

    def _param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        channels = self.global_shape[2]
        for index, spec in enumerate(self.conv_specs, start=1):
            shapes[f"global{index}.w"] = (spec.kernel, spec.kernel, channels, spec.filters)
            shapes[f"global{index}.b"] = (spec.filters,)
            channels = spec.filters
        if self.local_shape:
            k = self.local_shape[0]
            shapes["local.w"] = (k, k, self.local_shape[2], self.local_filters)
            shapes["local.b"] = (self.local_filters,)
        shapes["hidden.w"] = (self.feature_width, self.hidden_width)
        shapes["hidden.b"] = (self.hidden_width,)
        shapes["output.w"] = (self.hidden_width, self.n_actions)
        shapes["output.b"] = (self.n_actions,)
        return shapes

    @staticmethod
    def _init_params(rng: np.random.Generator, shapes: dict[str, tuple[int, ...]]) -> dict[str, np.ndarray]:
        params = {}
        for name, shape in shapes.items():
            if name.endswith(".b"):
                params[name] = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[:-1]))
                params[name] = _he_uniform(rng, shape, fan_in)
        return params

    @property
    def metadata(self) -> dict[str, Any]:
        return {
            "global_shape": list(self.global_shape),
            "local_shape": list(self.local_shape) if self.local_shape else None,
            "n_actions": self.n_actions,
            "conv_specs": [asdict(spec) for spec in self.conv_specs],
            "hidden_width": self.hidden_width,
            "local_filters": self.local_filters,
        }

    @classmethod
    def from_metadata(cls, metadata: dict[str, Any], params: dict[str, np.ndarray]) -> "QNetwork":
        return cls(
            global_shape=tuple(metadata["global_shape"]),
            local_shape=tuple(metadata["local_shape"]) if metadata.get("local_shape") else None,
            n_actions=metadata["n_actions"],
            conv_specs=[ConvSpec(**spec) for spec in metadata["conv_specs"]],
            hidden_width=metadata["hidden_width"],
            local_filters=metadata.get("local_filters", DEFAULT_LOCAL_FILTERS),
            params=params,
        )

    @property
    def uses_local_stream(self) -> bool:
        return self.local_shape is not None

    def clone(self) -> "QNetwork":
        return QNetwork(self.global_shape, self.local_shape, self.n_actions, self.conv_specs,
                        hidden_width=self.hidden_width, local_filters=self.local_filters,
                        params=clone_params(self.params))

    def _check_input(self, x: np.ndarray, expected: tuple[int, ...], name: str) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.shape[1:] != expected:
            raise InvalidArgumentError(f"{name}输入形状不匹配: 期望 {expected}，实际 {x.shape[1:]}")
        return x

    def forward(self, global_x: np.ndarray, local_x: Optional[np.ndarray] = None) -> tuple[np.ndarray, dict]:
        """前向传播，返回 (Q 值 (N, A), 反向传播所需缓存)；不修改网络状态"""
        p = self.params
        x = self._check_input(global_x, self.global_shape, "全局")
        cache: dict[str, Any] = {"global_inputs": [], "global_pre": []}
        h = x
        for index, spec in enumerate(self.conv_specs, start=1):
            cache["global_inputs"].append(h)
            h, pre = conv2d_forward(h, p[f"global{index}.w"], p[f"global{index}.b"], spec.stride)
            cache["global_pre"].append(pre)
        n = h.shape[0]
        cache["global_out_shape"] = h.shape
        features = [h.reshape(n, -1)]

        if self.local_shape:
            if local_x is None:
                raise InvalidArgumentError("网络包含局部流，但没有提供局部输入")
            lx = self._check_input(local_x, self.local_shape, "局部")
            if lx.shape[0] != n:
                raise InvalidArgumentError(f"全局与局部批大小不一致: {n} vs {lx.shape[0]}")
            local_out, local_pre = conv2d_forward(lx, p["local.w"], p["local.b"], 1)
            cache["local_input"] = lx
            cache["local_pre"] = local_pre
            features.append(local_out.reshape(n, -1))

        feat = np.concatenate(features, axis=1)
        hidden_pre = feat @ p["hidden.w"] + p["hidden.b"]
        hidden = np.maximum(hidden_pre, 0.0)
        q = hidden @ p["output.w"] + p["output.b"]
        cache.update(features=feat, hidden_pre=hidden_pre, hidden=hidden)
        return q, cache

    def predict(self, global_x: np.ndarray, local_x: Optional[np.ndarray] = None) -> np.ndarray:
        q, _ = self.forward(global_x, local_x)
        return q

    def backward(self, cache: dict, grad_q: np.ndarray) -> dict[str, np.ndarray]:
        """反向传播，返回各参数梯度"""
        p = self.params
        grad_q = np.atleast_2d(grad_q)
        grads = {}
        grads["output.w"] = cache["hidden"].T @ grad_q
        grads["output.b"] = grad_q.sum(axis=0)
        grad_hidden = relu_backward(grad_q @ p["output.w"].T, cache["hidden_pre"])
        grads["hidden.w"] = cache["features"].T @ grad_hidden
        grads["hidden.b"] = grad_hidden.sum(axis=0)
        grad_feat = grad_hidden @ p["hidden.w"].T

        if self.local_shape:
            local_pre = cache["local_pre"]
            grad_local = grad_feat[:, self.global_features:].reshape(local_pre.shape)
            _, grads["local.w"], grads["local.b"] = conv2d_backward(
                cache["local_input"], p["local.w"], 1, relu_backward(grad_local, local_pre), input_grad=False)

        grad_h = grad_feat[:, :self.global_features].reshape(cache["global_out_shape"])
        for index in range(len(self.conv_specs), 0, -1):
            spec = self.conv_specs[index - 1]
            grad_pre = relu_backward(grad_h, cache["global_pre"][index - 1])
            grad_h, grads[f"global{index}.w"], grads[f"global{index}.b"] = conv2d_backward(
                cache["global_inputs"][index - 1], p[f"global{index}.w"], spec.stride, grad_pre,
                input_grad=index > 1)
        return grads

    def observation_batch(self, observations: Sequence[Any]) -> tuple[np.ndarray, Optional[np.ndarray]]:
        """把观测列表组装成批输入"""
        global_x = np.stack([obs.global_stream for obs in observations])
        local_x = np.stack([obs.local_stream for obs in observations]) if self.local_shape else None
        return global_x, local_x

    def q_values(self, observations: Sequence[Any]) -> np.ndarray:
        return self.predict(*self.observation_batch(observations))
