from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional

import numpy as np

from errors import InvalidArgumentError

# 背景（白色）像素值
BACKGROUND = 255
# 单步最大偏移（像素）
OFFSET_RANGE = 5


class MediaType(Enum):
    """绘画介质"""
    SKETCH = "sketch"
    COLOR_SKETCH = "color_sketch"
    WATERCOLOR = "watercolor"

    @property
    def channels(self) -> int:
        return 1 if self is MediaType.SKETCH else 3

    @property
    def is_color(self) -> bool:
        return self is not MediaType.SKETCH

    @property
    def pen_modes(self) -> tuple[PenMode, ...]:
        """该介质下可用的笔状态，顺序即颜色图中的取值"""
        if self is MediaType.SKETCH:
            return (PenMode.UP, PenMode.DOWN)
        return (PenMode.UP, PenMode.RED, PenMode.GREEN, PenMode.BLUE)


class PenMode(Enum):
    """笔状态：抬笔或以某种颜色落笔"""
    UP = "up"
    DOWN = "down"
    RED = "red"
    GREEN = "green"
    BLUE = "blue"

    @property
    def is_drawing(self) -> bool:
        return self is not PenMode.UP

    def ink(self, channels: int) -> np.ndarray:
        """落笔颜色，按通道数返回"""
        if self is PenMode.UP:
            raise InvalidArgumentError("抬笔状态没有颜色")
        if channels == 1:
            if self is not PenMode.DOWN:
                raise InvalidArgumentError(f"灰度画布不支持颜色 {self.value}")
            return np.array([0.0])
        if self is PenMode.DOWN:
            return np.array([0.0, 0.0, 0.0])
        return np.array(PRIMARY_COLORS[self], dtype=float)


PRIMARY_COLORS = {
    PenMode.RED: (255, 0, 0),
    PenMode.GREEN: (0, 255, 0),
    PenMode.BLUE: (0, 0, 255),
}


class DemoSource(Enum):
    """示范数据来源"""
    STROKES = "strokes"  # 随机放置笔画库中的笔画
    QUICKDRAW = "quickdraw"  # 整幅 QuickDraw 涂鸦


class Exploration(Enum):
    """动作探索策略"""
    RARE = "rare"
    NAIVE = "naive"
    GREEDY = "greedy"


@dataclass
class BrushParams:
    """笔刷参数"""
    width: int = 1  # 笔宽(px)
    opacity: float = 1.0
    softness: float = 0.0  # 水彩高斯半径(px)

    def __post_init__(self):
        if self.width < 1:
            raise InvalidArgumentError(f"笔宽必须 ≥ 1: {self.width}")
        if not 0.0 < self.opacity <= 1.0:
            raise InvalidArgumentError(f"不透明度必须在 (0,1] 内: {self.opacity}")
        if self.softness < 0.0:
            raise InvalidArgumentError(f"柔和半径不能为负: {self.softness}")

    @classmethod
    def for_media(cls, media: MediaType) -> BrushParams:
        if media is MediaType.WATERCOLOR:
            return cls(width=3, opacity=0.5, softness=1.5)
        return cls()


@dataclass
class PenState:
    """笔的位置与最近一次执行的笔状态"""
    position: tuple[int, int]
    mode: PenMode = PenMode.UP


@dataclass(frozen=True)
class Action:
    """解码后的动作: 偏移 (dx, dy) 与笔状态"""
    dx: int
    dy: int
    mode: PenMode

    @property
    def chebyshev(self) -> int:
        return max(abs(self.dx), abs(self.dy))


@dataclass(frozen=True)
class ActionSpec:
    """离散动作空间: 11×11 位置网格 × 笔状态"""
    media: MediaType
    offset_range: int = OFFSET_RANGE

    @property
    def grid_side(self) -> int:
        return 2 * self.offset_range + 1

    @property
    def positions(self) -> int:
        return self.grid_side ** 2

    @property
    def pen_modes(self) -> tuple[PenMode, ...]:
        return self.media.pen_modes

    @property
    def total(self) -> int:
        return self.positions * len(self.pen_modes)

    def encode(self, action: Action) -> int:
        r = self.offset_range
        if abs(action.dx) > r or abs(action.dy) > r:
            raise InvalidArgumentError(f"偏移超出范围 ±{r}: ({action.dx}, {action.dy})")
        if action.mode not in self.pen_modes:
            raise InvalidArgumentError(f"介质 {self.media.value} 不支持笔状态 {action.mode.value}")
        mode_index = self.pen_modes.index(action.mode)
        return mode_index * self.positions + (action.dy + r) * self.grid_side + (action.dx + r)

    def decode(self, index: int) -> Action:
        if not 0 <= index < self.total:
            raise InvalidArgumentError(f"动作编号超出范围 [0, {self.total}): {index}")
        mode_index, cell = divmod(int(index), self.positions)
        row, col = divmod(cell, self.grid_side)
        r = self.offset_range
        return Action(dx=col - r, dy=row - r, mode=self.pen_modes[mode_index])

    def index_of(self, dx: int, dy: int, mode: PenMode) -> int:
        return self.encode(Action(dx, dy, mode))


@dataclass
class RewardParams:
    """奖励参数"""
    step_penalty: float = -1.0
    color_penalty: float = -5.0
    beta: int = 0  # 灰度为0，彩色为1
    min_draw_step: int = 5  # 切比雪夫距离

    def __post_init__(self):
        if self.step_penalty > 0 or self.color_penalty > 0:
            raise InvalidArgumentError("惩罚项必须 ≤ 0")
        if self.beta not in (0, 1):
            raise InvalidArgumentError(f"beta 只能是 0 或 1: {self.beta}")

    @classmethod
    def for_media(cls, media: MediaType, step_penalty: float = -1.0,
                  color_penalty: float = -5.0, min_draw_step: int = 5) -> RewardParams:
        return cls(step_penalty=step_penalty, color_penalty=color_penalty,
                   beta=1 if media.is_color else 0, min_draw_step=min_draw_step)


@dataclass
class RewardBreakdown:
    """单步奖励的组成"""
    pixel: float = 0.0
    step_penalty: float = 0.0
    color_penalty: float = 0.0

    @property
    def penalty(self) -> float:
        return self.step_penalty + self.color_penalty

    @property
    def total(self) -> float:
        return self.pixel + self.step_penalty + self.color_penalty


@dataclass
class EnvConfig:
    """绘画环境配置"""
    side: int = 84
    media: MediaType = MediaType.SKETCH
    max_steps: int = 100
    patch_size: int = 11
    history_frames: int = 1
    brush: Optional[BrushParams] = None
    reward: Optional[RewardParams] = None

    def __post_init__(self):
        if self.brush is None:
            self.brush = BrushParams.for_media(self.media)
        if self.reward is None:
            self.reward = RewardParams.for_media(self.media)
        if self.max_steps < 1:
            raise InvalidArgumentError(f"max_steps 必须 ≥ 1: {self.max_steps}")
        if self.history_frames < 1:
            raise InvalidArgumentError(f"history_frames 必须 ≥ 1: {self.history_frames}")

    @property
    def action_spec(self) -> ActionSpec:
        return ActionSpec(self.media)

    @property
    def global_shape(self) -> tuple[int, int, int]:
        c = self.media.channels
        return (self.side, self.side, c * (self.history_frames + 1) + 2)

    @property
    def local_shape(self) -> tuple[int, int, int]:
        return (self.patch_size, self.patch_size, 2 * self.media.channels)

    @property
    def center(self) -> tuple[int, int]:
        return (self.side // 2, self.side // 2)


@dataclass
class VectorDrawing:
    """矢量涂鸦：若干折线笔画"""
    strokes: list[list[tuple[int, int]]]
    class_label: str = ""
    key_id: str = ""

    def __post_init__(self):
        for stroke in self.strokes:
            if len(stroke) < 2:
                raise InvalidArgumentError("每条笔画至少需要2个点")
            for x, y in stroke:
                if not (math.isfinite(x) and math.isfinite(y)):
                    raise InvalidArgumentError("笔画坐标必须是有限值")

    @property
    def points(self) -> list[tuple[int, int]]:
        return [p for stroke in self.strokes for p in stroke]


@dataclass
class DemoSample:
    """示范样本：当前画布、笔状态与真实动作"""
    reference: np.ndarray  # L×L×c uint8
    current: np.ndarray  # L×L×c uint8
    pen: PenState
    action: int
    history: tuple = ()  # 之前的画布，最近的在前


@dataclass
class Transition:
    """经验回放中的一条转移"""
    obs: Any
    action: int
    reward: float
    next_obs: Any
    terminal: bool


@dataclass
class PretrainConfig:
    """监督预训练配置"""
    batch_size: int = 128
    learning_rate: float = 1e-3
    epochs: int = 20
    val_fraction: float = 0.1
    lr_decay_every: int = 1_000
    lr_decay_factor: float = 0.5
    grad_clip: Optional[float] = None
    augment: bool = True  # 每个批次随机施加正方形对称变换

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch_size 必须 ≥ 1: {self.batch_size}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise InvalidArgumentError(f"val_fraction 必须在 [0,1) 内: {self.val_fraction}")


@dataclass
class RLConfig:
    """Double DQN 训练配置"""
    total_frames: int = 600_000
    replay_capacity: int = 20_000
    batch_size: int = 32
    gamma: float = 0.99
    target_sync_period: int = 1_000
    warmup_frames: int = 2_000
    exploration: Exploration = Exploration.RARE
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_frames: int = 50_000
    learning_rate: float = 1e-3
    lr_decay_every: int = 50_000
    lr_decay_factor: float = 0.5
    grad_clip: Optional[float] = None
    per_alpha: float = 0.6
    per_epsilon: float = 0.01
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    eval_every: int = 10_000
    eval_set_size: int = 16

    def __post_init__(self):
        if self.warmup_frames > self.replay_capacity:
            raise InvalidArgumentError(
                f"warmup_frames ({self.warmup_frames}) 不能大于 replay_capacity ({self.replay_capacity})")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidArgumentError(f"gamma 必须在 (0,1) 内: {self.gamma}")
        if self.total_frames < 0:
            raise InvalidArgumentError(f"total_frames 不能为负: {self.total_frames}")

    def epsilon_at(self, frame: int) -> float:
        """线性退火的 ε"""
        if self.epsilon_decay_frames <= 0:
            return self.epsilon_end
        fraction = min(frame / self.epsilon_decay_frames, 1.0)
        return self.epsilon_start + fraction * (self.epsilon_end - self.epsilon_start)

    def per_beta_at(self, frame: int) -> float:
        fraction = min(frame / self.total_frames, 1.0) if self.total_frames else 1.0
        return self.per_beta_start + fraction * (self.per_beta_end - self.per_beta_start)


@dataclass
class RolloutResult:
    """一次展开的结果"""
    frames: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    pixel_rewards: list[float]
    penalties: list[float]
    max_reward: float

    @property
    def accumulated_reward(self) -> float:
        return float(sum(self.rewards))

    @property
    def accumulated_pixel_reward(self) -> float:
        return float(sum(self.pixel_rewards))

    @property
    def accumulated_penalty(self) -> float:
        return float(sum(self.penalties))


@dataclass
class EvaluationResult:
    """评估结果（各参考图像的平均值）"""
    mean_accumulated_reward: float
    mean_max_reward: float
    mean_pixel_reward: float
    mean_penalty: float
    per_reference: list[RolloutResult] = field(default_factory=list, repr=False)

    @property
    def ratio(self) -> float:
        if self.mean_max_reward == 0:
            return 1.0 if self.mean_pixel_reward == 0 else float("-inf")
        return self.mean_accumulated_reward / self.mean_max_reward
