import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from canvas import Canvas, crop_patch, new_canvas, render_segment, segment_footprint
from errors import InvalidArgumentError, InvalidStateError
from models import Action, EnvConfig, MediaType, PenMode, PenState, RewardBreakdown
from reward_calculator import RewardCalculator, similarity

logger = logging.getLogger(__name__)

STUCK_WINDOW = 4


def distance_map(pen_position: tuple[int, int], side: int) -> np.ndarray:
    """到笔位置的归一化 L2 距离图，D[y, x] = sqrt((x-xo)² + (y-yo)²) / L"""
    xo, yo = pen_position
    if not (0 <= xo < side and 0 <= yo < side):
        raise InvalidArgumentError(f"笔位置超出画布: {pen_position}")
    ys, xs = np.mgrid[0:side, 0:side]
    return np.sqrt((xs - xo) ** 2 + (ys - yo) ** 2) / side


def color_map(mode: PenMode, side: int, media: MediaType = MediaType.SKETCH) -> np.ndarray:
    """常数颜色图: 抬笔为0，落笔为笔状态在该介质中的编号"""
    if mode not in media.pen_modes:
        raise InvalidArgumentError(f"介质 {media.value} 不支持笔状态 {mode.value}")
    return np.full((side, side), float(media.pen_modes.index(mode)))


def is_stuck(positions) -> bool:
    """最近4个位置完全相同，或呈 A,B,A,B 往返"""
    recent = list(positions)[-STUCK_WINDOW:]
    if len(recent) < STUCK_WINDOW:
        return False
    a, b, c, d = recent
    if a == b == c == d:
        return True
    return a == c and b == d and a != b


def max_reward(reference: Canvas) -> float:
    """最大可获得的像素奖励 s_0"""
    return similarity(new_canvas(reference.side, reference.media), reference)


@dataclass
class Observation:
    """观测：紧凑存储，按需组装全局流与局部流"""
    canvas: np.ndarray
    reference: np.ndarray
    pen: tuple[int, int]
    color_value: int
    patch_size: int = 11
    history: tuple = ()

    @property
    def side(self) -> int:
        return self.canvas.shape[0]

    @property
    def global_stream(self) -> np.ndarray:
        side = self.side
        planes = [self.canvas / 255.0]
        planes.extend(frame / 255.0 for frame in self.history)
        planes.append(self.reference / 255.0)
        planes.append(distance_map(self.pen, side)[:, :, None])
        planes.append(np.full((side, side, 1), float(self.color_value)))
        return np.concatenate(planes, axis=-1)

    @property
    def local_stream(self) -> np.ndarray:
        canvas_patch = crop_patch(self.canvas, self.pen, self.patch_size)
        reference_patch = crop_patch(self.reference, self.pen, self.patch_size)
        return np.concatenate([canvas_patch, reference_patch], axis=-1) / 255.0


@dataclass
class EpisodeState:
    """单个回合的状态"""
    canvas: Canvas
    reference: Canvas
    pen: PenState
    max_steps: int
    similarity: float
    step_index: int = 0
    position_history: deque = field(default_factory=lambda: deque(maxlen=STUCK_WINDOW))
    previous_canvases: deque = field(default_factory=deque)
    last_reward: RewardBreakdown = field(default_factory=RewardBreakdown)

    @property
    def terminal(self) -> bool:
        return self.step_index >= self.max_steps

    @property
    def stuck(self) -> bool:
        return is_stuck(self.position_history)


class PaintingEnv:
    """笔画级绘画环境"""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.action_spec = config.action_spec
        self.reward_calculator = RewardCalculator(config.reward, config.media)
        self.state: Optional[EpisodeState] = None

    def reset(self, reference: Canvas, start: Optional[tuple[int, int]] = None) -> EpisodeState:
        """以空白画布开始新回合，笔抬起并位于 start（默认画布中心）"""
        cfg = self.config
        if reference.side != cfg.side or reference.media.channels != cfg.media.channels:
            raise InvalidArgumentError(
                f"参考图像({reference.side}, {reference.media.value})与环境配置({cfg.side}, {cfg.media.value})不一致")
        start = cfg.center if start is None else (int(start[0]), int(start[1]))
        blank = new_canvas(cfg.side, cfg.media)
        if not blank.contains(start):
            raise InvalidArgumentError(f"起始位置超出画布: {start}")
        state = EpisodeState(
            canvas=blank,
            reference=reference,
            pen=PenState(position=start, mode=PenMode.UP),
            max_steps=cfg.max_steps,
            similarity=similarity(blank, reference),
            previous_canvases=deque(
                [blank.pixels.copy() for _ in range(cfg.history_frames - 1)],
                maxlen=cfg.history_frames - 1),
        )
        state.position_history.append(start)
        self.state = state
        return state

    def observe(self, state: Optional[EpisodeState] = None) -> Observation:
        """组装当前观测"""
        state = state or self.state
        if state is None:
            raise InvalidStateError("环境尚未reset")
        return Observation(
            canvas=state.canvas.pixels.copy(),
            reference=state.reference.pixels,
            pen=state.pen.position,
            color_value=self.config.media.pen_modes.index(state.pen.mode),
            patch_size=self.config.patch_size,
            history=tuple(frame.copy() for frame in state.previous_canvases),
        )

    def step(self, action: Union[int, Action]) -> tuple[Observation, float, bool, RewardBreakdown]:
        """执行一个动作，返回 (观测, 奖励, 是否结束, 奖励组成)"""
        state = self.state
        if state is None:
            raise InvalidStateError("环境尚未reset")
        if state.terminal:
            raise InvalidStateError(f"回合已结束（第 {state.step_index} 步）")
        if not isinstance(action, Action):
            action = self.action_spec.decode(int(action))
        else:
            # 偏移范围与笔状态的检查与动作编码一致
            self.action_spec.encode(action)

        side = self.config.side
        x, y = state.pen.position
        # 越界移动截断到画布边界
        target = (int(np.clip(x + action.dx, 0, side - 1)), int(np.clip(y + action.dy, 0, side - 1)))
        move = (target[0] - x, target[1] - y)

        if state.previous_canvases.maxlen:
            state.previous_canvases.appendleft(state.canvas.pixels.copy())

        footprint = (np.empty(0, dtype=np.intp), np.empty(0, dtype=np.intp))
        if action.mode.is_drawing:
            footprint = segment_footprint(side, (x, y), target, self.config.brush)
            render_segment(state.canvas, (x, y), target, action.mode, self.config.brush)
            s_next = similarity(state.canvas, state.reference)
        else:
            s_next = state.similarity

        breakdown = self.reward_calculator.calculate(
            state.similarity, s_next, action.mode, move, state.reference.pixels, footprint)

        state.pen = PenState(position=target, mode=action.mode)
        state.position_history.append(target)
        state.similarity = s_next
        state.step_index += 1
        state.last_reward = breakdown
        return self.observe(state), breakdown.total, state.terminal, breakdown

    def is_stuck(self) -> bool:
        return self.state is not None and self.state.stuck
