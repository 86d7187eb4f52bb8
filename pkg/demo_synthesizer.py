import dataclasses
import logging
from typing import Optional

import numpy as np

from canvas import new_canvas, render_segment
from drawing_fetcher import default_stroke_modes, round_half_away
from env import Observation, PaintingEnv
from errors import InvalidArgumentError
from models import (OFFSET_RANGE, Action, ActionSpec, DemoSample, EnvConfig, MediaType, PenMode,
                    PenState, VectorDrawing)

logger = logging.getLogger(__name__)

MAX_PLACEMENT_RETRIES = 10
SYMMETRIES = 8


def chunk_move(start: tuple[int, int], target: tuple[int, int],
               max_step: int = OFFSET_RANGE) -> list[tuple[int, int]]:
    """贪心拆分位移：每步沿目标方向走满 max_step（切比雪夫距离）"""
    steps = []
    cx, cy = start
    tx, ty = target
    while (cx, cy) != (tx, ty):
        dx, dy = tx - cx, ty - cy
        distance = max(abs(dx), abs(dy))
        if distance > max_step:
            dx = round_half_away(dx * max_step / distance)
            dy = round_half_away(dy * max_step / distance)
        steps.append((dx, dy))
        cx, cy = cx + dx, cy + dy
    return steps


def approach_move(start: tuple[int, int], target: tuple[int, int],
                  max_step: int = OFFSET_RANGE) -> list[tuple[int, int]]:
    """抬笔移动：偏移超过 max_step 的坐标轴先整步靠近，进入范围后一步到位"""
    steps = []
    cx, cy = start
    tx, ty = target
    while max(abs(tx - cx), abs(ty - cy)) > max_step:
        dx = max_step * int(np.sign(tx - cx)) if abs(tx - cx) > max_step else 0
        dy = max_step * int(np.sign(ty - cy)) if abs(ty - cy) > max_step else 0
        steps.append((dx, dy))
        cx, cy = cx + dx, cy + dy
    if (cx, cy) != (tx, ty):
        steps.append((tx - cx, ty - cy))
    return steps


def order_strokes(strokes: list[list[tuple[int, int]]], modes: list[PenMode],
                  start: tuple[int, int]) -> tuple[list[list[tuple[int, int]]], list[PenMode]]:
    """从 start 出发，每次选端点最近的未画笔画，并从较近的一端开始画

    距离先比切比雪夫距离再比欧氏距离，仍相同时保留原顺序。
    """
    remaining = list(zip(strokes, modes))
    ordered_strokes, ordered_modes = [], []
    position = start
    while remaining:
        best = None
        for index, (stroke, _) in enumerate(remaining):
            for reverse, end in ((False, stroke[0]), (True, stroke[-1])):
                dx, dy = end[0] - position[0], end[1] - position[1]
                key = (max(abs(dx), abs(dy)), dx * dx + dy * dy)
                if best is None or key < best[0]:
                    best = (key, index, reverse)
        _, index, reverse = best
        stroke, mode = remaining.pop(index)
        stroke = stroke[::-1] if reverse else list(stroke)
        ordered_strokes.append(stroke)
        ordered_modes.append(mode)
        position = stroke[-1]
    return ordered_strokes, ordered_modes


def attach_history(samples: list[DemoSample], history_frames: int) -> list[DemoSample]:
    """按回合顺序为样本补上之前的画布（回合开始前用空白画布）"""
    if history_frames <= 1 or not samples:
        return samples
    blank = np.full_like(samples[0].current, 255)
    previous = [blank] * (history_frames - 1)
    for sample in samples:
        sample.history = tuple(previous)
        previous = [sample.current] + previous[:-1]
    return samples


def demo_observation(sample: DemoSample, config: EnvConfig) -> Observation:
    """把示范样本转换成网络观测"""
    return Observation(
        canvas=sample.current,
        reference=sample.reference,
        pen=sample.pen.position,
        color_value=config.media.pen_modes.index(sample.pen.mode),
        patch_size=config.patch_size,
        history=sample.history,
    )


def _transform_pixels(pixels: np.ndarray, k: int) -> np.ndarray:
    if k & 4:
        pixels = pixels.transpose(1, 0, 2)
    if k & 1:
        pixels = pixels[:, ::-1]
    if k & 2:
        pixels = pixels[::-1]
    return np.ascontiguousarray(pixels)


def _transform_offset(dx: int, dy: int, k: int) -> tuple[int, int]:
    if k & 4:
        dx, dy = dy, dx
    if k & 1:
        dx = -dx
    if k & 2:
        dy = -dy
    return dx, dy


def symmetry_variant(observation: Observation, action: int, spec: ActionSpec,
                     k: int) -> tuple[Observation, int]:
    """对观测和标签动作同时施加正方形的第 k 个对称变换（k=0 为恒等）

    k 的第 3 位表示先转置，第 1 位表示左右翻转，第 2 位表示上下翻转。
    """
    if not 0 <= k < SYMMETRIES:
        raise InvalidArgumentError(f"对称变换编号超出范围 [0, {SYMMETRIES}): {k}")
    if k == 0:
        return observation, action
    last = observation.side - 1
    # 翻转后的坐标平移回 [0, last]
    x, y = _transform_offset(observation.pen[0], observation.pen[1], k)
    pen = (x + last if k & 1 else x, y + last if k & 2 else y)
    decoded = spec.decode(action)
    dx, dy = _transform_offset(decoded.dx, decoded.dy, k)
    variant = dataclasses.replace(
        observation,
        canvas=_transform_pixels(observation.canvas, k),
        reference=_transform_pixels(observation.reference, k),
        pen=pen,
        history=tuple(_transform_pixels(frame, k) for frame in observation.history),
    )
    return variant, spec.encode(Action(dx, dy, decoded.mode))


def plan_actions(strokes: list[list[tuple[int, int]]], modes: list[PenMode],
                 start: tuple[int, int]) -> list[Action]:
    """把绝对坐标笔画转换成动作序列：抬笔移动到起点，再逐点落笔"""
    actions = []
    position = start
    for stroke, mode in zip(strokes, modes):
        for dx, dy in approach_move(position, stroke[0]):
            actions.append(Action(dx, dy, PenMode.UP))
        position = stroke[0]
        for point in stroke[1:]:
            for dx, dy in chunk_move(position, point):
                actions.append(Action(dx, dy, mode))
            position = point
    return actions


def demo_episode_from_strokes(strokes: list[list[tuple[int, int]]], modes: list[PenMode],
                              config: EnvConfig, start: Optional[tuple[int, int]] = None) -> list[DemoSample]:
    """由放置好的笔画生成一个示范回合

    参考图像由拆分后的线段绘制而成，因此按标签动作回放必然逐像素复现参考图像。
    """
    start = config.center if start is None else start
    actions = plan_actions(strokes, modes, start)
    if not actions:
        return []

    reference = new_canvas(config.side, config.media)
    position = start
    for action in actions:
        target = (position[0] + action.dx, position[1] + action.dy)
        if action.mode.is_drawing:
            render_segment(reference, position, target, action.mode, config.brush)
        position = target

    env = PaintingEnv(dataclasses.replace(config, max_steps=len(actions)))
    state = env.reset(reference, start)
    samples = []
    for action in actions:
        samples.append(DemoSample(
            reference=reference.pixels,
            current=state.canvas.pixels.copy(),
            pen=PenState(position=state.pen.position, mode=state.pen.mode),
            action=env.action_spec.encode(action),
        ))
        env.step(action)

    if not np.array_equal(state.canvas.pixels, reference.pixels):
        raise RuntimeError("示范动作回放结果与参考图像不一致")
    return attach_history(samples, config.history_frames)


def _random_modes(media: MediaType, count: int, rng: np.random.Generator) -> list[PenMode]:
    if media is MediaType.SKETCH:
        return [PenMode.DOWN] * count
    palette = (PenMode.RED, PenMode.GREEN, PenMode.BLUE)
    return [palette[int(i)] for i in rng.integers(0, len(palette), size=count)]


def synthesize_demo_episode(stroke_bank: list[list[tuple[int, int]]], rng: np.random.Generator,
                            config: EnvConfig, n_strokes: int = 2) -> list[DemoSample]:
    """随机放置笔画库中的笔画并生成示范回合"""
    if not stroke_bank:
        raise InvalidArgumentError("笔画库为空")
    if n_strokes < 1:
        raise InvalidArgumentError(f"n_strokes 必须 ≥ 1: {n_strokes}")

    side = config.side
    placed = []
    for _ in range(n_strokes):
        for _attempt in range(MAX_PLACEMENT_RETRIES):
            stroke = stroke_bank[int(rng.integers(len(stroke_bank)))]
            width = max(x for x, _ in stroke)
            height = max(y for _, y in stroke)
            if width <= side - 1 and height <= side - 1:
                tx = int(rng.integers(0, side - width))
                ty = int(rng.integers(0, side - height))
                placed.append([(x + tx, y + ty) for x, y in stroke])
                break
        else:
            logger.warning(f"连续 {MAX_PLACEMENT_RETRIES} 次未能放置笔画，已跳过")

    if not placed:
        return []
    modes = _random_modes(config.media, len(placed), rng)
    # 从第一个笔画的起点落笔，其余笔画按就近顺序衔接
    start = placed[0][0]
    strokes, modes = order_strokes(placed, modes, start)
    return demo_episode_from_strokes(strokes, modes, config, start=start)


def synthesize_drawing_episode(drawing: VectorDrawing, config: EnvConfig,
                               modes: Optional[list[PenMode]] = None) -> list[DemoSample]:
    """由整幅已归一化的涂鸦生成示范回合"""
    modes = modes or default_stroke_modes(config.media, len(drawing.strokes))
    return demo_episode_from_strokes(drawing.strokes, modes, config)
