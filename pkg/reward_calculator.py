import logging

import numpy as np

from errors import InvalidArgumentError
from models import BACKGROUND, PRIMARY_COLORS, MediaType, PenMode, RewardBreakdown, RewardParams

logger = logging.getLogger(__name__)

# 颜色类别顺序与 PRIMARY_COLORS 一致
_COLOR_MODES = (PenMode.RED, PenMode.GREEN, PenMode.BLUE)
_COLOR_TABLE = np.array([PRIMARY_COLORS[m] for m in _COLOR_MODES], dtype=float)


def _as_pixels(image) -> np.ndarray:
    return image.pixels if hasattr(image, "pixels") else np.asarray(image)


def similarity(canvas, reference) -> float:
    """画布与参考图像的差异: Σ(P - P_ref)² / L²，通道维度在同一归一化内求和"""
    a = _as_pixels(canvas)
    b = _as_pixels(reference)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"画布与参考图像尺寸不一致: {a.shape} vs {b.shape}")
    side = a.shape[0]
    diff = a.astype(np.float64) - b.astype(np.float64)
    return float(np.sum(diff * diff) / (side * side))


def color_classes(pixels: np.ndarray) -> np.ndarray:
    """每个像素的颜色类别: -1 为背景，否则为最近的红/绿/蓝下标"""
    flat = pixels.reshape(-1, pixels.shape[-1]).astype(float)
    distances = ((flat[:, None, :] - _COLOR_TABLE[None, :, :]) ** 2).sum(axis=-1)
    classes = distances.argmin(axis=1)
    background = np.all(flat == BACKGROUND, axis=1)
    classes[background] = -1
    return classes.reshape(pixels.shape[:-1])


class RewardCalculator:
    """奖励计算器: 像素奖励 + 小步惩罚 + 颜色惩罚"""

    def __init__(self, params: RewardParams, media: MediaType):
        self.params = params
        self.media = media

    def step_penalty(self, mode: PenMode, move: tuple[int, int]) -> float:
        """落笔移动不足 min_draw_step，或抬笔时移动，扣 step_penalty"""
        dx, dy = move
        distance = max(abs(dx), abs(dy))
        if mode.is_drawing:
            return self.params.step_penalty if distance < self.params.min_draw_step else 0.0
        return self.params.step_penalty if distance != 0 else 0.0

    def color_penalty(self, mode: PenMode, reference: np.ndarray,
                      footprint: tuple[np.ndarray, np.ndarray]) -> float:
        """所选颜色在参考图像对应笔迹区域内不存在时扣 color_penalty"""
        if self.params.beta == 0 or mode not in _COLOR_MODES:
            return 0.0
        ys, xs = footprint
        if len(ys) == 0:
            return self.params.beta * self.params.color_penalty
        region = reference[ys, xs][None, :, :]
        wanted = _COLOR_MODES.index(mode)
        if np.any(color_classes(region) == wanted):
            return 0.0
        return self.params.beta * self.params.color_penalty

    def calculate(self, similarity_before: float, similarity_after: float, mode: PenMode,
                  move: tuple[int, int], reference: np.ndarray,
                  footprint: tuple[np.ndarray, np.ndarray]) -> RewardBreakdown:
        """计算单步奖励的各组成部分"""
        breakdown = RewardBreakdown(
            pixel=similarity_before - similarity_after,
            step_penalty=self.step_penalty(mode, move),
            color_penalty=self.color_penalty(mode, reference, footprint) if mode.is_drawing else 0.0,
        )
        logger.debug(f"奖励: 像素={breakdown.pixel:.4f}, 步长惩罚={breakdown.step_penalty}, 颜色惩罚={breakdown.color_penalty}")
        return breakdown
