import logging
import os
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from PIL import Image

from errors import DatasetIOError, InvalidArgumentError
from models import BACKGROUND, BrushParams, MediaType, PenMode

logger = logging.getLogger(__name__)

MIN_SIDE = 16


@dataclass
class Canvas:
    """L×L 像素画布，像素值为 uint8，索引顺序为 [y, x, channel]"""
    side: int
    media: MediaType
    pixels: np.ndarray

    @property
    def channels(self) -> int:
        return self.media.channels

    def copy(self) -> "Canvas":
        return Canvas(side=self.side, media=self.media, pixels=self.pixels.copy())

    def contains(self, point: tuple[int, int]) -> bool:
        x, y = point
        return 0 <= x < self.side and 0 <= y < self.side


def new_canvas(side: int, media: MediaType) -> Canvas:
    """创建全白画布"""
    if side < MIN_SIDE:
        raise InvalidArgumentError(f"画布边长必须 ≥ {MIN_SIDE}: {side}")
    pixels = np.full((side, side, media.channels), BACKGROUND, dtype=np.uint8)
    return Canvas(side=side, media=media, pixels=pixels)


def bresenham_line(start: tuple[int, int], end: tuple[int, int]) -> Iterator[tuple[int, int]]:
    """整数 Bresenham 直线，包含两个端点"""
    x0, y0 = int(start[0]), int(start[1])
    x1, y1 = int(end[0]), int(end[1])
    dx = abs(x1 - x0)
    dy = -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def _stamp_offsets(brush: BrushParams) -> list[tuple[int, int, float]]:
    """笔刷印章内各偏移及其到中心的距离"""
    radius = (brush.width - 1) / 2.0
    reach = int(np.floor(radius))
    offsets = []
    for oy in range(-reach, reach + 1):
        for ox in range(-reach, reach + 1):
            d2 = ox * ox + oy * oy
            if d2 <= radius * radius:
                offsets.append((ox, oy, float(np.sqrt(d2))))
    return offsets


def segment_footprint(side: int, start: tuple[int, int], end: tuple[int, int],
                      brush: BrushParams) -> tuple[np.ndarray, np.ndarray]:
    """线段在画布上覆盖的像素 (ys, xs)，去重后按行优先排序"""
    offsets = _stamp_offsets(brush)
    cells = set()
    for cx, cy in bresenham_line(start, end):
        for ox, oy, _ in offsets:
            x, y = cx + ox, cy + oy
            if 0 <= x < side and 0 <= y < side:
                cells.add((y, x))
    ordered = sorted(cells)
    ys = np.array([c[0] for c in ordered], dtype=np.intp)
    xs = np.array([c[1] for c in ordered], dtype=np.intp)
    return ys, xs


def render_segment(canvas: Canvas, start: tuple[int, int], end: tuple[int, int],
                   mode: PenMode, brush: BrushParams) -> Canvas:
    """在画布上绘制一条线段（原地修改并返回画布）"""
    for point in (start, end):
        if not canvas.contains(point):
            raise InvalidArgumentError(f"端点超出画布: {point}")
    if not mode.is_drawing:
        return canvas
    if mode not in canvas.media.pen_modes:
        raise InvalidArgumentError(f"介质 {canvas.media.value} 不支持笔状态 {mode.value}")

    ink = mode.ink(canvas.channels)
    if canvas.media is MediaType.WATERCOLOR:
        _composite_watercolor(canvas, start, end, ink, brush)
    else:
        ys, xs = segment_footprint(canvas.side, start, end, brush)
        canvas.pixels[ys, xs] = ink.astype(np.uint8)
    return canvas


def _composite_watercolor(canvas: Canvas, start, end, ink: np.ndarray, brush: BrushParams) -> None:
    """沿线段逐像素叠加高斯印章"""
    offsets = _stamp_offsets(brush)
    side = canvas.side
    for cx, cy in bresenham_line(start, end):
        for ox, oy, d in offsets:
            x, y = cx + ox, cy + oy
            if not (0 <= x < side and 0 <= y < side):
                continue
            if brush.softness > 0:
                alpha = brush.opacity * np.exp(-d * d / (2.0 * brush.softness ** 2))
            else:
                alpha = brush.opacity if d == 0 else 0.0
            if alpha <= 0.0:
                continue
            old = canvas.pixels[y, x].astype(float)
            mixed = old * (1.0 - alpha) + ink * alpha
            canvas.pixels[y, x] = np.clip(np.rint(mixed), 0, 255).astype(np.uint8)


def crop_patch(pixels: np.ndarray, center: tuple[int, int], size: int = 11) -> np.ndarray:
    """以 center 为中心裁剪 size×size 区域，画布外用背景色填充"""
    if size % 2 == 0 or size < 1:
        raise InvalidArgumentError(f"裁剪尺寸必须是正奇数: {size}")
    if isinstance(pixels, Canvas):
        pixels = pixels.pixels
    half = size // 2
    padded = np.pad(pixels, ((half, half), (half, half), (0, 0)),
                    mode="constant", constant_values=BACKGROUND)
    x, y = center
    return padded[y:y + size, x:x + size].copy()


def save_image(canvas: Canvas, path) -> None:
    """保存为8位PNG"""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise DatasetIOError(f"输出目录不存在: {parent}", path=path)
    data = canvas.pixels[:, :, 0] if canvas.channels == 1 else canvas.pixels
    try:
        Image.fromarray(np.ascontiguousarray(data)).save(path, format="PNG")
    except OSError as e:
        logger.error(f"保存PNG失败: {path}: {str(e)}")
        raise DatasetIOError(f"保存PNG失败: {path}", path=path) from e
    logger.debug(f"已保存画布: {path}")


def load_image(path, media: MediaType) -> Canvas:
    """读取PNG为画布，尺寸必须是正方形"""
    if not os.path.exists(path):
        raise DatasetIOError(f"图像文件不存在: {path}", path=path)
    try:
        with Image.open(path) as image:
            image = image.convert("L" if media.channels == 1 else "RGB")
            pixels = np.asarray(image, dtype=np.uint8)
    except OSError as e:
        raise DatasetIOError(f"读取图像失败: {path}", path=path) from e
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    if pixels.shape[0] != pixels.shape[1]:
        raise InvalidArgumentError(f"参考图像必须是正方形: {pixels.shape[:2]}")
    return Canvas(side=pixels.shape[0], media=media, pixels=pixels.copy())
