import json
import logging
import math
import os
from typing import Iterable, Optional, Union

import numpy as np

from canvas import Canvas, bresenham_line, new_canvas, render_segment
from errors import DatasetIOError, EmptyDatasetError, InvalidArgumentError
from models import OFFSET_RANGE, BrushParams, MediaType, PenMode, VectorDrawing

logger = logging.getLogger(__name__)

DEFAULT_MARGIN = 2


def round_half_away(value: float) -> int:
    """四舍五入（.5 远离零）"""
    return int(math.floor(value + 0.5)) if value >= 0 else -int(math.floor(-value + 0.5))


def _parse_record(line: str) -> VectorDrawing:
    record = json.loads(line)
    strokes = []
    for stroke in record["drawing"]:
        xs, ys = stroke[0], stroke[1]
        if len(xs) != len(ys) or not xs:
            raise ValueError("笔画坐标长度不一致或为空")
        points = [(round_half_away(float(x)), round_half_away(float(y))) for x, y in zip(xs, ys)]
        if len(points) == 1:
            # 单点笔画视为原地落笔
            points.append(points[0])
        strokes.append(points)
    if not strokes:
        raise ValueError("记录中没有笔画")
    return VectorDrawing(strokes=strokes, class_label=str(record.get("word", "")),
                         key_id=str(record.get("key_id", "")))


def parse_quickdraw(stream: Iterable[Union[str, bytes]]) -> list[VectorDrawing]:
    """解析 QuickDraw simplified NDJSON，损坏的记录（包括非 UTF-8 行）跳过并计数"""
    drawings = []
    skipped = 0
    try:
        for line_number, line in enumerate(stream, start=1):
            try:
                if isinstance(line, bytes):
                    line = line.decode("utf-8")
                line = line.strip()
                if not line:
                    continue
                drawings.append(_parse_record(line))
            except (ValueError, KeyError, TypeError, IndexError, InvalidArgumentError) as e:
                skipped += 1
                logger.warning(f"第 {line_number} 行记录无效: {str(e)}，已跳过")
    except (OSError, UnicodeDecodeError) as e:
        logger.error(f"读取QuickDraw数据失败: {str(e)}")
        raise DatasetIOError(f"读取QuickDraw数据失败: {str(e)}") from e

    if skipped:
        logger.warning(f"共跳过 {skipped} 条无效记录")
    if not drawings:
        raise EmptyDatasetError("没有解析到任何有效的QuickDraw记录")
    logger.info(f"成功解析 {len(drawings)} 幅涂鸦")
    return drawings


def normalize_drawing(drawing: VectorDrawing, side: int, margin: int = DEFAULT_MARGIN) -> VectorDrawing:
    """等比缩放并平移，使包围盒居中落在 [margin, side-1-margin]² 内"""
    points = drawing.points
    if not points:
        raise InvalidArgumentError("涂鸦没有任何点")
    span = side - 1 - 2 * margin
    if span < 1:
        raise InvalidArgumentError(f"画布边长 {side} 容不下边距 {margin}")
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    min_x, min_y = xs.min(), ys.min()
    extent = max(xs.max() - min_x, ys.max() - min_y)

    if extent == 0:
        center = side // 2
        strokes = [[(center, center) for _ in stroke] for stroke in drawing.strokes]
        return VectorDrawing(strokes=strokes, class_label=drawing.class_label, key_id=drawing.key_id)

    scale = span / extent
    scaled = [[(round_half_away((x - min_x) * scale), round_half_away((y - min_y) * scale))
               for x, y in stroke] for stroke in drawing.strokes]
    width = max(x for stroke in scaled for x, _ in stroke)
    height = max(y for stroke in scaled for _, y in stroke)
    # 整数偏移保证再次归一化结果不变
    shift_x = margin + (span - width) // 2
    shift_y = margin + (span - height) // 2
    strokes = [[(x + shift_x, y + shift_y) for x, y in stroke] for stroke in scaled]
    return VectorDrawing(strokes=strokes, class_label=drawing.class_label, key_id=drawing.key_id)


def default_stroke_modes(media: MediaType, count: int) -> list[PenMode]:
    """默认笔画颜色: 素描为黑色，彩色介质按红绿蓝轮换"""
    if media is MediaType.SKETCH:
        return [PenMode.DOWN] * count
    palette = (PenMode.RED, PenMode.GREEN, PenMode.BLUE)
    return [palette[i % len(palette)] for i in range(count)]


def rasterize_reference(drawing: VectorDrawing, media: MediaType, side: int,
                        modes: Optional[list[PenMode]] = None,
                        brush: Optional[BrushParams] = None) -> Canvas:
    """把已归一化的涂鸦逐段绘制到空白画布上作为参考图像"""
    brush = brush or BrushParams.for_media(media)
    modes = modes or default_stroke_modes(media, len(drawing.strokes))
    if len(modes) != len(drawing.strokes):
        raise InvalidArgumentError(f"颜色数量 {len(modes)} 与笔画数量 {len(drawing.strokes)} 不一致")
    canvas = new_canvas(side, media)
    for stroke, mode in zip(drawing.strokes, modes):
        for start, end in zip(stroke[:-1], stroke[1:]):
            render_segment(canvas, start, end, mode, brush)
    return canvas


class DrawingSource:
    """涂鸦数据源抽象基类"""
    def load_drawings(self) -> list[VectorDrawing]:
        raise NotImplementedError("子类必须实现load_drawings方法")


class NdjsonDrawingSource(DrawingSource):
    """QuickDraw NDJSON 文件数据源（可以是单个文件或目录）"""
    def __init__(self, path: str):
        self.path = path
        self.drawings: Optional[list[VectorDrawing]] = None

    def _files(self) -> list[str]:
        if os.path.isdir(self.path):
            return sorted(os.path.join(self.path, name) for name in os.listdir(self.path)
                          if name.endswith(".ndjson"))
        return [self.path]

    def load_drawings(self) -> list[VectorDrawing]:
        if self.drawings is not None:
            return self.drawings
        if not os.path.exists(self.path):
            logger.error(f"QuickDraw数据路径不存在: {self.path}")
            raise DatasetIOError(f"QuickDraw数据路径不存在: {self.path}", path=self.path)

        drawings = []
        for file_path in self._files():
            logger.info(f"开始从NDJSON文件加载涂鸦: {file_path}")
            try:
                # 按字节读取，逐行解码
                with open(file_path, "rb") as f:
                    drawings.extend(parse_quickdraw(f))
            except EmptyDatasetError:
                logger.warning(f"文件中没有有效记录: {file_path}")
            except OSError as e:
                raise DatasetIOError(f"读取NDJSON文件失败: {file_path}", path=file_path) from e
        if not drawings:
            raise EmptyDatasetError(f"没有从 {self.path} 加载到有效涂鸦")
        self.drawings = drawings
        logger.info(f"成功加载 {len(drawings)} 幅涂鸦")
        return drawings


def resample_polyline(points: list[tuple[int, int]], step: int = OFFSET_RANGE) -> list[tuple[int, int]]:
    """沿折线的栅格路径重新取点，相邻顶点的切比雪夫距离恰为 step，不足一步的尾段丢弃

    顶点都落在原折线的像素路径上，两顶点之间的 Bresenham 直线基本重合于原路径，
    画笔在局部窗口内就能看到下一步要到达的位置。
    """
    if step < 1:
        raise InvalidArgumentError(f"重采样步长必须为正: {step}")
    if not points:
        return []
    path = [tuple(points[0])]
    for start, end in zip(points[:-1], points[1:]):
        for pixel in bresenham_line(start, end):
            if pixel != path[-1]:
                path.append(pixel)
    vertices = [path[0]]
    for pixel in path[1:]:
        anchor = vertices[-1]
        # 路径八连通，距离每次最多增加1
        if max(abs(pixel[0] - anchor[0]), abs(pixel[1] - anchor[1])) >= step:
            vertices.append(pixel)
    return vertices


class ProceduralStrokeSource:
    """程序生成的直线与圆弧笔画（相对坐标，最小坐标为0，顶点按 step 重采样）"""
    def __init__(self, max_extent: int, min_extent: int = 5, step: int = OFFSET_RANGE):
        if max_extent < min_extent:
            raise InvalidArgumentError(f"max_extent ({max_extent}) 小于 min_extent ({min_extent})")
        if max_extent < step:
            raise InvalidArgumentError(f"max_extent ({max_extent}) 小于重采样步长 ({step})")
        self.max_extent = max_extent
        self.min_extent = min_extent
        self.step = step

    def _line(self, rng: np.random.Generator) -> list[tuple[int, int]]:
        length = rng.uniform(self.min_extent, self.max_extent)
        angle = rng.uniform(0.0, 2.0 * math.pi)
        return [(0, 0), (round_half_away(length * math.cos(angle)), round_half_away(length * math.sin(angle)))]

    def _arc(self, rng: np.random.Generator) -> list[tuple[int, int]]:
        high = self.max_extent / 2.0
        low = min(max(self.min_extent / 2.0, 2.0 * self.step), high)
        radius = rng.uniform(low, high)
        start = rng.uniform(0.0, 2.0 * math.pi)
        sweep = rng.uniform(math.pi / 3.0, math.pi)
        count = max(4, int(radius * sweep / 2.0) + 2)
        return [(round_half_away(radius * math.cos(a)), round_half_away(radius * math.sin(a)))
                for a in np.linspace(start, start + sweep, count)]

    def generate(self, rng: np.random.Generator, count: int) -> list[list[tuple[int, int]]]:
        strokes = []
        while len(strokes) < count:
            points = self._arc(rng) if rng.random() < 0.5 else self._line(rng)
            points = resample_polyline(points, self.step)
            if len(points) >= 2:
                strokes.append(relative_polyline(points))
        return strokes


def relative_polyline(points: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """平移折线使最小坐标为0"""
    min_x = min(p[0] for p in points)
    min_y = min(p[1] for p in points)
    return [(x - min_x, y - min_y) for x, y in points]


class DrawingFetcher:
    """涂鸦查询器，按配置选择数据源"""
    def __init__(self, quickdraw_path: Optional[str]):
        self.quickdraw_path = quickdraw_path
        self.data_source: Optional[DrawingSource] = None
        if quickdraw_path:
            self.data_source = NdjsonDrawingSource(quickdraw_path)
            logger.info(f"已初始化QuickDraw数据源: {quickdraw_path}")

    def fetch_drawings(self, classes: Optional[list[str]] = None) -> list[VectorDrawing]:
        """加载涂鸦，可按类别过滤"""
        if not self.data_source:
            raise DatasetIOError("未配置QuickDraw数据路径，请检查配置 QUICKDRAW_PATH")
        drawings = self.data_source.load_drawings()
        if classes is None:
            return drawings
        wanted = set(classes)
        selected = [d for d in drawings if d.class_label in wanted]
        missing = wanted - {d.class_label for d in selected}
        for label in sorted(missing):
            logger.warning(f"未找到类别'{label}'的涂鸦")
        return selected
