import os
import logging
from collections import defaultdict
from typing import Optional

import numpy as np

from canvas import Canvas
from container import DemoDataset
from demo_synthesizer import synthesize_demo_episode, synthesize_drawing_episode
from drawing_fetcher import (DEFAULT_MARGIN, DrawingFetcher, ProceduralStrokeSource, normalize_drawing,
                             rasterize_reference, relative_polyline, resample_polyline)
from errors import EmptyDatasetError, InvalidArgumentError
from models import OFFSET_RANGE, EnvConfig, VectorDrawing

logger = logging.getLogger(__name__)

DEFAULT_HOLDOUT = "house"
DEFAULT_PER_CLASS = 200


def validate_dataset_path(path: Optional[str], description: str) -> tuple[bool, str]:
    if not path:
        error_msg = f"必须提供{description}"
        logger.warning(error_msg)
        return False, error_msg
    if not os.path.exists(path):
        error_msg = f"{description}不存在: {path}"
        logger.warning(error_msg)
        return False, error_msg
    return True, ""


def split_by_class(drawings: list[VectorDrawing], holdout: str = DEFAULT_HOLDOUT,
                   per_class: int = DEFAULT_PER_CLASS) -> tuple[list[VectorDrawing], list[VectorDrawing]]:
    """每个类别按文件顺序取前 per_class 幅；holdout 类别单独返回，不进入训练集"""
    if per_class < 1:
        raise InvalidArgumentError(f"per_class 必须 ≥ 1: {per_class}")
    by_class: dict[str, list[VectorDrawing]] = defaultdict(list)
    for drawing in drawings:
        if len(by_class[drawing.class_label]) < per_class:
            by_class[drawing.class_label].append(drawing)
    for label, group in sorted(by_class.items()):
        if len(group) < per_class:
            logger.warning(f"类别'{label}'只有 {len(group)} 幅涂鸦，少于 {per_class}")
    train = [d for label in sorted(by_class) if label != holdout for d in by_class[label]]
    held_out = by_class.get(holdout, [])
    logger.info(f"按类别划分: 训练 {len(train)} 幅（{len(by_class) - (1 if held_out else 0)} 类），"
                f"保留类别'{holdout}' {len(held_out)} 幅")
    return train, held_out


def rasterize_drawings(drawings: list[VectorDrawing], env_config: EnvConfig) -> list[Canvas]:
    """归一化并栅格化为参考图像"""
    return [rasterize_reference(normalize_drawing(d, env_config.side), env_config.media, env_config.side,
                                brush=env_config.brush)
            for d in drawings]


def load_reference_canvases(quickdraw_path: str, env_config: EnvConfig, classes: Optional[list[str]] = None,
                            per_class: int = DEFAULT_PER_CLASS) -> list[tuple[str, Canvas]]:
    """加载 QuickDraw 涂鸦并栅格化，返回 (类别, 参考图像) 列表"""
    fetcher = DrawingFetcher(quickdraw_path)
    drawings = fetcher.fetch_drawings(classes)
    counts: dict[str, int] = defaultdict(int)
    selected = []
    for drawing in drawings:
        if counts[drawing.class_label] < per_class:
            counts[drawing.class_label] += 1
            selected.append(drawing)
    if not selected:
        raise EmptyDatasetError(f"没有找到符合条件的涂鸦: {classes}")
    canvases = rasterize_drawings(selected, env_config)
    logger.info(f"成功生成 {len(canvases)} 张参考图像")
    return [(d.class_label, c) for d, c in zip(selected, canvases)]


def build_stroke_bank(drawings: list[VectorDrawing], procedural_count: int, rng: np.random.Generator,
                      side: int, min_extent: int = 5) -> list[list[tuple[int, int]]]:
    """笔画库: 涂鸦中的单个笔画（相对坐标）加上程序生成的直线与圆弧，顶点统一按动作步长重采样"""
    bank = []
    dropped = 0
    for drawing in drawings:
        normalized = normalize_drawing(drawing, side)
        for stroke in normalized.strokes:
            points = resample_polyline(stroke)
            if len(points) < 2:
                dropped += 1
                continue
            bank.append(relative_polyline(points))
    if dropped:
        logger.info(f"丢弃 {dropped} 个短于一步的涂鸦笔画")
    if procedural_count > 0:
        max_extent = max(min_extent, OFFSET_RANGE, side - 2 * DEFAULT_MARGIN)
        source = ProceduralStrokeSource(max_extent=max_extent, min_extent=min_extent)
        bank.extend(source.generate(rng, procedural_count))
    if not bank:
        raise EmptyDatasetError("笔画库为空：既没有涂鸦也没有程序生成的笔画")
    logger.info(f"笔画库共 {len(bank)} 个笔画（其中程序生成 {max(procedural_count, 0)} 个）")
    return bank


def synthesize_dataset(stroke_bank: list[list[tuple[int, int]]], env_config: EnvConfig, episodes: int,
                       rng: np.random.Generator, n_strokes: int = 2) -> DemoDataset:
    """生成 episodes 个示范回合"""
    if episodes < 1:
        raise InvalidArgumentError(f"episodes 必须 ≥ 1: {episodes}")
    dataset = DemoDataset(media=env_config.media, side=env_config.side)
    for index in range(episodes):
        dataset.episodes.append(synthesize_demo_episode(stroke_bank, rng, env_config, n_strokes))
        if (index + 1) % 100 == 0:
            logger.info(f"已生成 {index + 1}/{episodes} 个示范回合")
    logger.info(f"示范数据生成完成: {episodes} 个回合，{len(dataset.samples)} 个样本")
    return dataset


def synthesize_drawing_dataset(drawings: list[VectorDrawing], env_config: EnvConfig, episodes: int,
                               rng: np.random.Generator) -> DemoDataset:
    """整幅涂鸦按记录的笔画顺序生成示范回合，涂鸦多于 episodes 时随机抽取"""
    if episodes < 1:
        raise InvalidArgumentError(f"episodes 必须 ≥ 1: {episodes}")
    if not drawings:
        raise EmptyDatasetError("没有可用于生成示范的涂鸦")
    chosen = rng.permutation(len(drawings))[:episodes]
    if len(chosen) < episodes:
        logger.warning(f"只有 {len(drawings)} 幅涂鸦，少于请求的 {episodes} 个回合")
    dataset = DemoDataset(media=env_config.media, side=env_config.side)
    for index in chosen:
        normalized = normalize_drawing(drawings[int(index)], env_config.side)
        dataset.episodes.append(synthesize_drawing_episode(normalized, env_config))
    logger.info(f"整幅涂鸦示范生成完成: {len(dataset.episodes)} 个回合，{len(dataset.samples)} 个样本")
    return dataset
