import os
import json
import logging
from typing import Any, List, Optional

import numpy as np
import pandas as pd

from canvas import Canvas, save_image
from errors import DatasetIOError
from models import ActionSpec, EvaluationResult, MediaType, RolloutResult

logger = logging.getLogger(__name__)


def _reward_ratio(accumulated: float, maximum: float) -> float:
    if maximum == 0:
        return 1.0 if accumulated == 0 else float("-inf")
    return accumulated / maximum


class OutputFormatter:
    """输出格式化器：CSV、JSON lines、PNG 与指标 JSON"""
    @staticmethod
    def _ensure_parent(path: str) -> None:
        parent = os.path.dirname(os.path.abspath(path))
        try:
            os.makedirs(parent, exist_ok=True)
        except OSError as e:
            raise DatasetIOError(f"无法创建输出目录: {parent}", path=path) from e

    @staticmethod
    def write_pretrain_metrics(metrics: List[dict], path: str) -> None:
        """写出预训练每个 epoch 的损失与准确率"""
        OutputFormatter._ensure_parent(path)
        frame = pd.DataFrame(metrics, columns=["epoch", "loss", "train_accuracy", "val_accuracy"])
        frame.to_csv(path, index=False)
        logger.info(f"预训练指标已写入: {path}")

    @staticmethod
    def write_reward_curve(curve: List[dict], path: str) -> None:
        """写出强化学习过程中的评估曲线"""
        OutputFormatter._ensure_parent(path)
        columns = ["frame", "mean_reward", "mean_pixel_reward", "mean_penalty", "mean_max_reward",
                   "loss", "epsilon", "stuck_rate"]
        pd.DataFrame(curve, columns=columns).to_csv(path, index=False)
        logger.info(f"奖励曲线已写入: {path}")

    @staticmethod
    def format_action_log(result: RolloutResult, action_spec: ActionSpec) -> List[str]:
        """每步一行 JSON: step, action, dx, dy, mode, reward"""
        lines = []
        for step, (index, reward) in enumerate(zip(result.actions, result.rewards)):
            action = action_spec.decode(index)
            lines.append(json.dumps({
                "step": step,
                "action": int(index),
                "dx": action.dx,
                "dy": action.dy,
                "mode": action.mode.value,
                "reward": float(reward),
            }, sort_keys=True))
        return lines

    @staticmethod
    def write_action_log(result: RolloutResult, action_spec: ActionSpec, path: str) -> None:
        OutputFormatter._ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            for line in OutputFormatter.format_action_log(result, action_spec):
                f.write(line + "\n")
        logger.info(f"动作日志已写入: {path}（{len(result.actions)} 行）")

    @staticmethod
    def save_rollout_images(result: RolloutResult, media: MediaType, directory: str,
                            initial: Optional[np.ndarray] = None, save_frames: bool = False,
                            strip_every: int = 10) -> str:
        """保存最终画布、按间隔拼接的横向条带，以及可选的逐步帧"""
        os.makedirs(directory, exist_ok=True)
        frames = list(result.frames)
        if not frames:
            if initial is None:
                raise DatasetIOError(f"没有可保存的帧: {directory}", path=directory)
            frames = [initial]
        side = frames[-1].shape[0]
        final_path = os.path.join(directory, "final.png")
        save_image(Canvas(side=side, media=media, pixels=frames[-1]), final_path)

        picked = frames[strip_every - 1::strip_every] if strip_every > 0 else []
        if not picked or picked[-1] is not frames[-1]:
            picked.append(frames[-1])
        strip = np.concatenate(picked, axis=1)
        save_image(Canvas(side=side, media=media, pixels=strip), os.path.join(directory, "strip.png"))

        if save_frames:
            frame_dir = os.path.join(directory, "frames")
            os.makedirs(frame_dir, exist_ok=True)
            for step, pixels in enumerate(frames):
                save_image(Canvas(side=side, media=media, pixels=pixels),
                           os.path.join(frame_dir, f"frame_{step:03d}.png"))
        logger.info(f"展开图像已保存: {directory}")
        return final_path

    @staticmethod
    def summarize_by_class(labels: List[str], evaluation: EvaluationResult) -> pd.DataFrame:
        """按类别汇总平均累计奖励、平均最大奖励及其比值"""
        rows = pd.DataFrame({
            "class": labels,
            "accumulated_reward": [r.accumulated_reward for r in evaluation.per_reference],
            "pixel_reward": [r.accumulated_pixel_reward for r in evaluation.per_reference],
            "penalty": [r.accumulated_penalty for r in evaluation.per_reference],
            "max_reward": [r.max_reward for r in evaluation.per_reference],
        })
        table = rows.groupby("class", sort=True).agg(
            references=("accumulated_reward", "size"),
            mean_accumulated_reward=("accumulated_reward", "mean"),
            mean_pixel_reward=("pixel_reward", "mean"),
            mean_penalty=("penalty", "mean"),
            mean_max_reward=("max_reward", "mean"),
        ).reset_index()
        table["ratio"] = [_reward_ratio(a, m) for a, m in
                          zip(table["mean_accumulated_reward"], table["mean_max_reward"])]
        return table

    @staticmethod
    def evaluation_metrics(labels: List[str], evaluation: EvaluationResult) -> dict[str, Any]:
        table = OutputFormatter.summarize_by_class(labels, evaluation)
        return {
            "overall": {
                "count": len(evaluation.per_reference),
                "mean_accumulated_reward": evaluation.mean_accumulated_reward,
                "mean_pixel_reward": evaluation.mean_pixel_reward,
                "mean_penalty": evaluation.mean_penalty,
                "mean_max_reward": evaluation.mean_max_reward,
                "ratio": evaluation.ratio,
            },
            "per_class": [{key: (value.item() if hasattr(value, "item") else value) for key, value in record.items()}
                          for record in table.to_dict(orient="records")],
        }

    @staticmethod
    def write_metrics(metrics: dict[str, Any], path: str) -> None:
        OutputFormatter._ensure_parent(path)
        with open(path, "w", encoding="utf-8") as f:
            # -inf 写成 JSON 的 -Infinity
            json.dump(metrics, f, ensure_ascii=False, indent=2, sort_keys=True)
        logger.info(f"评估指标已写入: {path}")

    @staticmethod
    def print_evaluation(table: pd.DataFrame) -> None:
        """打印评估结果(命令行)"""
        print("\n==================== 评估结果 ====================")
        print(f"{'类别':<15} {'数量':<8} {'平均累计奖励':<15} {'平均最大奖励':<15} {'比值':<10}")
        print("--------------------------------------------------")
        for row in table.itertuples(index=False):
            print(f"{row[0]:<15} {row.references:<8} {row.mean_accumulated_reward:<15.2f} "
                  f"{row.mean_max_reward:<15.2f} {row.ratio:<10.3f}")
