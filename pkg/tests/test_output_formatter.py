import json
import math

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from models import ActionSpec, EvaluationResult, MediaType, PenMode, RolloutResult
from output_formatter import OutputFormatter


def make_result(accumulated, maximum, steps=3, side=28):
    frames = [np.full((side, side, 1), 255 - i, dtype=np.uint8) for i in range(steps)]
    rewards = [accumulated / steps] * steps if steps else []
    return RolloutResult(frames=frames, actions=list(range(steps)), rewards=rewards, pixel_rewards=rewards,
                         penalties=[0.0] * steps, max_reward=maximum)


def make_evaluation(results):
    return EvaluationResult(
        mean_accumulated_reward=float(np.mean([r.accumulated_reward for r in results])),
        mean_max_reward=float(np.mean([r.max_reward for r in results])),
        mean_pixel_reward=float(np.mean([r.accumulated_pixel_reward for r in results])),
        mean_penalty=0.0,
        per_reference=results,
    )


class TestActionLog:
    def test_lines(self):
        spec = ActionSpec(MediaType.SKETCH)
        result = make_result(3.0, 10.0, steps=2)
        result.actions = [spec.index_of(5, -2, PenMode.DOWN), spec.index_of(0, 0, PenMode.UP)]
        lines = OutputFormatter.format_action_log(result, spec)
        assert json.loads(lines[0]) == {"step": 0, "action": result.actions[0], "dx": 5, "dy": -2,
                                        "mode": "down", "reward": 1.5}
        assert json.loads(lines[1])["mode"] == "up"

    def test_file_has_one_line_per_step(self, tmp_path):
        path = tmp_path / "out" / "actions.jsonl"
        OutputFormatter.write_action_log(make_result(1.0, 2.0, steps=4), ActionSpec(MediaType.SKETCH), str(path))
        assert len(path.read_text(encoding="utf-8").splitlines()) == 4


class TestImages:
    def test_final_and_strip(self, tmp_path):
        result = make_result(1.0, 2.0, steps=25)
        OutputFormatter.save_rollout_images(result, MediaType.SKETCH, str(tmp_path), save_frames=True)
        with Image.open(tmp_path / "final.png") as final:
            assert np.asarray(final)[0, 0] == 255 - 24
        with Image.open(tmp_path / "strip.png") as strip:
            # 第10、20步和最后一步
            assert strip.size == (28 * 3, 28)
        assert len(list((tmp_path / "frames").iterdir())) == 25

    def test_no_frames_uses_initial(self, tmp_path):
        result = make_result(0.0, 0.0, steps=0)
        initial = np.full((28, 28, 1), 255, dtype=np.uint8)
        OutputFormatter.save_rollout_images(result, MediaType.SKETCH, str(tmp_path), initial=initial)
        assert (tmp_path / "final.png").exists()


class TestSummaries:
    def test_per_class_table(self):
        results = [make_result(3.0, 6.0), make_result(1.0, 2.0), make_result(4.0, 4.0)]
        table = OutputFormatter.summarize_by_class(["tree", "cat", "tree"], make_evaluation(results))
        assert list(table["class"]) == ["cat", "tree"]
        tree = table[table["class"] == "tree"].iloc[0]
        assert tree["references"] == 2
        assert tree["mean_accumulated_reward"] == pytest.approx(3.5)
        assert tree["ratio"] == pytest.approx(3.5 / 5.0)

    def test_zero_max_reward_ratio(self):
        table = OutputFormatter.summarize_by_class(["blank"], make_evaluation([make_result(0.0, 0.0)]))
        assert table["ratio"].iloc[0] == 1.0

    def test_metrics_json(self, tmp_path):
        results = [make_result(3.0, 6.0), make_result(-1.0, 0.0)]
        metrics = OutputFormatter.evaluation_metrics(["cat", "blank"], make_evaluation(results))
        assert metrics["overall"]["count"] == 2
        path = tmp_path / "metrics.json"
        OutputFormatter.write_metrics(metrics, str(path))
        loaded = json.loads(path.read_text(encoding="utf-8"))
        blank = [row for row in loaded["per_class"] if row["class"] == "blank"][0]
        assert math.isinf(blank["ratio"]) and blank["ratio"] < 0
        assert loaded["overall"]["mean_accumulated_reward"] == pytest.approx(1.0)

    def test_curves_to_csv(self, tmp_path):
        pretrain_path = tmp_path / "pretrain_metrics.csv"
        OutputFormatter.write_pretrain_metrics(
            [{"epoch": 1, "loss": 2.0, "train_accuracy": 0.5, "val_accuracy": float("nan")}], str(pretrain_path))
        assert list(pd.read_csv(pretrain_path).columns) == ["epoch", "loss", "train_accuracy", "val_accuracy"]

        curve_path = tmp_path / "reward_curve.csv"
        OutputFormatter.write_reward_curve([{"frame": 10, "mean_reward": 1.0, "mean_pixel_reward": 2.0,
                                             "mean_penalty": -1.0, "mean_max_reward": 4.0, "loss": 0.1,
                                             "epsilon": 0.0, "stuck_rate": 0.25}], str(curve_path))
        frame = pd.read_csv(curve_path)
        assert frame["frame"].tolist() == [10]
        assert frame["stuck_rate"].iloc[0] == 0.25
