"""桌面规模的端到端验收测试，耗时较长（约一到两小时），用 pytest -m slow 运行"""
import numpy as np
import pytest

from canvas import Canvas
from dataset_processor import build_stroke_bank, synthesize_dataset
from evaluator import QPolicy, StationaryPolicy, evaluate
from models import EnvConfig, Exploration, MediaType, PretrainConfig, RLConfig
from network import QNetwork
from trainer import EVAL_SEED, pretrain, train_rl

pytestmark = pytest.mark.slow

DEMO_SAMPLES = 5_000
RL_FRAMES = 20_000
SEEDS = [0, 1, 2]


def references_of(dataset, config):
    return [Canvas(config.side, config.media, episode[0].reference) for episode in dataset.episodes if episode]


@pytest.fixture(scope="module")
def desk():
    """28×28 素描环境、程序笔画库、5000 个示范样本，以及单笔画的训练与评估参考图像"""
    config = EnvConfig(side=28, media=MediaType.SKETCH, max_steps=25)
    bank = build_stroke_bank([], procedural_count=500, rng=np.random.default_rng(0), side=28)
    demos = synthesize_dataset(bank, config, 900, np.random.default_rng(1)).samples
    assert len(demos) >= DEMO_SAMPLES
    train = references_of(synthesize_dataset(bank, config, 200, np.random.default_rng(2), n_strokes=1), config)
    held_out = references_of(synthesize_dataset(bank, config, 20, np.random.default_rng(3), n_strokes=1), config)
    return config, demos[:DEMO_SAMPLES], train, held_out


@pytest.fixture(scope="module")
def pretrained(desk):
    config, demos, _, _ = desk
    cfg = PretrainConfig(batch_size=32, learning_rate=1e-3, epochs=20, val_fraction=0.1, lr_decay_every=1_000)
    return pretrain(demos, cfg, config, np.random.default_rng(4))


def rl_config(exploration: Exploration) -> RLConfig:
    return RLConfig(total_frames=RL_FRAMES, replay_capacity=RL_FRAMES, batch_size=32, warmup_frames=1_000,
                    target_sync_period=500, exploration=exploration, epsilon_decay_frames=RL_FRAMES // 2,
                    learning_rate=1e-3, eval_every=0)


@pytest.fixture(scope="module")
def stage_rewards(desk, pretrained):
    """每个种子下四种训练方式在评估集上的平均累计奖励"""
    config, _, train, held_out = desk
    network, _ = pretrained
    frozen = evaluate(QPolicy(network, Exploration.RARE), held_out, config, seed=EVAL_SEED)
    rewards = {"pretrained_rl": [], "pretrained": [], "scratch_rare": [], "scratch_naive": []}
    for seed in SEEDS:
        rewards["pretrained"].append(frozen.mean_accumulated_reward)
        arms = [
            ("pretrained_rl", network, Exploration.RARE),
            ("scratch_rare", QNetwork.build(config, rng=np.random.default_rng(seed)), Exploration.RARE),
            ("scratch_naive", QNetwork.build(config, rng=np.random.default_rng(seed)), Exploration.NAIVE),
        ]
        for name, init, exploration in arms:
            _, curve = train_rl(init, train, rl_config(exploration), config, np.random.default_rng(100 + seed),
                                eval_references=held_out)
            assert curve[-1]["frame"] == RL_FRAMES
            rewards[name].append(curve[-1]["mean_reward"])
    return rewards


def test_pretraining_reaches_high_accuracy(pretrained):
    _, metrics = pretrained
    assert len(metrics) == 20
    assert max(row["val_accuracy"] for row in metrics) >= 0.9
    assert metrics[-1]["loss"] < metrics[0]["loss"]


def test_pretrained_agent_draws_better_than_random(desk, pretrained):
    config, _, _, held_out = desk
    network, _ = pretrained
    random_init = QNetwork.build(config, rng=np.random.default_rng(4))
    trained = evaluate(QPolicy(network), held_out, config)
    untrained = evaluate(QPolicy(random_init), held_out, config)
    still = evaluate(StationaryPolicy(), held_out, config)
    assert trained.mean_pixel_reward > 0.0
    assert trained.mean_accumulated_reward > untrained.mean_accumulated_reward
    assert trained.mean_accumulated_reward > still.mean_accumulated_reward


def test_stage_ordering(stage_rewards):
    means = {name: float(np.mean(values)) for name, values in stage_rewards.items()}
    assert means["pretrained_rl"] > means["pretrained"] > means["scratch_rare"] > means["scratch_naive"]


def test_rl_improves_on_frozen_pretrained(stage_rewards):
    # 第一个种子的单次训练
    assert stage_rewards["pretrained_rl"][0] > stage_rewards["pretrained"][0]


def test_short_rl_run_stays_finite(desk, pretrained):
    config, _, train, _ = desk
    network, _ = pretrained
    cfg = RLConfig(total_frames=400, replay_capacity=400, batch_size=16, warmup_frames=100,
                   target_sync_period=50, eval_every=200, eval_set_size=4, learning_rate=1e-3)
    tuned, curve = train_rl(network, train, cfg, config, np.random.default_rng(5))
    assert [row["frame"] for row in curve] == [200, 400]
    assert all(np.isfinite(row["mean_reward"]) for row in curve)
    assert all(np.all(np.isfinite(value)) for value in tuned.params.values())
