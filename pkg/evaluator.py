import dataclasses
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np

from canvas import Canvas
from env import EpisodeState, Observation, PaintingEnv
from errors import InvalidArgumentError
from models import ActionSpec, EnvConfig, EvaluationResult, Exploration, PenMode, RolloutResult
from network import QNetwork

logger = logging.getLogger(__name__)

# 策略: (观测, 环境, 随机数生成器) -> 动作编号
Policy = Callable[[Observation, PaintingEnv, np.random.Generator], int]


def unstuck_action(state: EpisodeState, spec: ActionSpec, side: int, rng: np.random.Generator) -> int:
    """卡住时的随机动作，排除会重现当前循环的动作"""
    positions = list(state.position_history)
    current = positions[-1]
    forbidden = current if len(set(positions)) == 1 else positions[-2]
    x, y = current
    candidates = []
    for index in range(spec.total):
        action = spec.decode(index)
        target = (min(max(x + action.dx, 0), side - 1), min(max(y + action.dy, 0), side - 1))
        if target != forbidden:
            candidates.append(index)
    return candidates[int(rng.integers(len(candidates)))]


def select_action(network: QNetwork, obs: Observation, state: EpisodeState, exploration: Exploration,
                  rng: np.random.Generator, spec: ActionSpec, epsilon: float = 0.0) -> int:
    """按探索策略选择动作

    rare: 贪心，只有笔卡住时才随机；naive: ε-贪心；greedy: 纯贪心（平局取最小编号）。
    """
    if exploration is Exploration.RARE and state.stuck:
        return unstuck_action(state, spec, obs.side, rng)
    if exploration is Exploration.NAIVE and rng.random() < epsilon:
        return int(rng.integers(spec.total))
    q = network.q_values([obs])[0]
    return int(np.argmax(q))


class QPolicy:
    """基于 Q 网络的策略（只读使用网络参数，可多线程共享）"""

    def __init__(self, network: QNetwork, exploration: Exploration = Exploration.RARE, epsilon: float = 0.0):
        self.network = network
        self.exploration = exploration
        self.epsilon = epsilon

    def __call__(self, obs: Observation, env: PaintingEnv, rng: np.random.Generator) -> int:
        return select_action(self.network, obs, env.state, self.exploration, rng, env.action_spec, self.epsilon)


class StationaryPolicy:
    """始终抬笔不动"""

    def __call__(self, obs: Observation, env: PaintingEnv, rng: np.random.Generator) -> int:
        return env.action_spec.index_of(0, 0, PenMode.UP)


def rollout(policy: Policy, reference: Canvas, env_config: EnvConfig, steps: Optional[int] = None,
            rng: Optional[np.random.Generator] = None, start: Optional[tuple[int, int]] = None) -> RolloutResult:
    """从空白画布展开策略 steps 步（默认 max_steps）"""
    config = dataclasses.replace(env_config, max_steps=steps) if steps else env_config
    rng = rng if rng is not None else np.random.default_rng(0)
    env = PaintingEnv(config)
    state = env.reset(reference, start)
    obs = env.observe()
    result = RolloutResult(frames=[], actions=[], rewards=[], pixel_rewards=[], penalties=[],
                           max_reward=state.similarity)
    done = False
    while not done:
        action = int(policy(obs, env, rng))
        obs, reward, done, breakdown = env.step(action)
        result.frames.append(state.canvas.pixels.copy())
        result.actions.append(action)
        result.rewards.append(reward)
        result.pixel_rewards.append(breakdown.pixel)
        result.penalties.append(breakdown.penalty)
    return result


def thread_count() -> int:
    """评估线程数，由环境变量 DOODLE_NUM_THREADS 控制"""
    try:
        return max(1, int(os.getenv("DOODLE_NUM_THREADS", "1")))
    except ValueError:
        logger.warning(f"DOODLE_NUM_THREADS 不是有效整数: {os.getenv('DOODLE_NUM_THREADS')}，使用1个线程")
        return 1


def evaluate(policy: Policy, references: Sequence[Canvas], env_config: EnvConfig,
             steps: Optional[int] = None, seed: int = 0, workers: Optional[int] = None) -> EvaluationResult:
    """在一组参考图像上展开策略并取平均"""
    if not references:
        raise InvalidArgumentError("参考图像列表为空")
    workers = workers or thread_count()

    def run(index: int) -> RolloutResult:
        return rollout(policy, references[index], env_config, steps, np.random.default_rng([seed, index]))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            results = list(executor.map(run, range(len(references))))
    else:
        results = [run(i) for i in range(len(references))]

    evaluation = EvaluationResult(
        mean_accumulated_reward=float(np.mean([r.accumulated_reward for r in results])),
        mean_max_reward=float(np.mean([r.max_reward for r in results])),
        mean_pixel_reward=float(np.mean([r.accumulated_pixel_reward for r in results])),
        mean_penalty=float(np.mean([r.accumulated_penalty for r in results])),
        per_reference=results,
    )
    logger.info(f"评估完成: {len(references)} 张参考图像, 平均累计奖励={evaluation.mean_accumulated_reward:.2f}, "
                f"平均最大奖励={evaluation.mean_max_reward:.2f}")
    return evaluation
