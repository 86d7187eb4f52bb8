"""两阶段训练：示范笔画上的监督预训练，然后用带优先经验回放的 Double DQN 微调"""
import logging
from typing import Any, Optional, Sequence

import numpy as np

from canvas import Canvas
from demo_synthesizer import SYMMETRIES, demo_observation, symmetry_variant
from env import PaintingEnv
from errors import InvalidArgumentError, TrainingDivergedError
from evaluator import QPolicy, evaluate, select_action
from models import ActionSpec, DemoSample, EnvConfig, Exploration, PretrainConfig, RLConfig, Transition
from network import QNetwork, softmax_cross_entropy
from optimizer import AdamState, adam_step
from replay_memory import PrioritizedReplayMemory

logger = logging.getLogger(__name__)

EVAL_SEED = 0


def _accuracy(network: QNetwork, observations: list, labels: np.ndarray, batch_size: int) -> float:
    if not observations:
        return float("nan")
    correct = 0
    for start in range(0, len(observations), batch_size):
        q = network.q_values(observations[start:start + batch_size])
        correct += int(np.sum(np.argmax(q, axis=1) == labels[start:start + batch_size]))
    return correct / len(observations)


def _augment(observations: list, labels: np.ndarray, spec: ActionSpec,
             rng: np.random.Generator) -> tuple[list, np.ndarray]:
    """每个样本随机取一个对称变换，观测与标签动作一起变换"""
    variants = [symmetry_variant(obs, int(label), spec, int(k))
                for obs, label, k in zip(observations, labels, rng.integers(0, SYMMETRIES, size=len(labels)))]
    return [obs for obs, _ in variants], np.array([label for _, label in variants], dtype=np.int64)


def pretrain(demos: Sequence[DemoSample], cfg: PretrainConfig, env_config: EnvConfig,
             rng: np.random.Generator, network: Optional[QNetwork] = None,
             preset: str = "auto", hidden_width: int = 512,
             use_local_stream: bool = True) -> tuple[QNetwork, list[dict[str, Any]]]:
    """把动作预测当作分类问题，用 softmax 交叉熵监督训练 Q 网络

    返回训练后的网络和每个 epoch 的指标 (epoch, loss, train_accuracy, val_accuracy)。
    准确率在未变换的样本上计算。
    """
    if not demos:
        raise InvalidArgumentError("示范数据为空，无法预训练")
    if network is None:
        network = QNetwork.build(env_config, preset, hidden_width, use_local_stream, rng)
    observations = [demo_observation(sample, env_config) for sample in demos]
    labels = np.array([sample.action for sample in demos], dtype=np.int64)

    order = rng.permutation(len(demos))
    n_val = int(round(len(demos) * cfg.val_fraction))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        raise InvalidArgumentError(f"验证集比例 {cfg.val_fraction} 过大，训练集为空")
    logger.info(f"开始预训练: 训练样本 {len(train_idx)}，验证样本 {len(val_idx)}，共 {cfg.epochs} 个 epoch")

    spec = env_config.action_spec
    adam = AdamState.for_params(network.params, learning_rate=cfg.learning_rate, decay_every=cfg.lr_decay_every,
                                decay_factor=cfg.lr_decay_factor, grad_clip=cfg.grad_clip)
    metrics = []
    for epoch in range(1, cfg.epochs + 1):
        shuffled = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(shuffled), cfg.batch_size):
            batch = shuffled[start:start + cfg.batch_size]
            batch_observations = [observations[i] for i in batch]
            batch_labels = labels[batch]
            if cfg.augment:
                batch_observations, batch_labels = _augment(batch_observations, batch_labels, spec, rng)
            q, cache = network.forward(*network.observation_batch(batch_observations))
            loss, grad_q = softmax_cross_entropy(q, batch_labels)
            if not np.isfinite(loss):
                logger.error(f"预训练第 {epoch} 个 epoch 损失发散: {loss}")
                raise TrainingDivergedError(f"预训练损失出现非有限值（epoch {epoch}）")
            adam_step(network.params, network.backward(cache, grad_q), adam)
            losses.append(loss * len(batch))

        train_accuracy = _accuracy(network, [observations[i] for i in train_idx], labels[train_idx], cfg.batch_size)
        val_accuracy = _accuracy(network, [observations[i] for i in val_idx], labels[val_idx], cfg.batch_size)
        row = {
            "epoch": epoch,
            "loss": float(sum(losses) / len(train_idx)),
            "train_accuracy": train_accuracy,
            "val_accuracy": val_accuracy,
        }
        metrics.append(row)
        logger.info(f"预训练 epoch {epoch}: loss={row['loss']:.4f}, 训练准确率={train_accuracy:.3f}, "
                    f"验证准确率={val_accuracy:.3f}")
    return network, metrics


def ddqn_update(online: QNetwork, target: QNetwork, batch: Sequence[tuple[Transition, float]],
                gamma: float) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Double DQN 更新：在线网络选 s' 的动作，目标网络给出该动作的价值

    返回 (加权均方 TD 损失, |TD 误差|, 在线网络梯度)。终止转移的目标值就是奖励本身。
    """
    if not batch:
        raise InvalidArgumentError("批次为空")
    transitions = [t for t, _ in batch]
    weights = np.array([w for _, w in batch], dtype=np.float64)
    actions = np.array([t.action for t in transitions], dtype=np.int64)
    rewards = np.array([t.reward for t in transitions], dtype=np.float64)
    terminal = np.array([t.terminal for t in transitions], dtype=bool)
    rows = np.arange(len(transitions))

    next_global, next_local = online.observation_batch([t.next_obs for t in transitions])
    best = np.argmax(online.predict(next_global, next_local), axis=1)
    bootstrap = target.predict(next_global, next_local)[rows, best]
    y = rewards + gamma * np.where(terminal, 0.0, bootstrap)
    if not np.all(np.isfinite(y)):
        logger.error("DDQN 目标值出现非有限值")
        raise TrainingDivergedError("DDQN 目标值出现非有限值")

    q, cache = online.forward(*online.observation_batch([t.obs for t in transitions]))
    td = y - q[rows, actions]
    loss = float(np.mean(weights * td ** 2))
    grad_q = np.zeros_like(q)
    grad_q[rows, actions] = -2.0 * weights * td / len(transitions)
    return loss, np.abs(td), online.backward(cache, grad_q)


def train_rl(init: QNetwork, references: Sequence[Canvas], cfg: RLConfig, env_config: EnvConfig,
             rng: np.random.Generator,
             eval_references: Optional[Sequence[Canvas]] = None,
             memory: Optional[PrioritizedReplayMemory] = None) -> tuple[QNetwork, list[dict[str, Any]]]:
    """Double DQN + 优先经验回放训练

    每个回合随机抽一张参考图像，从空白画布开始；预热之后每步做一次更新，
    每 target_sync_period 次更新同步目标网络，每 eval_every 帧在评估集上评估一次。
    传入 memory 时在已有的回放内容上继续训练，训练结束后其中保留本次的转移。
    """
    if not references:
        raise InvalidArgumentError("参考图像列表为空")
    online = init.clone()
    curve: list[dict[str, Any]] = []
    if cfg.total_frames == 0:
        logger.info("total_frames=0，直接返回初始网络")
        return online, curve

    target = online.clone()
    if memory is None:
        memory = PrioritizedReplayMemory(cfg.replay_capacity, cfg.per_alpha, cfg.per_epsilon)
    adam = AdamState.for_params(online.params, learning_rate=cfg.learning_rate, decay_every=cfg.lr_decay_every,
                                decay_factor=cfg.lr_decay_factor, grad_clip=cfg.grad_clip)
    env = PaintingEnv(env_config)
    spec = env.action_spec
    if not eval_references:
        eval_references = [references[i] for i in rng.permutation(len(references))[:cfg.eval_set_size]]
    logger.info(f"开始强化学习: {cfg.total_frames} 帧，{len(references)} 张参考图像，探索方式 {cfg.exploration.value}")

    frame = 0
    updates = 0
    window_losses: list[float] = []
    window_stuck = 0
    window_frames = 0
    episodes = 0

    def record(frame_index: int) -> None:
        nonlocal window_losses, window_stuck, window_frames
        result = evaluate(QPolicy(online, Exploration.RARE), eval_references, env_config, seed=EVAL_SEED)
        row = {
            "frame": frame_index,
            "mean_reward": result.mean_accumulated_reward,
            "mean_pixel_reward": result.mean_pixel_reward,
            "mean_penalty": result.mean_penalty,
            "mean_max_reward": result.mean_max_reward,
            "loss": float(np.mean(window_losses)) if window_losses else float("nan"),
            "epsilon": cfg.epsilon_at(frame_index) if cfg.exploration is Exploration.NAIVE else 0.0,
            "stuck_rate": window_stuck / window_frames if window_frames else 0.0,
        }
        curve.append(row)
        logger.info(f"第 {frame_index} 帧评估: 平均累计奖励={row['mean_reward']:.2f}, loss={row['loss']:.4f}, "
                    f"卡住比例={row['stuck_rate']:.3f}")
        window_losses, window_stuck, window_frames = [], 0, 0

    while frame < cfg.total_frames:
        reference = references[int(rng.integers(len(references)))]
        state = env.reset(reference)
        obs = env.observe()
        episodes += 1
        done = False
        while not done and frame < cfg.total_frames:
            epsilon = cfg.epsilon_at(frame)
            window_stuck += int(state.stuck)
            action = select_action(online, obs, state, cfg.exploration, rng, spec, epsilon)
            next_obs, reward, done, _ = env.step(action)
            memory.insert(Transition(obs=obs, action=action, reward=reward, next_obs=next_obs, terminal=done))
            frame += 1
            window_frames += 1

            if frame >= cfg.warmup_frames and len(memory) >= cfg.batch_size:
                samples = memory.sample(cfg.batch_size, cfg.per_beta_at(frame), rng)
                loss, td_errors, grads = ddqn_update(
                    online, target, [(t, w) for t, _, w in samples], cfg.gamma)
                adam_step(online.params, grads, adam)
                memory.update_batch([i for _, i, _ in samples], td_errors)
                window_losses.append(loss)
                updates += 1
                if updates % cfg.target_sync_period == 0:
                    target = online.clone()
                    logger.debug(f"第 {updates} 次更新，同步目标网络")

            if cfg.eval_every and frame % cfg.eval_every == 0:
                record(frame)
            obs = next_obs

    if not curve or curve[-1]["frame"] != frame:
        record(frame)
    logger.info(f"强化学习结束: {frame} 帧，{episodes} 个回合，{updates} 次更新")
    return online, curve
