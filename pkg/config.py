import os
import logging
from enum import Enum
from typing import Any, Optional

from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from errors import DatasetIOError, UsageError
from models import DemoSource, EnvConfig, Exploration, MediaType, PretrainConfig, RewardParams, RLConfig

logger = logging.getLogger(__name__)

# 加载.env文件（DOODLE_NUM_THREADS 等环境变量）
load_dotenv()

CONFIG_ECHO_NAME = "run_config.env"


class RunConfig(BaseModel):
    """一次运行的完整配置，可由 KEY=value 配置文件加载，命令行参数覆盖文件取值"""
    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    # 环境
    medium: MediaType = MediaType.SKETCH
    side: int = Field(84, ge=16)
    max_steps: int = Field(100, ge=1)
    patch_size: int = Field(11, ge=1)
    history_frames: int = Field(1, ge=1)

    # 数据路径
    quickdraw_path: Optional[str] = None
    demo_path: Optional[str] = None
    init_checkpoint: Optional[str] = None
    replay_path: Optional[str] = None  # 续训时载入的回放快照
    output_dir: str = "runs/default"
    classes: Optional[str] = None  # 逗号分隔的类别列表
    holdout_class: str = "house"
    per_class: int = Field(200, ge=1)

    # 示范数据生成
    demo_source: DemoSource = DemoSource.STROKES
    episodes: int = Field(1000, ge=1)
    strokes_per_episode: int = Field(2, ge=1)
    procedural_strokes: int = Field(500, ge=0)
    min_stroke_extent: int = Field(5, ge=1)

    # 网络
    conv_preset: str = "auto"
    hidden_width: int = Field(512, ge=1)

    # 奖励
    step_penalty: float = Field(-1.0, le=0.0)
    color_penalty: float = Field(-5.0, le=0.0)
    beta: Optional[int] = None  # 空表示按介质取默认值
    min_draw_step: int = Field(5, ge=0)

    # 预训练
    pretrain_batch_size: int = Field(128, ge=1)
    pretrain_learning_rate: float = Field(1e-3, gt=0.0)
    pretrain_epochs: int = Field(20, ge=0)
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    pretrain_lr_decay_every: int = Field(1_000, ge=0)
    pretrain_augment: bool = True

    # 强化学习
    total_frames: int = Field(600_000, ge=0)
    replay_capacity: int = Field(20_000, ge=1)
    batch_size: int = Field(32, ge=1)
    gamma: float = Field(0.99, gt=0.0, lt=1.0)
    target_sync_period: int = Field(1_000, ge=1)
    warmup_frames: int = Field(2_000, ge=0)
    exploration: Exploration = Exploration.RARE
    epsilon_start: float = 1.0
    epsilon_end: float = 0.1
    epsilon_decay_frames: int = 50_000
    learning_rate: float = Field(1e-3, gt=0.0)
    per_alpha: float = 0.6
    per_epsilon: float = Field(0.01, gt=0.0)
    per_beta_start: float = 0.4
    per_beta_end: float = 1.0
    eval_every: int = Field(10_000, ge=0)
    eval_set_size: int = Field(16, ge=1)
    use_local_stream: bool = True
    use_pretrained_init: bool = True
    save_replay: bool = False

    # 优化器（lr_decay_every 只用于强化学习）
    lr_decay_every: int = 50_000
    lr_decay_factor: float = 0.5
    grad_clip: Optional[float] = None

    # 评估与复现
    eval_steps: int = Field(100, ge=1)
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self) -> "RunConfig":
        if self.warmup_frames > self.replay_capacity:
            raise ValueError(f"warmup_frames ({self.warmup_frames}) 不能大于 replay_capacity ({self.replay_capacity})")
        if self.beta is not None and self.beta not in (0, 1):
            raise ValueError(f"beta 只能是 0 或 1: {self.beta}")
        return self

    def reward_params(self) -> RewardParams:
        params = RewardParams.for_media(self.medium, self.step_penalty, self.color_penalty, self.min_draw_step)
        if self.beta is not None:
            params.beta = self.beta
        return params

    def env_config(self) -> EnvConfig:
        return EnvConfig(side=self.side, media=self.medium, max_steps=self.max_steps, patch_size=self.patch_size,
                         history_frames=self.history_frames, reward=self.reward_params())

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(batch_size=self.pretrain_batch_size, learning_rate=self.pretrain_learning_rate,
                              epochs=self.pretrain_epochs, val_fraction=self.val_fraction,
                              lr_decay_every=self.pretrain_lr_decay_every, lr_decay_factor=self.lr_decay_factor,
                              grad_clip=self.grad_clip, augment=self.pretrain_augment)

    def rl_config(self) -> RLConfig:
        return RLConfig(
            total_frames=self.total_frames, replay_capacity=self.replay_capacity, batch_size=self.batch_size,
            gamma=self.gamma, target_sync_period=self.target_sync_period, warmup_frames=self.warmup_frames,
            exploration=self.exploration, epsilon_start=self.epsilon_start, epsilon_end=self.epsilon_end,
            epsilon_decay_frames=self.epsilon_decay_frames, learning_rate=self.learning_rate,
            lr_decay_every=self.lr_decay_every, lr_decay_factor=self.lr_decay_factor, grad_clip=self.grad_clip,
            per_alpha=self.per_alpha, per_epsilon=self.per_epsilon, per_beta_start=self.per_beta_start,
            per_beta_end=self.per_beta_end, eval_every=self.eval_every, eval_set_size=self.eval_set_size,
        )


def _normalize_keys(values: dict[str, Optional[str]], source: str) -> dict[str, Any]:
    fields = RunConfig.model_fields
    normalized = {}
    for key, value in values.items():
        name = key.strip().lower()
        if name not in fields:
            raise UsageError(f"配置文件 {source} 中有未知的配置项: {key}")
        # 空值表示使用 None
        normalized[name] = None if value is None or value == "" else value
    return normalized


def load_config(path: Optional[str] = None, overrides: Optional[dict[str, Any]] = None) -> RunConfig:
    """加载运行配置: 默认值 < 配置文件 < 命令行覆盖"""
    values: dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            logger.error(f"配置文件不存在: {path}")
            raise DatasetIOError(f"配置文件不存在: {path}", path=path)
        values.update(_normalize_keys(dotenv_values(path), path))
        logger.info(f"已加载配置文件: {path}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in RunConfig.model_fields:
            raise UsageError(f"未知的配置项: {key}")
        values[key] = value
    # 文件中的空值交给字段默认值处理，除非字段本身允许 None
    values = {k: v for k, v in values.items()
              if v is not None or RunConfig.model_fields[k].default is None}
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise UsageError(f"配置无效: {e}") from e


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, Enum):
        return value.value
    return str(value)


def echo_config(config: RunConfig, run_dir: str) -> str:
    """把完整配置写入运行目录，重新加载后与原配置相等"""
    os.makedirs(run_dir, exist_ok=True)
    path = os.path.join(run_dir, CONFIG_ECHO_NAME)
    lines = [f"{name.upper()}={_format_value(getattr(config, name))}" for name in RunConfig.model_fields]
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"配置已写入: {path}")
    return path
