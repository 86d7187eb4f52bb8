# 命令行入口: synth | pretrain | train | rollout | eval
import logging
# 配置日志
logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

import argparse
import os
import sys
from typing import Any, Optional

import numpy as np

from config import RunConfig, echo_config, load_config
from container import load_checkpoint, load_demos, load_replay, save_checkpoint, save_demos, save_replay
from dataset_processor import (build_stroke_bank, load_reference_canvases, rasterize_drawings, split_by_class,
                               synthesize_dataset, synthesize_drawing_dataset, validate_dataset_path)
from diagnostics import print_env_info, write_env_info
from drawing_fetcher import DrawingFetcher
from errors import (ConfigMismatchError, DataFormatError, DatasetIOError, EmptyDatasetError, InvalidArgumentError,
                    TrainingDivergedError, UsageError)
from evaluator import QPolicy, StationaryPolicy, evaluate, rollout
from input_handler import InputHandler
from models import DemoSource, EnvConfig, Exploration, RLConfig
from network import QNetwork
from output_formatter import OutputFormatter
from replay_memory import PrioritizedReplayMemory
from trainer import pretrain, train_rl

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_DATA_FORMAT = 3

DEMOS_NAME = "demos.sdqd"
PRETRAINED_NAME = "pretrained.sdqw"
TRAINED_NAME = "trained.sdqw"
REPLAY_NAME = "replay.sdqr"


def _prepare_run(config: RunConfig) -> np.random.Generator:
    """写出配置与运行环境，返回按种子初始化的随机数生成器"""
    echo_config(config, config.output_dir)
    write_env_info(os.path.join(config.output_dir, "environment.txt"))
    return np.random.default_rng(config.seed)


def _require_path(path: Optional[str], description: str) -> str:
    valid, message = validate_dataset_path(path, description)
    if not valid:
        raise DatasetIOError(message, path=path)
    return path


def _checkpoint_metadata(config: RunConfig, stage: str, network: QNetwork) -> dict[str, Any]:
    return {
        "stage": stage,
        "medium": config.medium.value,
        "side": config.side,
        "history_frames": config.history_frames,
        "patch_size": config.patch_size,
        "conv_preset": config.conv_preset,
        "use_local_stream": network.uses_local_stream,
        "seed": config.seed,
    }


def _check_checkpoint(network: QNetwork, meta: dict[str, Any], env_config: EnvConfig, path: str) -> None:
    """检查点必须与当前介质和画布尺寸一致"""
    medium = meta.get("medium")
    if medium is not None and medium != env_config.media.value:
        raise ConfigMismatchError(f"检查点介质 {medium} 与配置 {env_config.media.value} 不一致: {path}")
    if network.global_shape != env_config.global_shape:
        raise ConfigMismatchError(
            f"检查点全局输入 {network.global_shape} 与配置 {env_config.global_shape} 不一致: {path}")
    if network.local_shape is not None and network.local_shape != env_config.local_shape:
        raise ConfigMismatchError(
            f"检查点局部输入 {network.local_shape} 与配置 {env_config.local_shape} 不一致: {path}")
    if network.n_actions != env_config.action_spec.total:
        raise ConfigMismatchError(f"检查点动作数 {network.n_actions} 与配置 {env_config.action_spec.total} 不一致")


def _load_network(path: Optional[str], env_config: EnvConfig) -> QNetwork:
    path = _require_path(path, "检查点文件")
    network, meta = load_checkpoint(path)
    _check_checkpoint(network, meta, env_config, path)
    return network


def _training_drawings(config: RunConfig):
    path = _require_path(config.quickdraw_path, "QuickDraw数据路径")
    classes = InputHandler.parse_class_list(config.classes) if config.classes is not None else None
    drawings = DrawingFetcher(path).fetch_drawings(classes)
    train, _ = split_by_class(drawings, config.holdout_class, config.per_class)
    return train


def cmd_synth(config: RunConfig, output: Optional[str]) -> str:
    """生成示范数据集"""
    rng = _prepare_run(config)
    env_config = config.env_config()
    if config.demo_source is DemoSource.QUICKDRAW:
        dataset = synthesize_drawing_dataset(_training_drawings(config), env_config, config.episodes, rng)
    else:
        drawings = _training_drawings(config) if config.quickdraw_path else []
        if not drawings and config.procedural_strokes == 0:
            raise DatasetIOError("没有可用的笔画来源：请配置 QUICKDRAW_PATH 或 PROCEDURAL_STROKES",
                                 path=config.quickdraw_path)
        bank = build_stroke_bank(drawings, config.procedural_strokes, rng, config.side, config.min_stroke_extent)
        dataset = synthesize_dataset(bank, env_config, config.episodes, rng, config.strokes_per_episode)
    path = output or os.path.join(config.output_dir, DEMOS_NAME)
    save_demos(path, dataset)
    print(f"已生成 {len(dataset.episodes)} 个示范回合，共 {len(dataset.samples)} 个样本: {path}")
    return path


def cmd_pretrain(config: RunConfig) -> str:
    """监督预训练，写出检查点与准确率 CSV"""
    demo_path = _require_path(config.demo_path, "示范数据文件")
    rng = _prepare_run(config)
    env_config = config.env_config()
    dataset = load_demos(demo_path, config.history_frames)
    if dataset.media is not config.medium or dataset.side != config.side:
        raise ConfigMismatchError(
            f"示范数据({dataset.media.value}, {dataset.side})与配置({config.medium.value}, {config.side})不一致")
    network, metrics = pretrain(dataset.samples, config.pretrain_config(), env_config, rng,
                                preset=config.conv_preset, hidden_width=config.hidden_width,
                                use_local_stream=config.use_local_stream)
    path = os.path.join(config.output_dir, PRETRAINED_NAME)
    save_checkpoint(path, network, _checkpoint_metadata(config, "pretrain", network))
    OutputFormatter.write_pretrain_metrics(metrics, os.path.join(config.output_dir, "pretrain_metrics.csv"))
    return path


def _replay_memory(config: RunConfig, rl_config: RLConfig, env_config: EnvConfig) -> PrioritizedReplayMemory:
    """续训时载入回放快照，否则新建空的回放"""
    if not config.replay_path:
        return PrioritizedReplayMemory(rl_config.replay_capacity, rl_config.per_alpha, rl_config.per_epsilon)
    memory = load_replay(_require_path(config.replay_path, "回放快照文件"), env_config)
    if memory.capacity != rl_config.replay_capacity:
        raise ConfigMismatchError(
            f"回放快照容量 {memory.capacity} 与 REPLAY_CAPACITY {rl_config.replay_capacity} 不一致")
    logger.info(f"从回放快照继续: {config.replay_path}（{len(memory)} 条转移）")
    return memory


def cmd_train(config: RunConfig) -> str:
    """Double DQN 训练，写出检查点与奖励曲线 CSV"""
    env_config = config.env_config()
    references = rasterize_drawings(_training_drawings(config), env_config)
    if not references:
        raise EmptyDatasetError("训练集为空（可能所有涂鸦都属于保留类别）")
    rng = _prepare_run(config)

    if config.use_pretrained_init and config.init_checkpoint:
        init = _load_network(config.init_checkpoint, env_config)
        if init.uses_local_stream != config.use_local_stream:
            raise ConfigMismatchError("初始检查点的局部流设置与 USE_LOCAL_STREAM 不一致")
        logger.info(f"使用预训练权重初始化: {config.init_checkpoint}")
    else:
        if config.init_checkpoint:
            logger.warning("已关闭预训练初始化，忽略初始检查点")
        init = QNetwork.build(env_config, config.conv_preset, config.hidden_width, config.use_local_stream, rng)
        logger.info("使用随机权重初始化")

    rl_config = config.rl_config()
    memory = _replay_memory(config, rl_config, env_config)
    network, curve = train_rl(init, references, rl_config, env_config, rng, memory=memory)
    path = os.path.join(config.output_dir, TRAINED_NAME)
    save_checkpoint(path, network, _checkpoint_metadata(config, "train", network))
    if config.save_replay:
        save_replay(os.path.join(config.output_dir, REPLAY_NAME), memory, env_config)
    OutputFormatter.write_reward_curve(curve, os.path.join(config.output_dir, "reward_curve.csv"))
    return path


def _policy(env_config: EnvConfig, checkpoint: Optional[str], stationary: bool):
    if stationary:
        return StationaryPolicy()
    return QPolicy(_load_network(checkpoint, env_config), Exploration.RARE)


def cmd_rollout(config: RunConfig, checkpoint: Optional[str], reference: str, stationary: bool,
                save_frames: bool) -> str:
    """从空白画布展开策略，写出 PNG 与 JSON lines 动作日志"""
    env_config = config.env_config()
    policy = _policy(env_config, checkpoint, stationary)
    label, canvas = InputHandler.resolve_reference(reference, env_config, config.quickdraw_path)
    rng = _prepare_run(config)
    result = rollout(policy, canvas, env_config, config.eval_steps, rng)
    directory = os.path.join(config.output_dir, "rollout", label)
    OutputFormatter.save_rollout_images(result, env_config.media, directory, save_frames=save_frames)
    OutputFormatter.write_action_log(result, env_config.action_spec, os.path.join(directory, "actions.jsonl"))
    print(f"累计奖励 {result.accumulated_reward:.2f} / 最大奖励 {result.max_reward:.2f}: {directory}")
    return directory


def cmd_eval(config: RunConfig, checkpoint: Optional[str], stationary: bool) -> str:
    """在指定类别上评估，写出按类别汇总的指标 JSON"""
    env_config = config.env_config()
    classes = InputHandler.parse_class_list(config.classes) if config.classes is not None else None
    policy = _policy(env_config, checkpoint, stationary)
    path = _require_path(config.quickdraw_path, "QuickDraw数据路径")
    labelled = load_reference_canvases(path, env_config, classes, config.per_class)
    _prepare_run(config)
    labels = [label for label, _ in labelled]
    evaluation = evaluate(policy, [canvas for _, canvas in labelled], env_config, config.eval_steps, config.seed)
    metrics_path = os.path.join(config.output_dir, "metrics.json")
    OutputFormatter.write_metrics(OutputFormatter.evaluation_metrics(labels, evaluation), metrics_path)
    OutputFormatter.print_evaluation(OutputFormatter.summarize_by_class(labels, evaluation))
    return metrics_path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="doodle-painter", description="笔画级涂鸦绘制智能体")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="KEY=value 格式的配置文件")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--medium", choices=["sketch", "color_sketch", "watercolor"])
    common.add_argument("--side", type=int)
    common.add_argument("--quickdraw", dest="quickdraw_path", help="QuickDraw NDJSON 文件或目录")
    common.add_argument("--classes", help="逗号分隔的类别列表")
    common.add_argument("--per-class", dest="per_class", type=int)
    common.add_argument("--verbose", action="store_true", help="输出 DEBUG 日志")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", parents=[common], help="生成示范数据集")
    synth.add_argument("--source", dest="demo_source", choices=["strokes", "quickdraw"],
                       help="strokes: 随机放置笔画库中的笔画；quickdraw: 整幅涂鸦")
    synth.add_argument("--episodes", type=int)
    synth.add_argument("--strokes-per-episode", dest="strokes_per_episode", type=int)
    synth.add_argument("--procedural-strokes", dest="procedural_strokes", type=int)
    synth.add_argument("--out", help="输出文件（默认 <output-dir>/demos.sdqd）")

    pre = sub.add_parser("pretrain", parents=[common], help="监督预训练")
    pre.add_argument("--demos", dest="demo_path")
    pre.add_argument("--epochs", dest="pretrain_epochs", type=int)
    pre.add_argument("--global-only", dest="use_local_stream", action="store_const", const=False)

    train = sub.add_parser("train", parents=[common], help="Double DQN 训练")
    train.add_argument("--init", dest="init_checkpoint")
    train.add_argument("--frames", dest="total_frames", type=int)
    train.add_argument("--no-pretrain", dest="use_pretrained_init", action="store_const", const=False)
    train.add_argument("--exploration", choices=["rare", "naive", "greedy"])
    train.add_argument("--global-only", dest="use_local_stream", action="store_const", const=False)
    train.add_argument("--replay", dest="replay_path", help="续训时载入的回放快照")
    train.add_argument("--save-replay", dest="save_replay", action="store_const", const=True,
                       help="训练结束后写出回放快照")

    for name, help_text in (("rollout", "展开策略并保存图像"), ("eval", "在参考图像集上评估")):
        command = sub.add_parser(name, parents=[common], help=help_text)
        command.add_argument("--checkpoint")
        command.add_argument("--stationary", action="store_true", help="使用抬笔不动的策略")
        command.add_argument("--steps", dest="eval_steps", type=int)
        if name == "rollout":
            command.add_argument("--reference", required=True, help="PNG 路径或'类别:序号'")
            command.add_argument("--frames", dest="save_frames", action="store_true", help="保存逐步帧")
    return parser


_NON_CONFIG_ARGS = {"command", "config", "verbose", "out", "checkpoint", "stationary", "reference", "save_frames"}


def _overrides(args: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k not in _NON_CONFIG_ARGS and v is not None}


def run(args: argparse.Namespace) -> None:
    config = load_config(args.config, _overrides(args))
    if args.command == "synth":
        cmd_synth(config, args.out)
    elif args.command == "pretrain":
        cmd_pretrain(config)
    elif args.command == "train":
        cmd_train(config)
    elif args.command == "rollout":
        cmd_rollout(config, args.checkpoint, args.reference, args.stationary, args.save_frames)
    elif args.command == "eval":
        cmd_eval(config, args.checkpoint, args.stationary)


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
        print_env_info()

    try:
        run(args)
        return EXIT_OK
    except (UsageError, InvalidArgumentError) as e:
        logger.error(f"用法错误: {str(e)}")
        return EXIT_USAGE
    except DatasetIOError as e:
        logger.error(f"文件错误: {str(e)}")
        return EXIT_USAGE
    except DataFormatError as e:
        logger.error(f"数据格式错误: {str(e)}")
        return EXIT_DATA_FORMAT
    except (TrainingDivergedError, ConfigMismatchError) as e:
        logger.error(f"运行失败: {str(e)}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.error(f"运行出错: {str(e)}", exc_info=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
