"""二进制容器：示范数据集 (SDQD)、网络检查点 (SDQW) 与经验回放快照 (SDQR)

三种容器均以4字节魔数 + u16 版本号开头，随后是长度前缀的记录，整数一律小端序。
相同内容总是写出相同的字节。
"""
import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from demo_synthesizer import attach_history
from env import Observation
from errors import ConfigMismatchError, DataFormatError, DatasetIOError, InvalidArgumentError
from models import DemoSample, EnvConfig, MediaType, PenState, Transition
from network import QNetwork
from replay_memory import PrioritizedReplayMemory

logger = logging.getLogger(__name__)

DEMO_MAGIC = b"SDQD"
WEIGHTS_MAGIC = b"SDQW"
REPLAY_MAGIC = b"SDQR"
FORMAT_VERSION = 1

_MEDIA_CODES = list(MediaType)


@dataclass
class DemoDataset:
    """按回合组织的示范数据"""
    media: MediaType
    side: int
    episodes: list[list[DemoSample]] = field(default_factory=list)

    @property
    def samples(self) -> list[DemoSample]:
        return [sample for episode in self.episodes for sample in episode]


class _Reader:
    def __init__(self, data: bytes, path):
        self.buffer = io.BytesIO(data)
        self.path = path

    def read(self, size: int) -> bytes:
        chunk = self.buffer.read(size)
        if len(chunk) != size:
            raise DataFormatError(f"文件被截断: {self.path}")
        return chunk

    def unpack(self, fmt: str):
        values = struct.unpack(fmt, self.read(struct.calcsize(fmt)))
        return values[0] if len(values) == 1 else values

    def at_end(self) -> bool:
        return self.buffer.tell() == len(self.buffer.getbuffer())


def _read_file(path) -> bytes:
    if not os.path.exists(path):
        raise DatasetIOError(f"文件不存在: {path}", path=path)
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DatasetIOError(f"读取文件失败: {path}", path=path) from e


def _write_file(path, data: bytes) -> None:
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        logger.error(f"写入文件失败: {path}: {str(e)}")
        raise DatasetIOError(f"写入文件失败: {path}", path=path) from e


def _check_header(reader: _Reader, magic: bytes) -> None:
    found = reader.buffer.read(4)
    if found != magic:
        raise DataFormatError(f"魔数错误: 期望 {magic!r}，实际 {found!r}（{reader.path}）")
    version = reader.unpack("<H")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"不支持的格式版本 {version}（{reader.path}）")


def save_demos(path, dataset: DemoDataset) -> None:
    """写出示范数据集"""
    modes = dataset.media.pen_modes
    out = io.BytesIO()
    out.write(DEMO_MAGIC)
    out.write(struct.pack("<HBHI", FORMAT_VERSION, _MEDIA_CODES.index(dataset.media),
                          dataset.side, len(dataset.episodes)))
    for episode in dataset.episodes:
        record = io.BytesIO()
        record.write(struct.pack("<I", len(episode)))
        if episode:
            record.write(np.ascontiguousarray(episode[0].reference, dtype=np.uint8).tobytes())
        for sample in episode:
            x, y = sample.pen.position
            record.write(struct.pack("<HHBI", x, y, modes.index(sample.pen.mode), sample.action))
            record.write(np.ascontiguousarray(sample.current, dtype=np.uint8).tobytes())
        payload = record.getvalue()
        out.write(struct.pack("<I", len(payload)))
        out.write(payload)
    _write_file(path, out.getvalue())
    logger.info(f"已写出 {len(dataset.episodes)} 个示范回合（{len(dataset.samples)} 个样本）: {path}")


def load_demos(path, history_frames: int = 1) -> DemoDataset:
    """读取示范数据集"""
    reader = _Reader(_read_file(path), path)
    _check_header(reader, DEMO_MAGIC)
    media_code, side, episode_count = reader.unpack("<BHI")
    if media_code >= len(_MEDIA_CODES):
        raise DataFormatError(f"未知的介质编码 {media_code}（{path}）")
    media = _MEDIA_CODES[media_code]
    modes = media.pen_modes
    frame_shape = (side, side, media.channels)
    frame_bytes = int(np.prod(frame_shape))

    dataset = DemoDataset(media=media, side=side)
    for _ in range(episode_count):
        length = reader.unpack("<I")
        record = _Reader(reader.read(length), path)
        count = record.unpack("<I")
        episode = []
        if count:
            reference = np.frombuffer(record.read(frame_bytes), dtype=np.uint8).reshape(frame_shape).copy()
            for _ in range(count):
                x, y, mode_index, action = record.unpack("<HHBI")
                if mode_index >= len(modes):
                    raise DataFormatError(f"笔状态编码无效 {mode_index}（{path}）")
                current = np.frombuffer(record.read(frame_bytes), dtype=np.uint8).reshape(frame_shape).copy()
                episode.append(DemoSample(reference=reference, current=current,
                                          pen=PenState(position=(x, y), mode=modes[mode_index]),
                                          action=action))
        if not record.at_end():
            raise DataFormatError(f"回合记录长度不一致（{path}）")
        dataset.episodes.append(attach_history(episode, history_frames))
    if not reader.at_end():
        raise DataFormatError(f"文件末尾有多余数据（{path}）")
    logger.info(f"成功加载 {len(dataset.episodes)} 个示范回合（{len(dataset.samples)} 个样本）: {path}")
    return dataset


def save_checkpoint(path, network: QNetwork, metadata: dict[str, Any]) -> None:
    """写出网络检查点：元数据 JSON + 命名张量"""
    meta = dict(metadata)
    meta["network"] = network.metadata
    meta_bytes = json.dumps(meta, sort_keys=True, ensure_ascii=False).encode("utf-8")
    out = io.BytesIO()
    out.write(WEIGHTS_MAGIC)
    out.write(struct.pack("<HI", FORMAT_VERSION, len(meta_bytes)))
    out.write(meta_bytes)
    out.write(struct.pack("<I", len(network.params)))
    for name, value in network.params.items():
        encoded = name.encode("utf-8")
        out.write(struct.pack("<H", len(encoded)))
        out.write(encoded)
        out.write(struct.pack("<B", value.ndim))
        out.write(struct.pack(f"<{value.ndim}I", *value.shape))
        out.write(np.ascontiguousarray(value, dtype="<f8").tobytes())
    _write_file(path, out.getvalue())
    logger.info(f"已保存检查点: {path}")


def load_checkpoint(path) -> tuple[QNetwork, dict[str, Any]]:
    """读取网络检查点，返回 (网络, 元数据)"""
    reader = _Reader(_read_file(path), path)
    _check_header(reader, WEIGHTS_MAGIC)
    meta_length = reader.unpack("<I")
    try:
        meta = json.loads(reader.read(meta_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataFormatError(f"检查点元数据损坏（{path}）") from e
    count = reader.unpack("<I")
    params = {}
    for _ in range(count):
        name = reader.read(reader.unpack("<H")).decode("utf-8")
        ndim = reader.unpack("<B")
        shape = tuple(struct.unpack(f"<{ndim}I", reader.read(4 * ndim)))
        size = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(reader.read(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if "network" not in meta:
        raise DataFormatError(f"检查点缺少网络结构信息（{path}）")
    network = QNetwork.from_metadata(meta["network"], params)
    logger.info(f"成功加载检查点: {path}")
    return network, meta


def _write_observation(out: io.BytesIO, obs: Observation, history_count: int) -> None:
    if len(obs.history) != history_count:
        raise InvalidArgumentError(f"观测的历史帧数 {len(obs.history)} 与配置 {history_count} 不一致")
    x, y = obs.pen
    out.write(struct.pack("<HHB", x, y, obs.color_value))
    for frame in (obs.canvas, obs.reference, *obs.history):
        out.write(np.ascontiguousarray(frame, dtype=np.uint8).tobytes())


def _read_observation(reader: _Reader, env_config: EnvConfig) -> Observation:
    shape = (env_config.side, env_config.side, env_config.media.channels)
    size = int(np.prod(shape))

    def frame() -> np.ndarray:
        return np.frombuffer(reader.read(size), dtype=np.uint8).reshape(shape).copy()

    x, y, color_value = reader.unpack("<HHB")
    canvas = frame()
    reference = frame()
    history = tuple(frame() for _ in range(env_config.history_frames - 1))
    return Observation(canvas=canvas, reference=reference, pen=(x, y), color_value=color_value,
                       patch_size=env_config.patch_size, history=history)


def save_replay(path, memory: PrioritizedReplayMemory, env_config: EnvConfig) -> None:
    """写出经验回放快照：回放参数、写入位置以及每条转移和它的叶子优先级"""
    history_count = env_config.history_frames - 1
    out = io.BytesIO()
    out.write(REPLAY_MAGIC)
    out.write(struct.pack("<HBHBB", FORMAT_VERSION, _MEDIA_CODES.index(env_config.media), env_config.side,
                          env_config.patch_size, env_config.history_frames))
    out.write(struct.pack("<IIIddd", memory.capacity, len(memory), memory.cursor, memory.alpha, memory.epsilon,
                          memory.max_priority))
    for leaf, transition in memory.entries():
        record = io.BytesIO()
        record.write(struct.pack("<dIdB", leaf, transition.action, transition.reward, int(transition.terminal)))
        _write_observation(record, transition.obs, history_count)
        _write_observation(record, transition.next_obs, history_count)
        payload = record.getvalue()
        out.write(struct.pack("<I", len(payload)))
        out.write(payload)
    _write_file(path, out.getvalue())
    logger.info(f"已写出回放快照（{len(memory)}/{memory.capacity} 条转移）: {path}")


def load_replay(path, env_config: EnvConfig) -> PrioritizedReplayMemory:
    """读取经验回放快照，介质、画布尺寸、局部窗口与历史帧数必须与 env_config 一致"""
    reader = _Reader(_read_file(path), path)
    _check_header(reader, REPLAY_MAGIC)
    media_code, side, patch_size, history_frames = reader.unpack("<BHBB")
    if media_code >= len(_MEDIA_CODES):
        raise DataFormatError(f"未知的介质编码 {media_code}（{path}）")
    stored = (_MEDIA_CODES[media_code], side, patch_size, history_frames)
    expected = (env_config.media, env_config.side, env_config.patch_size, env_config.history_frames)
    if stored != expected:
        raise ConfigMismatchError(
            f"回放快照 (介质, 边长, 窗口, 历史帧) = ({stored[0].value}, {side}, {patch_size}, {history_frames}) "
            f"与配置 ({env_config.media.value}, {env_config.side}, {env_config.patch_size}, "
            f"{env_config.history_frames}) 不一致（{path}）")
    capacity, size, cursor, alpha, epsilon, max_priority = reader.unpack("<IIIddd")

    entries = []
    for _ in range(size):
        record = _Reader(reader.read(reader.unpack("<I")), path)
        leaf, action, reward, terminal = record.unpack("<dIdB")
        if terminal > 1:
            raise DataFormatError(f"终止标志无效 {terminal}（{path}）")
        obs = _read_observation(record, env_config)
        next_obs = _read_observation(record, env_config)
        if not record.at_end():
            raise DataFormatError(f"转移记录长度不一致（{path}）")
        entries.append((leaf, Transition(obs=obs, action=action, reward=reward, next_obs=next_obs,
                                         terminal=bool(terminal))))
    if not reader.at_end():
        raise DataFormatError(f"文件末尾有多余数据（{path}）")
    try:
        memory = PrioritizedReplayMemory.restore(capacity, alpha, epsilon, max_priority, cursor, entries)
    except InvalidArgumentError as e:
        raise DataFormatError(f"回放快照内容无效: {str(e)}（{path}）") from e
    logger.info(f"成功加载回放快照（{size}/{capacity} 条转移）: {path}")
    return memory
