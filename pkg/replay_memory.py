import logging
from typing import Any, Optional

import numpy as np

from errors import InvalidArgumentError
from models import Transition

logger = logging.getLogger(__name__)


class SumTree:
    """求和树：叶子存优先级，内部节点为子节点之和，根节点为总和

    用数组表示完全二叉树，节点 i 的子节点为 2i+1 与 2i+2。
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidArgumentError(f"容量必须 ≥ 1: {capacity}")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1, dtype=np.float64)
        self.data: list[Any] = [None] * capacity
        self.cursor = 0
        self.size = 0

    @property
    def total(self) -> float:
        return float(self.nodes[0])

    def leaf(self, index: int) -> float:
        return float(self.nodes[index + self.capacity - 1])

    @property
    def leaves(self) -> np.ndarray:
        return self.nodes[self.capacity - 1:]

    def update(self, index: int, value: float) -> None:
        if not 0 <= index < self.capacity:
            raise InvalidArgumentError(f"叶子下标超出范围: {index}")
        node = index + self.capacity - 1
        self.nodes[node] = value
        # 父节点直接由子节点重新求和，避免增量误差累积
        while node > 0:
            node = (node - 1) // 2
            left = 2 * node + 1
            self.nodes[node] = self.nodes[left] + self.nodes[left + 1]

    def add(self, value: float, data: Any) -> int:
        index = self.cursor
        self.data[index] = data
        self.update(index, value)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.capacity, self.size + 1)
        return index

    def find(self, cumsum: float) -> int:
        """按累积和查找叶子下标，永远不会落到优先级为0的叶子"""
        node = 0
        while 2 * node + 1 < len(self.nodes):
            left = 2 * node + 1
            right = left + 1
            if cumsum < self.nodes[left] or self.nodes[right] <= 0.0:
                node = left
            else:
                cumsum -= self.nodes[left]
                node = right
        return node - self.capacity + 1

    def __len__(self) -> int:
        return self.size

    def __repr__(self):
        return f"SumTree(capacity={self.capacity}, size={self.size}, total={self.total})"


class PrioritizedReplayMemory:
    """按 TD 误差加权的经验回放（比例优先级 + 分层采样）"""

    def __init__(self, capacity: int = 20_000, alpha: float = 0.6, epsilon: float = 0.01):
        self.tree = SumTree(capacity)
        self.alpha = alpha
        self.epsilon = epsilon
        self.max_priority = 1.0

    def __len__(self) -> int:
        return len(self.tree)

    @property
    def capacity(self) -> int:
        return self.tree.capacity

    def insert(self, transition: Transition, priority: Optional[float] = None) -> int:
        """写入转移；未给出优先级时使用当前最大优先级"""
        if priority is None:
            priority = self.max_priority
        if not priority > 0:
            raise InvalidArgumentError(f"优先级必须 > 0: {priority}")
        self.max_priority = max(self.max_priority, priority)
        return self.tree.add(priority ** self.alpha, transition)

    def sample(self, batch_size: int, beta: float,
               rng: np.random.Generator) -> list[tuple[Transition, int, float]]:
        """分层比例采样，返回 (转移, 下标, 重要性权重)，权重按批内最大值归一化"""
        if len(self) == 0:
            raise InvalidArgumentError("回放缓存为空，无法采样")
        total = self.tree.total
        segment = total / batch_size
        indices = []
        for i in range(batch_size):
            point = rng.uniform(segment * i, segment * (i + 1))
            indices.append(self.tree.find(min(point, total)))

        probabilities = np.array([self.tree.leaf(i) for i in indices]) / total
        weights = (len(self) * probabilities) ** (-beta)
        weights = weights / weights.max()
        return [(self.tree.data[i], i, float(w)) for i, w in zip(indices, weights)]

    def update(self, index: int, td_error: float) -> None:
        """用新的 TD 误差更新优先级: (|δ| + ε)^α"""
        if not 0 <= index < len(self):
            raise InvalidArgumentError(f"回放下标无效: {index}")
        priority = abs(float(td_error)) + self.epsilon
        self.max_priority = max(self.max_priority, priority)
        self.tree.update(index, priority ** self.alpha)

    def update_batch(self, indices, td_errors) -> None:
        for index, td_error in zip(indices, td_errors):
            self.update(int(index), float(td_error))

    @property
    def cursor(self) -> int:
        return self.tree.cursor

    def entries(self) -> list[tuple[float, Transition]]:
        """按下标顺序返回已存储的 (叶子优先级, 转移)"""
        return [(self.tree.leaf(i), self.tree.data[i]) for i in range(len(self))]

    @classmethod
    def restore(cls, capacity: int, alpha: float, epsilon: float, max_priority: float, cursor: int,
                entries: list[tuple[float, Transition]]) -> "PrioritizedReplayMemory":
        """由快照内容重建回放，叶子优先级原样写回"""
        memory = cls(capacity, alpha, epsilon)
        if len(entries) > capacity:
            raise InvalidArgumentError(f"快照中的转移数 {len(entries)} 超过容量 {capacity}")
        if not 0 <= cursor < capacity or (len(entries) < capacity and cursor != len(entries)):
            raise InvalidArgumentError(f"写入位置 {cursor} 与转移数 {len(entries)} 不一致")
        for index, (leaf, transition) in enumerate(entries):
            if not leaf > 0:
                raise InvalidArgumentError(f"叶子优先级必须 > 0: {leaf}")
            memory.tree.data[index] = transition
            memory.tree.update(index, leaf)
        memory.tree.size = len(entries)
        memory.tree.cursor = cursor
        memory.max_priority = max_priority
        return memory
