import numpy as np
import pytest

from container import (DemoDataset, load_checkpoint, load_demos, load_replay, save_checkpoint, save_demos,
                       save_replay)
from demo_synthesizer import demo_episode_from_strokes, synthesize_demo_episode
from drawing_fetcher import ProceduralStrokeSource
from env import PaintingEnv
from errors import ConfigMismatchError, DataFormatError, DatasetIOError
from models import EnvConfig, MediaType, PenMode, Transition
from replay_memory import PrioritizedReplayMemory


@pytest.fixture
def dataset(sketch_config):
    first = demo_episode_from_strokes([[(3, 3), (20, 3)]], [PenMode.DOWN], sketch_config)
    second = demo_episode_from_strokes([[(10, 20), (25, 8), (25, 25)]], [PenMode.DOWN], sketch_config)
    return DemoDataset(media=MediaType.SKETCH, side=28, episodes=[first, second])


class TestDemoContainer:
    def test_round_trip(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        loaded = load_demos(path)
        assert (loaded.media, loaded.side, len(loaded.episodes)) == (MediaType.SKETCH, 28, 2)
        for original, restored in zip(dataset.samples, loaded.samples):
            assert restored.action == original.action
            assert restored.pen == original.pen
            np.testing.assert_array_equal(restored.current, original.current)
            np.testing.assert_array_equal(restored.reference, original.reference)

    def test_color_round_trip(self, color_config, rng, tmp_path):
        bank = ProceduralStrokeSource(max_extent=10).generate(rng, 10)
        episodes = [synthesize_demo_episode(bank, rng, color_config, n_strokes=2) for _ in range(3)]
        path = tmp_path / "color.sdqd"
        save_demos(path, DemoDataset(MediaType.COLOR_SKETCH, 28, episodes))
        loaded = load_demos(path)
        assert [s.pen.mode for s in loaded.samples] == [s.pen.mode for episode in episodes for s in episode]

    def test_history_attached_on_load(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        episode = load_demos(path, history_frames=2).episodes[0]
        assert len(episode[0].history) == 1
        np.testing.assert_array_equal(episode[1].history[0], episode[0].current)

    def test_same_content_same_bytes(self, dataset, tmp_path):
        save_demos(tmp_path / "a.sdqd", dataset)
        save_demos(tmp_path / "b.sdqd", dataset)
        assert (tmp_path / "a.sdqd").read_bytes() == (tmp_path / "b.sdqd").read_bytes()

    def test_bad_magic(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(DataFormatError):
            load_demos(path)

    def test_unsupported_version(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        data = path.read_bytes()
        path.write_bytes(data[:4] + (2).to_bytes(2, "little") + data[6:])
        with pytest.raises(DataFormatError):
            load_demos(path)

    def test_truncated(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DataFormatError):
            load_demos(path)

    def test_trailing_bytes(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(DataFormatError):
            load_demos(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetIOError):
            load_demos(tmp_path / "missing.sdqd")


class TestCheckpoint:
    def test_round_trip(self, small_network, tmp_path):
        path = tmp_path / "net.sdqw"
        save_checkpoint(path, small_network, {"stage": "pretrain", "seed": 7})
        network, meta = load_checkpoint(path)
        assert meta["stage"] == "pretrain"
        assert meta["seed"] == 7
        assert network.metadata == small_network.metadata
        for name, value in small_network.params.items():
            np.testing.assert_array_equal(network.params[name], value)

    def test_same_network_same_bytes(self, small_network, tmp_path):
        save_checkpoint(tmp_path / "a.sdqw", small_network, {"stage": "rl"})
        save_checkpoint(tmp_path / "b.sdqw", small_network.clone(), {"stage": "rl"})
        assert (tmp_path / "a.sdqw").read_bytes() == (tmp_path / "b.sdqw").read_bytes()

    def test_demo_file_is_not_checkpoint(self, dataset, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        with pytest.raises(DataFormatError):
            load_checkpoint(path)

    def test_truncated(self, small_network, tmp_path):
        path = tmp_path / "net.sdqw"
        save_checkpoint(path, small_network, {})
        path.write_bytes(path.read_bytes()[:100])
        with pytest.raises(DataFormatError):
            load_checkpoint(path)


def fill_memory(config, reference, steps, capacity, seed=0):
    """按随机动作与环境交互，把转移写入回放"""
    rng = np.random.default_rng(seed)
    memory = PrioritizedReplayMemory(capacity, alpha=0.6, epsilon=0.01)
    env = PaintingEnv(config)
    env.reset(reference)
    obs = env.observe()
    for _ in range(steps):
        action = int(rng.integers(config.action_spec.total))
        next_obs, reward, done, _ = env.step(action)
        memory.insert(Transition(obs=obs, action=action, reward=reward, next_obs=next_obs, terminal=done))
        obs = next_obs
        if done:
            env.reset(reference)
            obs = env.observe()
    return memory


class TestReplaySnapshot:
    @pytest.fixture
    def config(self):
        return EnvConfig(side=28, media=MediaType.SKETCH, max_steps=7, history_frames=2)

    @pytest.fixture
    def memory(self, config, house_reference):
        memory = fill_memory(config, house_reference, steps=30, capacity=20)
        memory.update_batch([0, 3, 7], [4.0, 0.0, 12.5])
        return memory

    def test_round_trip(self, config, memory, tmp_path):
        path = tmp_path / "replay.sdqr"
        save_replay(path, memory, config)
        loaded = load_replay(path, config)
        assert (len(loaded), loaded.capacity, loaded.cursor) == (20, 20, 10)
        assert (loaded.alpha, loaded.epsilon, loaded.max_priority) == (0.6, 0.01, memory.max_priority)
        assert loaded.tree.total == pytest.approx(memory.tree.total, rel=1e-12)
        for (leaf, original), (restored_leaf, restored) in zip(memory.entries(), loaded.entries()):
            assert restored_leaf == leaf
            assert (restored.action, restored.reward, restored.terminal) == (
                original.action, original.reward, original.terminal)
            for before, after in ((original.obs, restored.obs), (original.next_obs, restored.next_obs)):
                assert (after.pen, after.color_value, after.patch_size) == (before.pen, before.color_value, 11)
                np.testing.assert_array_equal(after.canvas, before.canvas)
                np.testing.assert_array_equal(after.reference, before.reference)
                assert len(after.history) == 1
                np.testing.assert_array_equal(after.history[0], before.history[0])

    def test_sampling_continues_after_load(self, config, memory, tmp_path):
        path = tmp_path / "replay.sdqr"
        save_replay(path, memory, config)
        loaded = load_replay(path, config)
        first = [(t.action, i, w) for t, i, w in memory.sample(8, 0.4, np.random.default_rng(3))]
        second = [(t.action, i, w) for t, i, w in loaded.sample(8, 0.4, np.random.default_rng(3))]
        assert first == second
        index = loaded.insert(memory.entries()[0][1])
        assert index == 10

    def test_partially_filled(self, config, house_reference, tmp_path):
        memory = fill_memory(config, house_reference, steps=5, capacity=50)
        path = tmp_path / "replay.sdqr"
        save_replay(path, memory, config)
        loaded = load_replay(path, config)
        assert (len(loaded), loaded.cursor) == (5, 5)

    def test_same_content_same_bytes(self, config, memory, tmp_path):
        save_replay(tmp_path / "a.sdqr", memory, config)
        save_replay(tmp_path / "b.sdqr", load_replay(tmp_path / "a.sdqr", config), config)
        assert (tmp_path / "a.sdqr").read_bytes() == (tmp_path / "b.sdqr").read_bytes()

    def test_config_mismatch(self, config, memory, tmp_path):
        path = tmp_path / "replay.sdqr"
        save_replay(path, memory, config)
        with pytest.raises(ConfigMismatchError):
            load_replay(path, EnvConfig(side=28, media=MediaType.SKETCH, history_frames=1))

    def test_demo_file_is_not_replay(self, dataset, config, tmp_path):
        path = tmp_path / "demos.sdqd"
        save_demos(path, dataset)
        with pytest.raises(DataFormatError):
            load_replay(path, config)

    def test_truncated(self, config, memory, tmp_path):
        path = tmp_path / "replay.sdqr"
        save_replay(path, memory, config)
        path.write_bytes(path.read_bytes()[:-25])
        with pytest.raises(DataFormatError):
            load_replay(path, config)
