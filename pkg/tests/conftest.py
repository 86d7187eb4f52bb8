import json

import numpy as np
import pytest

from canvas import new_canvas, render_segment
from models import BrushParams, EnvConfig, MediaType, PenMode
from network import ConvSpec, QNetwork

DESK_SIDE = 28


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sketch_config():
    return EnvConfig(side=DESK_SIDE, media=MediaType.SKETCH)


@pytest.fixture
def color_config():
    return EnvConfig(side=DESK_SIDE, media=MediaType.COLOR_SKETCH)


@pytest.fixture
def draw_reference():
    """按 (起点, 终点, 笔状态) 列表画出参考图像"""
    def _draw(config, segments):
        canvas = new_canvas(config.side, config.media)
        for start, end, mode in segments:
            render_segment(canvas, start, end, mode, config.brush or BrushParams())
        return canvas
    return _draw


@pytest.fixture
def house_reference(sketch_config, draw_reference):
    return draw_reference(sketch_config, [
        ((6, 20), (20, 20), PenMode.DOWN),
        ((6, 20), (6, 12), PenMode.DOWN),
        ((20, 20), (20, 12), PenMode.DOWN),
        ((6, 12), (13, 5), PenMode.DOWN),
        ((13, 5), (20, 12), PenMode.DOWN),
    ])


@pytest.fixture
def small_network(sketch_config):
    return QNetwork.build(sketch_config, "compact", hidden_width=16, rng=np.random.default_rng(0))


@pytest.fixture
def toy_network():
    """1×1 输入、2 个动作的小网络，便于手工设置参数"""
    def _build(params=None, seed=0, filters=4, hidden=4):
        return QNetwork((1, 1, 2), None, 2, [ConvSpec(filters, 1, 1)], hidden_width=hidden,
                        params=params, rng=np.random.default_rng(seed))
    return _build


QUICKDRAW_RECORDS = [
    {"word": "house", "key_id": "1", "drawing": [[[0, 100, 100, 0, 0], [0, 0, 100, 100, 0]],
                                                 [[0, 50, 100], [0, -60, 0]]]},
    {"word": "house", "key_id": "2", "drawing": [[[10, 200], [10, 200]]]},
    {"word": "cat", "key_id": "3", "drawing": [[[0, 30, 60], [0, 40, 0]], [[10, 50], [60, 60]]]},
    {"word": "cat", "key_id": "4", "drawing": [[[5, 80, 40, 5], [5, 5, 90, 5]]]},
    {"word": "tree", "key_id": "5", "drawing": [[[50, 50], [0, 120]], [[20, 50, 80], [40, 10, 40]]]},
]


@pytest.fixture
def quickdraw_file(tmp_path):
    path = tmp_path / "doodles.ndjson"
    lines = [json.dumps(record) for record in QUICKDRAW_RECORDS]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(path)
