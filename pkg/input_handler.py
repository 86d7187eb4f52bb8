import os
import logging
from typing import List, Optional

from canvas import Canvas, load_image
from dataset_processor import load_reference_canvases
from errors import ConfigMismatchError, UsageError
from models import EnvConfig

logger = logging.getLogger(__name__)


class InputHandler:
    """命令行参数解析：类别列表与参考图像"""
    @staticmethod
    def parse_class_list(input_text: Optional[str]) -> List[str]:
        """解析逗号分隔的类别列表，空列表视为用法错误"""
        if input_text is None:
            raise UsageError("类别列表不能为空")
        # 替换中文逗号为英文逗号
        parts = input_text.replace('，', ',').split(',')
        classes = [part.strip() for part in parts if part.strip()]
        if not classes:
            raise UsageError(f"类别列表不能为空: '{input_text}'")
        return classes

    @staticmethod
    def parse_reference_spec(spec: str) -> tuple[str, int]:
        """解析'类别[:序号]'形式的参考图像描述"""
        name, _, index_text = spec.partition(':')
        name = name.strip()
        if not name:
            raise UsageError(f"格式错误：{spec}。请使用'类别:序号'的格式。例如：house:3")
        if not index_text.strip():
            return name, 0
        try:
            index = int(index_text.strip())
        except ValueError:
            raise UsageError(f"数据错误：{index_text}。序号必须是整数。")
        if index < 0:
            raise UsageError(f"序号不能为负: {index}")
        return name, index

    @staticmethod
    def resolve_reference(spec: str, env_config: EnvConfig, quickdraw_path: Optional[str]) -> tuple[str, Canvas]:
        """参考图像可以是 PNG 路径，也可以是 QuickDraw 中的'类别:序号'"""
        if spec.lower().endswith('.png') or os.path.isfile(spec):
            canvas = load_image(spec, env_config.media)
            if canvas.side != env_config.side:
                raise ConfigMismatchError(f"参考图像边长 {canvas.side} 与配置 {env_config.side} 不一致: {spec}")
            return os.path.splitext(os.path.basename(spec))[0], canvas

        name, index = InputHandler.parse_reference_spec(spec)
        if not quickdraw_path:
            raise UsageError("按类别选择参考图像需要配置 QUICKDRAW_PATH")
        references = load_reference_canvases(quickdraw_path, env_config, [name], per_class=index + 1)
        if index >= len(references):
            raise UsageError(f"类别'{name}'只有 {len(references)} 幅涂鸦，序号 {index} 超出范围")
        logger.info(f"使用类别'{name}'的第 {index} 幅涂鸦作为参考图像")
        return references[index]
