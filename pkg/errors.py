"""异常类型定义

所有异常都继承自内置异常，调用方既可以捕获具体类型，也可以按
ValueError / RuntimeError / OSError 统一处理。
"""


class InvalidArgumentError(ValueError):
    """参数不合法"""


class InvalidStateError(RuntimeError):
    """状态不允许执行该操作（例如回合已结束仍调用step）"""


class DatasetIOError(OSError):
    """数据文件无法读取或写入"""

    def __init__(self, message: str, path=None):
        super().__init__(message)
        self.path = path


class DataFormatError(ValueError):
    """数据格式错误（容器魔数、版本、记录内容）"""


class EmptyDatasetError(DataFormatError):
    """没有解析到任何有效记录"""


class TrainingDivergedError(RuntimeError):
    """训练发散：损失、目标值或梯度出现非有限值"""


class ConfigMismatchError(ValueError):
    """检查点与参考图像或介质配置不一致"""


class UsageError(ValueError):
    """命令行用法错误"""
