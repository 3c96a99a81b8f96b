from .base import BaseStage
from .config import PipelineConfig
from .errors import InputError, MVSError

__all__ = ["BaseStage", "PipelineConfig", "InputError", "MVSError"]
