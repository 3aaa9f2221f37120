from .blocks import rope_tables
from .config import HEAD_MODES, TRUNK_MODES, ModelConfig
from .network import PixlModel, modulate

__all__ = ["HEAD_MODES", "TRUNK_MODES", "ModelConfig", "PixlModel", "modulate", "rope_tables"]
