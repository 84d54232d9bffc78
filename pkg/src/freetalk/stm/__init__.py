from .diffusion_net import DiffusionNet, MeshTensors
from .model import STM, STMConfig, stm_forward, stm_loss

__all__ = ["DiffusionNet", "MeshTensors", "STM", "STMConfig", "stm_forward", "stm_loss"]
