from .stage import DepthStage
