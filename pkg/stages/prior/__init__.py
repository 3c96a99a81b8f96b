from .stage import PriorStage
