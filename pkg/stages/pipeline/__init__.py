from .stage import AblationStage, PipelineStage
