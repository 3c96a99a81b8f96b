from .stage import AggregateStage
