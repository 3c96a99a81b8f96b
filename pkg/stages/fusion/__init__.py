from .stage import EvalStage, FuseStage, SynthStage
