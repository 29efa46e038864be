from src.model.hier_classifier import (
    ForwardOutput,
    ModelParams,
    forward,
    init,
    load_checkpoint,
    predict,
    save_checkpoint,
)

__all__ = ["ForwardOutput", "ModelParams", "forward", "init", "load_checkpoint", "predict", "save_checkpoint"]
