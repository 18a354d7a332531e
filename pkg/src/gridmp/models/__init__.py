from .base import (Batch, CapacityError, FeatureError, LABEL_OFFSET, Model, ModelConfig, NumericError,
                   TopologyMismatchError, UnsupportedModelError, loss, make_batch)
from .gat import GATv2, SKPGAT
from .gnan import GNAN, SKPGNAN
from .mlp import MLP

MODELS = {cls.kind: cls for cls in (MLP, GATv2, SKPGAT, GNAN, SKPGNAN)}
MODEL_KINDS = tuple(MODELS)
DISPLAY_NAMES = {"mlp": "MLP", "gat": "GAT", "skp_gat": "SKP-GAT", "gnan": "GNAN", "skp_gnan": "SKP-GNAN"}


def build_model(config: ModelConfig) -> Model:
    try:
        cls = MODELS[config.kind]
    except KeyError:
        raise ValueError(f"unknown model kind {config.kind!r}; choose from {MODEL_KINDS}") from None
    return cls(config)


__all__ = ["Batch", "CapacityError", "DISPLAY_NAMES", "FeatureError", "GATv2", "GNAN", "LABEL_OFFSET", "MLP",
           "MODELS", "MODEL_KINDS", "Model", "ModelConfig", "NumericError", "SKPGAT", "SKPGNAN",
           "TopologyMismatchError", "UnsupportedModelError", "build_model", "loss", "make_batch"]
