from .world import MixtureWorld, sample_pairs, true_ratio, true_ratio_many
from .encoders import EncoderParams, init_params, embed_images, embed_texts, save_params, load_params
from .train import TrainConfig, train, loss_and_grads, gradient_check
from .evaluate import evaluate, evaluation_grid, iwl_demo

__all__ = [
    "MixtureWorld", "sample_pairs", "true_ratio", "true_ratio_many",
    "EncoderParams", "init_params", "embed_images", "embed_texts",
    "save_params", "load_params",
    "TrainConfig", "train", "loss_and_grads", "gradient_check",
    "evaluate", "evaluation_grid", "iwl_demo",
]
