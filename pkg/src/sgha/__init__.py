"""Semantic-guided hierarchical alignment attack on a miniature dual-encoder surrogate."""

__version__ = "0.1.0"

from .anchors import AnchorSet, ReferencePool, build_anchor_set, compute_weights, load_pool, select_topk
from .attack import AttackConfig, AttackResult, export_adversarial, pgd_step, run_attack, select_layers
from .evaluation import alignment_score, bit_reduce, psnr, quality_report, run_transfer_eval, ssim
from .numerics import cosine_distance, gradient_check, mean_pool_rows, softmax_temperature
from .objectives import LossBreakdown, LossWeights, loss_anc, loss_feat, loss_mid, loss_total, loss_txt
from .surrogate import (
    SurrogateConfig,
    SurrogateModel,
    encode_image,
    encode_text,
    init_model,
    load_weights,
    project_text,
    project_visual,
    save_weights,
    tokenize,
)

__all__ = [
    "AnchorSet", "AttackConfig", "AttackResult", "LossBreakdown", "LossWeights", "ReferencePool",
    "SurrogateConfig", "SurrogateModel", "alignment_score", "bit_reduce", "build_anchor_set",
    "compute_weights", "cosine_distance", "encode_image", "encode_text", "export_adversarial",
    "gradient_check", "init_model", "load_pool", "load_weights", "loss_anc", "loss_feat", "loss_mid",
    "loss_total", "loss_txt", "mean_pool_rows", "pgd_step", "project_text", "project_visual", "psnr",
    "quality_report", "run_attack", "run_transfer_eval", "save_weights", "select_layers", "select_topk",
    "softmax_temperature", "ssim", "tokenize",
]
