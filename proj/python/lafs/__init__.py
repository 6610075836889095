"""Landmark-guided self-distillation pipeline for face representations."""

from lafs_core import (
    embed_images,
    generate_synthetic,
    gradient_battery,
    init_checkpoint,
    kfold_accuracy,
    load_checkpoint,
    read_png,
    render_face,
    save_checkpoint,
    tar_at_far,
    write_png,
)

__all__ = [
    "embed_images",
    "generate_synthetic",
    "gradient_battery",
    "init_checkpoint",
    "kfold_accuracy",
    "load_checkpoint",
    "read_png",
    "render_face",
    "save_checkpoint",
    "tar_at_far",
    "write_png",
]
