"""Python surface for the sedtoy C++ core.

The compiled module `_sedcore` carries the actual operations; this package
re-exports them. When using a plain CMake build (no pip install), put the
build's bindings directory on PYTHONPATH instead and import `_sedcore`
directly.
"""

from _sedcore import (  # noqa: F401
    DatasetConfig,
    Model,
    compute_ap,
    current_alpha,
    decode_box,
    downsample,
    encode_box,
    generate_scene,
    giou,
    grad_norm,
    iou,
    js_div,
    kl_div,
    match_predictions,
    nms,
    pairwise_cost,
    rescale_box,
    reweighted_mean,
    solve_assignment,
    strong_augment,
    total_loss,
    weak_augment,
)

__all__ = [
    "DatasetConfig",
    "Model",
    "compute_ap",
    "current_alpha",
    "decode_box",
    "downsample",
    "encode_box",
    "generate_scene",
    "giou",
    "grad_norm",
    "iou",
    "js_div",
    "kl_div",
    "match_predictions",
    "nms",
    "pairwise_cost",
    "rescale_box",
    "reweighted_mean",
    "solve_assignment",
    "strong_augment",
    "total_loss",
    "weak_augment",
]
