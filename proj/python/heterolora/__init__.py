"""HeteroLoRA desk-scale laboratory.

Thin package wrapper over the compiled extension: low-rank adapters and
LoRA-adapted shortcuts on a small Transformer, zero-cost saliency proxies,
and static/dynamic rank-allocation scheduling.
"""

from ._heterolora import (  # noqa: F401
    HeteroLoraConfigError,
    __version__,
    count_parameters,
    export_frequency,
    layer_norm,
    matmul,
    score_run,
    select_modules,
    softmax,
    train_run,
)

__all__ = [
    "HeteroLoraConfigError",
    "__version__",
    "count_parameters",
    "export_frequency",
    "layer_norm",
    "matmul",
    "score_run",
    "select_modules",
    "softmax",
    "train_run",
]
