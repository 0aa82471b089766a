"""Export ResNet internals to the exchange formats the analysis toolkit reads.

The analysis side is a separate package; the contract between the two is
files only (NPY tensors, JSON manifests), never imports.
"""

__version__ = "0.1.0"

from .embeddings import DEFAULT_ENCODER, EncoderUnavailable, export_embeddings, offline_table
from .features import ExportSpec, export_features, export_perturbed_features, load_dataset, plan_batches
from .resnets import LAYER_NAMES, ActivationTap, architectures, load_model, tap_block

__all__ = [
    "DEFAULT_ENCODER",
    "EncoderUnavailable",
    "export_embeddings",
    "offline_table",
    "ExportSpec",
    "export_features",
    "export_perturbed_features",
    "load_dataset",
    "plan_batches",
    "LAYER_NAMES",
    "ActivationTap",
    "architectures",
    "load_model",
    "tap_block",
    "__version__",
]
