"""kdlens: saliency maps and similarity metrics for distilled-vs-base model analysis."""

from .distcorr import (
    dcor,
    dcor_checked,
    dcov2,
    double_center,
    dvar2,
    hilbert_inner,
    hilbert_norm,
    pairwise_distance,
    pdcor2,
    project_out,
    u_center,
)
from .metrics import EmbeddingTable, MetricReport, extract_features, fss, perturb, perturb_batch, rs
from .saliency import (
    DISTILLED,
    RESIDUAL,
    ActivationBundle,
    Heatmap,
    UniqueDecomposition,
    cam_assemble,
    channel_uniqueness,
    decompose,
    gradcam,
    load_bundle,
    postprocess,
    unicam,
    unique_energy_with_grad,
    unique_matrix,
)
from .tensorio import (
    BatchManifest,
    ManifestEntry,
    ManifestError,
    TensorFormatError,
    flatten_batch,
    load_manifest,
    load_tensor,
    write_manifest,
    write_tensor,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationBundle",
    "BatchManifest",
    "DISTILLED",
    "EmbeddingTable",
    "Heatmap",
    "ManifestEntry",
    "ManifestError",
    "MetricReport",
    "RESIDUAL",
    "TensorFormatError",
    "UniqueDecomposition",
    "cam_assemble",
    "channel_uniqueness",
    "dcor",
    "dcor_checked",
    "dcov2",
    "decompose",
    "double_center",
    "dvar2",
    "extract_features",
    "flatten_batch",
    "fss",
    "gradcam",
    "hilbert_inner",
    "hilbert_norm",
    "load_bundle",
    "load_manifest",
    "load_tensor",
    "pairwise_distance",
    "pdcor2",
    "perturb",
    "perturb_batch",
    "postprocess",
    "project_out",
    "rs",
    "u_center",
    "unicam",
    "unique_energy_with_grad",
    "unique_matrix",
    "write_manifest",
    "write_tensor",
]
