import numpy as np
import pytest
import torch
from torchvision.models import resnet18

from kdexport import ExportSpec, export_features


@pytest.fixture(scope="session")
def checkpoint(tmp_path_factory):
    torch.manual_seed(7)
    model = resnet18(weights=None, num_classes=2)
    path = tmp_path_factory.mktemp("ckpt") / "resnet18.pt"
    torch.save(model.state_dict(), path)
    return path


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    rng = np.random.default_rng(11)
    root = tmp_path_factory.mktemp("data")
    np.save(root / "images.npy", rng.standard_normal((8, 3, 64, 64)).astype(np.float32))
    np.save(root / "labels.npy", (np.arange(8) % 2).astype(np.float64))
    return root


@pytest.fixture(scope="session")
def export_dir(tmp_path_factory, checkpoint, dataset_dir):
    """One canonical export (two taps, two batches) shared across tests."""
    out = tmp_path_factory.mktemp("export")
    spec = ExportSpec(
        checkpoint=str(checkpoint),
        arch="resnet18",
        dataset=str(dataset_dir),
        out_dir=str(out),
        layers=("L1", "L4"),
        batch_size=4,
    )
    manifests = export_features(spec)
    return {"out": out, "manifests": manifests, "spec": spec}
