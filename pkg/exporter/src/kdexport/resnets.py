"""Torchvision ResNet loading and activation taps.

Models are built without pretrained weights and restored from an explicit
checkpoint, so an export is a pure function of the checkpoint file and the
input tensors. The tap points L1..L4 are the last residual block of each
stage; their outputs are what downstream saliency runs on.
"""

import torch
from torchvision import models

_BUILDERS = {
    "resnet18": models.resnet18,
    "resnet50": models.resnet50,
    "resnet101": models.resnet101,
}

LAYER_NAMES = ("L1", "L2", "L3", "L4")


def architectures():
    return tuple(sorted(_BUILDERS))


def load_model(arch, checkpoint):
    """Build the architecture, restore a state dict, and switch to eval mode.

    The class count is read off the checkpoint's final-layer weight so the
    caller never has to repeat it.
    """
    if arch not in _BUILDERS:
        raise ValueError(f"unknown architecture {arch!r}; choose from {', '.join(architectures())}")
    try:
        state = torch.load(checkpoint, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ValueError(f"{checkpoint}: not a loadable checkpoint: {exc}") from exc
    if not isinstance(state, dict) or "fc.weight" not in state:
        raise ValueError(f"{checkpoint}: expected a ResNet state dict with an fc.weight entry")
    model = _BUILDERS[arch](weights=None, num_classes=state["fc.weight"].shape[0])
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise ValueError(f"{checkpoint}: state dict does not fit {arch}: {exc}") from exc
    model.eval()
    return model


def tap_block(model, layer):
    """Return the module whose output a layer name refers to."""
    if layer not in LAYER_NAMES:
        raise ValueError(f"unknown layer {layer!r}; expected one of {', '.join(LAYER_NAMES)}")
    return getattr(model, "layer" + layer[1])[-1]


class ActivationTap:
    """Forward hooks on the requested blocks; use as a context manager.

    After a forward pass, `acts` maps each layer name to the live output
    tensor, still attached to the autograd graph.
    """

    def __init__(self, model, layers):
        self.model = model
        self.layers = tuple(layers)
        self.acts = {}
        self._handles = []

    def __enter__(self):
        for name in self.layers:
            handle = tap_block(self.model, name).register_forward_hook(self._keep(name))
            self._handles.append(handle)
        return self

    def _keep(self, name):
        def hook(module, inputs, output):
            self.acts[name] = output

        return hook

    def __exit__(self, *exc):
        for handle in self._handles:
            handle.remove()
        self._handles.clear()
        return False
