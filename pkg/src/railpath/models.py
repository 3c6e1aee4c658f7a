"""Configurable encoder + interchangeable prediction heads.

Three head types share the same encoder family:

* regression: 1x1 pooling conv, flatten, one hidden FC layer, output vector
  of 2H+1 values (x values unconstrained, y-limit through a sigmoid);
* classification: same stem, output reshaped to a (rails, H, columns+1)
  logit grid with one extra background column;
* segmentation: U-Net style decoder over the encoder's stage outputs,
  producing a full-resolution single-channel logit mask.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
from torchvision import models as tv_models

log = logging.getLogger(__name__)

SUPPORTED_BACKBONES = (
    "resnet18", "resnet34", "resnet50",
    "efficientnet_b0", "efficientnet_b1", "efficientnet_b2", "efficientnet_b3",
)

SKIP_STRIDES = (2, 4, 8, 16)
OUTPUT_STRIDE = 32


class ModelError(ValueError):
    """Unsupported or inconsistent model specification."""


@dataclass(frozen=True)
class BackboneSpec:
    name: str
    stage_channels: tuple[int, ...]  # channels at strides 2, 4, 8, 16
    out_channels: int                # channels of the stride-32 feature map
    reduction: int = OUTPUT_STRIDE


@dataclass(frozen=True)
class RegressionHeadSpec:
    pooling_filters: int = 8
    hidden_width: int = 2048
    anchor_count: int = 64

    @property
    def output_size(self) -> int:
        return 2 * self.anchor_count + 1


@dataclass(frozen=True)
class ClassificationHeadSpec:
    rails: int = 2
    anchor_count: int = 64
    columns: int = 128
    pooling_filters: int = 8
    hidden_width: int = 2048

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return (self.rails, self.anchor_count, self.columns + 1)

    @property
    def output_size(self) -> int:
        return self.rails * self.anchor_count * (self.columns + 1)


@dataclass(frozen=True)
class SegmentationHeadSpec:
    decoder_widths: tuple[int, ...] = (256, 128, 64, 32, 16)


HEAD_SPECS = {
    "regression": RegressionHeadSpec,
    "classification": ClassificationHeadSpec,
    "segmentation": SegmentationHeadSpec,
}


def _tv_constructor(name: str):
    if name not in SUPPORTED_BACKBONES:
        raise ModelError(f"unsupported backbone {name!r}; choose from {SUPPORTED_BACKBONES}")
    return getattr(tv_models, name)


def _build_tv_backbone(name: str, pretrained: bool) -> nn.Module:
    ctor = _tv_constructor(name)
    if pretrained:
        try:
            return ctor(weights="DEFAULT")
        except Exception as exc:  # offline environments
            log.warning("pretrained weights for %s unavailable (%s); using random init", name, exc)
    return ctor(weights=None)


class Encoder(nn.Module):
    """Backbone wrapper exposing the stride-32 map and per-stride skips."""

    def __init__(self, name: str, pretrained: bool = False) -> None:
        super().__init__()
        net = _build_tv_backbone(name, pretrained)
        self.name = name
        if name.startswith("resnet"):
            self.stem = nn.Sequential(net.conv1, net.bn1, net.relu)
            self.pool = net.maxpool
            self.stages = nn.ModuleList([net.layer1, net.layer2, net.layer3, net.layer4])
            self._kind = "resnet"
        else:
            self.features = net.features
            self._kind = "efficientnet"
            self._skip_idx, self._final_idx = self._probe_efficientnet()
        self.spec = self._probe_spec()

    def _probe_efficientnet(self) -> tuple[dict[int, int], int]:
        probe = torch.zeros(1, 3, 64, 64)
        last_at_size: dict[int, int] = {}
        with torch.no_grad():
            x = probe
            for idx, block in enumerate(self.features):
                x = block(x)
                last_at_size[x.shape[-1]] = idx
        skip_idx = {s: last_at_size[64 // s] for s in SKIP_STRIDES}
        return skip_idx, len(self.features) - 1

    def _probe_spec(self) -> BackboneSpec:
        with torch.no_grad():
            final, skips = self.forward(torch.zeros(1, 3, 64, 64))
        return BackboneSpec(
            name=self.name,
            stage_channels=tuple(s.shape[1] for s in skips),
            out_channels=final.shape[1],
        )

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if self._kind == "resnet":
            s2 = self.stem(x)
            s4 = self.stages[0](self.pool(s2))
            s8 = self.stages[1](s4)
            s16 = self.stages[2](s8)
            final = self.stages[3](s16)
            return final, [s2, s4, s8, s16]
        want = {self._skip_idx[s]: i for i, s in enumerate(SKIP_STRIDES)}
        skips = [None] * len(SKIP_STRIDES)
        for idx, block in enumerate(self.features):
            x = block(x)
            if idx in want:
                skips[want[idx]] = x
        return x, skips


class PooledDenseHead(nn.Module):
    """1x1 pooling conv -> flatten -> hidden FC -> output FC."""

    def __init__(self, in_channels: int, spatial: int, filters: int, hidden: int, out_dim: int) -> None:
        super().__init__()
        self.pool = nn.Conv2d(in_channels, filters, kernel_size=1)
        self.act = nn.ReLU(inplace=True)
        self.fc1 = nn.Linear(filters * spatial * spatial, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.act(self.pool(x))
        x = torch.flatten(x, 1)
        x = self.act(self.fc1(x))
        return self.fc2(x)


class _DoubleConv(nn.Sequential):
    def __init__(self, in_ch: int, out_ch: int) -> None:
        super().__init__(
            nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )


class SegmentationDecoder(nn.Module):
    """Upsampling decoder with skip concatenation at strides 16/8/4/2 and a
    final skip-free stage reaching full resolution."""

    def __init__(self, spec: SegmentationHeadSpec, backbone: BackboneSpec) -> None:
        super().__init__()
        widths = spec.decoder_widths
        skip_ch = list(backbone.stage_channels[::-1])  # stride 16 first
        self.up = nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False)
        blocks = []
        in_ch = backbone.out_channels
        for i, w in enumerate(widths):
            skip = skip_ch[i] if i < len(skip_ch) else 0
            blocks.append(_DoubleConv(in_ch + skip, w))
            in_ch = w
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(in_ch, 1, kernel_size=1)

    def forward(self, final: torch.Tensor, skips: list[torch.Tensor]) -> torch.Tensor:
        x = final
        rev = skips[::-1]  # stride 16 first
        for i, block in enumerate(self.blocks):
            x = self.up(x)
            if i < len(rev):
                x = torch.cat([x, rev[i]], dim=1)
            x = block(x)
        return self.head(x)


class PathModel(nn.Module):
    """Encoder + one prediction head; `paradigm` names the head type."""

    def __init__(self, backbone: str, head_spec, pretrained: bool = False, input_size: int = 512) -> None:
        super().__init__()
        if input_size % OUTPUT_STRIDE != 0:
            raise ModelError(f"input size must be a multiple of {OUTPUT_STRIDE}")
        self.encoder = Encoder(backbone, pretrained=pretrained)
        self.head_spec = head_spec
        self.input_size = input_size
        spatial = input_size // OUTPUT_STRIDE
        if isinstance(head_spec, RegressionHeadSpec):
            self.paradigm = "regression"
            self.head = PooledDenseHead(self.encoder.spec.out_channels, spatial,
                                        head_spec.pooling_filters, head_spec.hidden_width,
                                        head_spec.output_size)
        elif isinstance(head_spec, ClassificationHeadSpec):
            self.paradigm = "classification"
            self.head = PooledDenseHead(self.encoder.spec.out_channels, spatial,
                                        head_spec.pooling_filters, head_spec.hidden_width,
                                        head_spec.output_size)
        elif isinstance(head_spec, SegmentationHeadSpec):
            self.paradigm = "segmentation"
            self.head = SegmentationDecoder(head_spec, self.encoder.spec)
        else:
            raise ModelError(f"unknown head spec {type(head_spec).__name__}")

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[2] != self.input_size or x.shape[3] != self.input_size:
            raise ModelError(f"expected (B, 3, {self.input_size}, {self.input_size}) input, got {tuple(x.shape)}")
        final, skips = self.encoder(x)
        if self.paradigm == "regression":
            raw = self.head(final)
            return torch.cat([raw[:, :-1], torch.sigmoid(raw[:, -1:])], dim=1)
        if self.paradigm == "classification":
            raw = self.head(final)
            return raw.reshape(raw.shape[0], *self.head_spec.grid_shape)
        return self.head(final, skips)


def build_model(backbone: str, head_spec, pretrained: bool = False, input_size: int = 512) -> PathModel:
    """Assemble a model; raises ModelError for unsupported backbone ids."""
    return PathModel(backbone, head_spec, pretrained=pretrained, input_size=input_size)


def backbone_spec(name: str) -> BackboneSpec:
    return Encoder(name).spec


def count_params_and_macs(model: nn.Module, input_size: int | None = None) -> tuple[int, int]:
    """(trainable+frozen parameter count, multiply-accumulates of one forward).

    MACs counted over Conv2d and Linear layers, the standard convention for
    these architectures.
    """
    params = sum(p.numel() for p in model.parameters())
    size = input_size or getattr(model, "input_size", 512)
    macs = 0

    def conv_hook(module, inputs, output):
        nonlocal macs
        out_elems = output.numel() // output.shape[0]
        macs += out_elems * (module.in_channels // module.groups) * module.kernel_size[0] * module.kernel_size[1]

    def linear_hook(module, inputs, output):
        nonlocal macs
        macs += (output.numel() // output.shape[0]) * module.in_features

    handles = []
    for mod in model.modules():
        if isinstance(mod, nn.Conv2d):
            handles.append(mod.register_forward_hook(conv_hook))
        elif isinstance(mod, nn.Linear):
            handles.append(mod.register_forward_hook(linear_hook))
    was_training = model.training
    model.eval()
    with torch.no_grad():
        model(torch.zeros(1, 3, size, size))
    for h in handles:
        h.remove()
    if was_training:
        model.train()
    return params, macs


IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def image_to_tensor(image) -> torch.Tensor:
    """HWC uint8 image -> normalized (3, H, W) float tensor."""
    t = torch.from_numpy(np.array(image)).permute(2, 0, 1).float() / 255.0
    mean = torch.tensor(IMAGENET_MEAN).view(3, 1, 1)
    std = torch.tensor(IMAGENET_STD).view(3, 1, 1)
    return (t - mean) / std


def save_checkpoint(model: PathModel, path, fingerprint: str = "") -> None:
    payload = {
        "format": "railpath-checkpoint-v1",
        "backbone": model.encoder.name,
        "paradigm": model.paradigm,
        "head_spec": dataclasses.asdict(model.head_spec),
        "input_size": model.input_size,
        "fingerprint": fingerprint,
        "state_dict": model.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path, map_location="cpu") -> PathModel:
    payload = torch.load(path, map_location=map_location, weights_only=False)
    if payload.get("format") != "railpath-checkpoint-v1":
        raise ModelError(f"{path} is not a railpath checkpoint")
    spec_cls = HEAD_SPECS[payload["paradigm"]]
    head_spec = spec_cls(**{k: tuple(v) if isinstance(v, list) else v
                            for k, v in payload["head_spec"].items()})
    model = build_model(payload["backbone"], head_spec, pretrained=False,
                        input_size=payload["input_size"])
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
