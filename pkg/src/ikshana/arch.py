"""The glance network family: builders, presets, and the forward pass.

A network is N scales (N in {1,2,3}). Each scale runs G glance modules over
a growing concatenation buffer that always carries the (downsampled) input
image as its last three channels; the image is sliced back off before the
scale's projection/side output. Side outputs are fused by a 1x1 decoder
convolution after bilinear upsampling. ``Network.plan`` walks the same
dataflow symbolically so the analyzer can account parameters and MACs
without running tensors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import ops
from .autograd import Tensor
from .optim import ParamSet, he_normal

__all__ = ["ArchSpec", "Network", "build_network", "list_presets",
           "resolve_preset", "dilation_cycle"]


@dataclass(frozen=True)
class ArchSpec:
    """Structural description of one family member."""
    name: str
    scales: int
    glances: int
    with_projection: bool
    glance_width: int = 32
    num_classes: int = 20

    def validate(self) -> None:
        if self.scales not in (1, 2, 3):
            raise ValueError(f"scales must be 1, 2 or 3, got {self.scales}")
        if self.glances < 1:
            raise ValueError("need at least one glance per scale")
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.glance_width < 1:
            raise ValueError("glance_width must be positive")


_PRESETS = {
    "main": ArchSpec("main", scales=3, glances=3, with_projection=True),
    "3g": ArchSpec("3g", scales=3, glances=3, with_projection=False),
    "6g": ArchSpec("6g", scales=3, glances=6, with_projection=False),
    "12g": ArchSpec("12g", scales=3, glances=12, with_projection=False),
    "1s6g": ArchSpec("1s6g", scales=1, glances=6, with_projection=False),
    "2s3g": ArchSpec("2s3g", scales=2, glances=3, with_projection=False),
    "3s2g": ArchSpec("3s2g", scales=3, glances=2, with_projection=False),
}


def _normalize(name: str) -> str:
    return name.lower().replace("-", "").replace("_", "").replace(" ", "")


def list_presets() -> dict[str, ArchSpec]:
    """All named presets, keyed by canonical name."""
    return dict(_PRESETS)


def resolve_preset(name: str, num_classes: int = 20) -> ArchSpec:
    key = _normalize(name)
    if key not in _PRESETS:
        raise ValueError(f"unknown architecture preset {name!r}; "
                         f"choose from {sorted(_PRESETS)}")
    return replace(_PRESETS[key], num_classes=num_classes)


def dilation_cycle(glances: int) -> tuple[int, ...]:
    """Dilations 1,2,3 repeated cyclically, truncated to the glance count."""
    return tuple((k % 3) + 1 for k in range(glances))


class Conv2d:
    def __init__(self, params: ParamSet, rng, name: str, ci: int, co: int,
                 k: int, dilation: int = 1, bias: bool = False):
        self.name = name
        self.ci, self.co, self.k, self.dilation = ci, co, k, dilation
        self.padding = dilation if k == 3 else 0
        self.weight = params.add_param(
            f"{name}.weight", Tensor(he_normal(rng, (co, ci, k, k), co * k * k)))
        self.bias = None
        if bias:
            self.bias = params.add_param(
                f"{name}.bias", Tensor(np.zeros(co, dtype=np.float32)))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, bias=self.bias,
                          dilation=self.dilation, padding=self.padding)


class BatchNorm2d:
    def __init__(self, params: ParamSet, name: str, c: int):
        self.name = name
        self.c = c
        self.gamma = params.add_param(f"{name}.gamma",
                                      Tensor(np.ones(c, dtype=np.float32)))
        self.beta = params.add_param(f"{name}.beta",
                                     Tensor(np.zeros(c, dtype=np.float32)))
        self.running_mean = params.add_buffer(f"{name}.running_mean",
                                              np.zeros(c, dtype=np.float32))
        self.running_var = params.add_buffer(f"{name}.running_var",
                                             np.ones(c, dtype=np.float32))

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batchnorm2d(x, self.gamma, self.beta, self.running_mean,
                               self.running_var, training=training)


class ConvBlock:
    """3x3 (or 1x1) convolution, batchnorm, ReLU. No conv bias: batchnorm's
    beta makes it redundant."""

    def __init__(self, params, rng, name, ci, co, k, dilation=1):
        self.conv = Conv2d(params, rng, f"{name}.conv", ci, co, k, dilation)
        self.bn = BatchNorm2d(params, f"{name}.bn", co)

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.relu(self.bn(self.conv(x), training))


class GlanceModule:
    """Three 3x3 convolutions sharing one dilation: ci -> 32 -> 32 -> 32."""

    def __init__(self, params, rng, name, ci, width, dilation):
        self.blocks = [
            ConvBlock(params, rng, f"{name}.b1", ci, width, 3, dilation),
            ConvBlock(params, rng, f"{name}.b2", width, width, 3, dilation),
            ConvBlock(params, rng, f"{name}.b3", width, width, 3, dilation),
        ]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for block in self.blocks:
            x = block(x, training)
        return x


class ProjectionModule:
    """Three 3x3 convolutions at dilation 1 keeping the channel count."""

    def __init__(self, params, rng, name, c):
        self.blocks = [ConvBlock(params, rng, f"{name}.b{i}", c, c, 3, 1)
                       for i in (1, 2, 3)]

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        for block in self.blocks:
            x = block(x, training)
        return x


class _Stage:
    __slots__ = ("glances", "projection", "side_conv", "side_bn", "kept_channels")

    def __init__(self):
        self.glances = []
        self.projection = None
        self.side_conv = None
        self.side_bn = None
        self.kept_channels = 0


class Network:
    """A built network: layer objects plus their ParamSet.

    ``forward`` records the channel count of every concatenation buffer,
    slice result, side output and fusion in ``channel_walk``, asserting each
    against the closed-form expectation as it goes.
    """

    def __init__(self, spec: ArchSpec, seed: int, inject_image: bool = True):
        spec.validate()
        self.spec = spec
        self.seed = seed
        self.inject_image = inject_image
        self.params = ParamSet()
        self.channel_walk: list[int] = []
        rng = np.random.Generator(np.random.PCG64(seed))

        width = spec.glance_width
        img_c = 3
        dils = dilation_cycle(spec.glances)
        self.stages: list[_Stage] = []
        carried = 0
        for s in range(1, spec.scales + 1):
            stage = _Stage()
            extra = img_c if inject_image else 0
            for k in range(1, spec.glances + 1):
                if s == 1 and k == 1:
                    ci = img_c
                elif k == 1:
                    ci = carried + extra
                else:
                    ci = carried + width * (k - 1) + extra
                stage.glances.append(GlanceModule(
                    self.params, rng, f"scale{s}.glance{k}", ci, width, dils[k - 1]))
            kept = carried + width * spec.glances
            stage.kept_channels = kept
            if spec.with_projection:
                stage.projection = ProjectionModule(
                    self.params, rng, f"scale{s}.projection", kept)
            if spec.scales == 1:
                # the lone side output is the network output: bias, no bn/relu
                stage.side_conv = Conv2d(self.params, rng, f"scale{s}.side",
                                         kept, spec.num_classes, 1, bias=True)
            else:
                stage.side_conv = Conv2d(self.params, rng, f"scale{s}.side",
                                         kept, spec.num_classes, 1)
                stage.side_bn = BatchNorm2d(self.params, f"scale{s}.side_bn",
                                            spec.num_classes)
            self.stages.append(stage)
            carried = kept

        self.decoder = None
        if spec.scales > 1:
            self.decoder = Conv2d(self.params, rng, "decoder",
                                  spec.scales * spec.num_classes,
                                  spec.num_classes, 1, bias=True)

    # -- forward ---------------------------------------------------------

    def forward(self, image, training: bool = False):
        """Run the network; returns (prediction, side outputs).

        The prediction has the input's spatial size and num_classes
        channels. Input height and width must be divisible by
        2^(scales - 1) so pooling stays even.
        """
        if not isinstance(image, Tensor):
            image = Tensor(image)
        n, c, h, w = image.shape
        if c != 3:
            raise ValueError(f"expected a 3-channel image, got {c} channels")
        div = 2 ** (self.spec.scales - 1)
        if h % div or w % div:
            raise ValueError(
                f"input {h}x{w} not divisible by {div} (needed for pooling)")

        spec = self.spec
        width = spec.glance_width
        inject = self.inject_image
        walk: list[int] = []
        sides: list[Tensor] = []
        carried = None
        carried_c = 0
        for s, stage in enumerate(self.stages, 1):
            hs, ws = h >> (s - 1), w >> (s - 1)
            if s == 1:
                image_s = image
                buf = image
            else:
                image_s = ops.bilinear_resize(image, hs, ws)
                parts = [carried] + ([image_s] if inject else [])
                buf = ops.concat_channels(parts) if len(parts) > 1 else parts[0]
                walk.append(buf.shape[1])
            extra = 3 if inject else 0
            outs = []
            for k, glance in enumerate(stage.glances, 1):
                outs.append(glance(buf, training))
                parts = ([carried] if s > 1 else []) + outs \
                    + ([image_s] if inject else [])
                buf = ops.concat_channels(parts)
                assert buf.shape[1] == carried_c + width * k + extra, \
                    f"scale {s} glance {k}: buffer has {buf.shape[1]} channels"
                walk.append(buf.shape[1])
            if inject:
                kept = ops.slice_channels(buf, 0, buf.shape[1] - 3)
                walk.append(kept.shape[1])
            else:
                kept = buf
            assert kept.shape[1] == stage.kept_channels
            if stage.projection is not None:
                kept = stage.projection(kept, training)
            side = stage.side_conv(kept)
            if stage.side_bn is not None:
                side = ops.relu(stage.side_bn(side, training))
            sides.append(side)
            if s < spec.scales:
                carried = ops.avgpool2x2(kept)
                carried_c = kept.shape[1]

        walk.extend(side.shape[1] for side in sides)
        if self.decoder is None:
            y = sides[0]
        else:
            ups = [sides[0]]
            ups.extend(ops.bilinear_resize(side, h, w) for side in sides[1:])
            fused = ops.concat_channels(ups)
            walk.append(fused.shape[1])
            y = self.decoder(fused)
            walk.append(y.shape[1])
        assert y.shape == (n, spec.num_classes, h, w)
        self.channel_walk = walk
        return y, sides

    __call__ = forward

    # -- static accounting ----------------------------------------------

    def plan(self, n: int, h: int, w: int):
        """Symbolic walk of the forward dataflow.

        Returns (steps, walk) where each step is a dict with kind, name and
        the shape facts the analyzer needs. Kinds: conv, bn, relu, pool,
        resize. Zero-cost buffer moves (concat, slice) are omitted.
        """
        spec = self.spec
        div = 2 ** (spec.scales - 1)
        if h % div or w % div:
            raise ValueError(
                f"resolution {h}x{w} not divisible by {div} for {spec.name!r}")
        width = spec.glance_width
        inject = self.inject_image
        steps: list[dict] = []
        walk: list[int] = []

        def conv(layer: Conv2d, oh, ow):
            steps.append(dict(kind="conv", name=layer.name, ci=layer.ci,
                              co=layer.co, k=layer.k,
                              bias=layer.bias is not None, n=n, oh=oh, ow=ow))

        def bn_relu(base: str, c, oh, ow):
            steps.append(dict(kind="bn", name=f"{base}.bn", c=c, n=n, oh=oh, ow=ow))
            steps.append(dict(kind="relu", name=f"{base}.relu", c=c, n=n, oh=oh, ow=ow))

        carried_c = 0
        for s, stage in enumerate(self.stages, 1):
            hs, ws = h >> (s - 1), w >> (s - 1)
            if s > 1:
                steps.append(dict(kind="resize", name=f"scale{s}.image_resize",
                                  c=3, n=n, oh=hs, ow=ws))
                walk.append(carried_c + (3 if inject else 0))
            for k, glance in enumerate(stage.glances, 1):
                for b, block in enumerate(glance.blocks, 1):
                    conv(block.conv, hs, ws)
                    bn_relu(f"scale{s}.glance{k}.b{b}", width, hs, ws)
                walk.append(carried_c + width * k + (3 if inject else 0))
            if inject:
                walk.append(stage.kept_channels)
            if stage.projection is not None:
                for b, block in enumerate(stage.projection.blocks, 1):
                    conv(block.conv, hs, ws)
                    bn_relu(f"scale{s}.projection.b{b}", stage.kept_channels, hs, ws)
            conv(stage.side_conv, hs, ws)
            if stage.side_bn is not None:
                steps.append(dict(kind="bn", name=f"scale{s}.side_bn",
                                  c=spec.num_classes, n=n, oh=hs, ow=ws))
                steps.append(dict(kind="relu", name=f"scale{s}.side_relu",
                                  c=spec.num_classes, n=n, oh=hs, ow=ws))
            if s < spec.scales:
                steps.append(dict(kind="pool", name=f"scale{s}.pool",
                                  c=stage.kept_channels, n=n,
                                  oh=hs // 2, ow=ws // 2))
            carried_c = stage.kept_channels

        walk.extend([spec.num_classes] * spec.scales)
        if self.decoder is not None:
            for s in range(2, spec.scales + 1):
                steps.append(dict(kind="resize", name=f"decoder.upsample{s}",
                                  c=spec.num_classes, n=n, oh=h, ow=w))
            walk.append(spec.scales * spec.num_classes)
            conv(self.decoder, h, w)
            walk.append(spec.num_classes)
        return steps, walk


def build_network(spec_or_name, seed: int = 42, num_classes: int | None = None,
                  inject_image: bool = True) -> Network:
    """Build a network from an ArchSpec or a preset name.

    ``inject_image=False`` drops the image re-concatenation at every buffer;
    it exists for the structural mutation test that pins down how many
    parameters the re-injection accounts for.
    """
    if isinstance(spec_or_name, ArchSpec):
        spec = spec_or_name
        if num_classes is not None:
            spec = replace(spec, num_classes=num_classes)
    else:
        spec = resolve_preset(spec_or_name, num_classes if num_classes else 20)
    return Network(spec, seed, inject_image=inject_image)
