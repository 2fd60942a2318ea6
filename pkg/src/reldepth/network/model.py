"""The miniature residual network and its prediction helpers.

Topology: a 3x3 stem convolution, one 2x2 max pool, three residual stages
(strides 1/2/2, so the output grid is 1/8 of the input), two 1x1
pre-activation convolutions, and a linear 1x1 head whose channel count is 1
for the ranking and regression heads or the bin count for classification.
"""

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..binning import BinningScheme, bin_to_depth
from ..imagery.augment import resize_array_bilinear
from ..imagery.types import DEPTH, DepthMap, Image
from .blocks import ResidualBlock
from .layers import ChannelNorm, Conv2d, MaxPool2, ReLU

RANKING = "ranking"
CLASSIFICATION = "classification"
REGRESSION = "regression"
HEAD_MODES = (RANKING, CLASSIFICATION, REGRESSION)


@dataclass
class NetConfig:
    in_channels: int = 3
    stage_widths: tuple = (16, 32, 64)
    stage_blocks: tuple = (2, 2, 2)
    stage_strides: tuple = (1, 2, 2)
    head_widths: tuple = (64, 32)
    head_mode: str = RANKING
    head_channels: int = 1
    seed: int = 0

    def __post_init__(self):
        self.stage_widths = tuple(int(w) for w in self.stage_widths)
        self.stage_blocks = tuple(int(b) for b in self.stage_blocks)
        self.stage_strides = tuple(int(s) for s in self.stage_strides)
        self.head_widths = tuple(int(w) for w in self.head_widths)
        if not (len(self.stage_widths) == len(self.stage_blocks) == len(self.stage_strides)):
            raise ValueError("stage widths, blocks and strides must align")
        if self.head_mode not in HEAD_MODES:
            raise ValueError(f"unknown head mode {self.head_mode!r}")
        if self.head_mode == CLASSIFICATION:
            if self.head_channels < 2:
                raise ValueError("classification heads need >= 2 channels")
        elif self.head_channels != 1:
            raise ValueError(f"{self.head_mode} heads have exactly 1 channel")

    @property
    def total_stride(self):
        s = 2  # max pool
        for st in self.stage_strides:
            s *= st
        return s

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class DepthNet:
    def __init__(self, config: NetConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        w0 = config.stage_widths[0]
        self.stem = Conv2d(config.in_channels, w0, 3, stride=1, rng=rng)
        self.pool = MaxPool2()
        self.stages = []
        prev = w0
        for width, blocks, stride in zip(config.stage_widths, config.stage_blocks,
                                         config.stage_strides):
            stage = []
            for b in range(blocks):
                stage.append(ResidualBlock(prev, width, stride if b == 0 else 1, rng))
                prev = width
            self.stages.append(stage)
        self.head_hidden = []
        for width in config.head_widths:
            self.head_hidden.append(
                (ChannelNorm(prev), ReLU(), Conv2d(prev, width, 1, pad=0, rng=rng))
            )
            prev = width
        self.final_norm = ChannelNorm(prev)
        self.final_relu = ReLU()
        self.head = Conv2d(prev, config.head_channels, 1, pad=0, rng=rng)
        self._head_in_channels = prev

    # ---- parameter plumbing -------------------------------------------------

    def named_params(self):
        named = [("stem.weight", self.stem.weight), ("stem.bias", self.stem.bias)]
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                named.extend(
                    (f"stage{si}.block{bi}.{n}", t) for n, t in block.params()
                )
        for hi, (norm, _, conv) in enumerate(self.head_hidden):
            named.extend((f"head{hi}.norm.{n}", t) for n, t in norm.params())
            named.extend((f"head{hi}.conv.{n}", t) for n, t in conv.params())
        named.extend((f"final.norm.{n}", t) for n, t in self.final_norm.params())
        named.extend((f"head.{n}", t) for n, t in self.head.params())
        return named

    def named_norms(self):
        named = []
        for si, stage in enumerate(self.stages):
            for bi, block in enumerate(stage):
                named.extend(
                    (f"stage{si}.block{bi}.{n}", norm) for n, norm in block.norms()
                )
        for hi, (norm, _, _) in enumerate(self.head_hidden):
            named.append((f"head{hi}.norm", norm))
        named.append(("final.norm", self.final_norm))
        return named

    def zero_grad(self):
        for _, t in self.named_params():
            t.zero_grad()

    # ---- forward / backward -------------------------------------------------

    def forward(self, x):
        """(N, C, H, W) float64 -> (N, head_channels, H/stride, W/stride)."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(f"expected (N, {self.config.in_channels}, H, W), got {x.shape}")
        stride = self.config.total_stride
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ValueError(
                f"input {x.shape[2]}x{x.shape[3]} not divisible by total stride {stride}"
            )
        out = self.pool.forward(self.stem.forward(x))
        for stage in self.stages:
            for block in stage:
                out = block.forward(out)
        for norm, relu, conv in self.head_hidden:
            out = conv.forward(relu.forward(norm.forward(out)))
        out = self.final_relu.forward(self.final_norm.forward(out))
        return self.head.forward(out)

    def backward(self, dout):
        d = self.head.backward(dout)
        d = self.final_norm.backward(self.final_relu.backward(d))
        for norm, relu, conv in reversed(self.head_hidden):
            d = norm.backward(relu.backward(conv.backward(d)))
        for stage in reversed(self.stages):
            for block in reversed(stage):
                d = block.backward(d)
        return self.stem.backward(self.pool.backward(d))

    # ---- head surgery -------------------------------------------------------

    def re_head(self, head_mode, head_channels, seed=None):
        """Swap the final convolution for a freshly initialized one.

        The trunk and the 1x1 hidden convolutions are kept; only the last
        layer is re-drawn, with the same init distribution as any fresh
        layer. The normalization feeding the new head is recalibrated on the
        next batch: trunk activations drift during training, and a fresh
        layer expects freshly standardized inputs.
        """
        if seed is None:
            seed = self.config.seed + 1
        self.config = replace(self.config, head_mode=head_mode,
                              head_channels=head_channels)
        rng = np.random.default_rng(seed)
        self.head = Conv2d(self._head_in_channels, head_channels, 1, pad=0, rng=rng)
        self.final_norm = ChannelNorm(self._head_in_channels)

    # ---- serialization ------------------------------------------------------

    def state_arrays(self):
        arrays = {name: t.values for name, t in self.named_params()}
        for name, norm in self.named_norms():
            arrays[f"{name}.mu"] = norm.mu
            arrays[f"{name}.sigma"] = norm.sigma
        return arrays

    def calibrated_flags(self):
        return {name: norm.calibrated for name, norm in self.named_norms()}

    def load_state(self, arrays, calibrated):
        for name, t in self.named_params():
            src = arrays[name]
            if src.shape != t.values.shape:
                raise ValueError(f"shape mismatch for {name}: {src.shape} vs {t.values.shape}")
            t.values = src.astype(np.float64).copy()
            t.zero_grad()
        for name, norm in self.named_norms():
            norm.mu = arrays[f"{name}.mu"].astype(np.float64).copy()
            norm.sigma = arrays[f"{name}.sigma"].astype(np.float64).copy()
            norm.calibrated = bool(calibrated[name])


def stack_images(images):
    """List of equally sized Images -> (N, C, H, W) float64 batch."""
    if not images:
        raise ValueError("empty image batch")
    shape = images[0].data.shape
    for img in images:
        if img.data.shape != shape:
            raise ValueError("images in a batch must share one shape")
    return np.stack([img.data.transpose(2, 0, 1) for img in images]).astype(np.float64)


def predict_scores(net: DepthNet, image: Image):
    """Single-channel head output for one image, as an (h, w) array."""
    if net.config.head_channels != 1:
        raise ValueError("predict_scores needs a 1-channel head")
    out = net.forward(stack_images([image]))
    return out[0, 0]


def predict_depth(net: DepthNet, image: Image, scheme: BinningScheme = None) -> DepthMap:
    """Decode a metric depth map at input resolution.

    Classification heads take the per-pixel argmax label (ties to the
    smallest label) and decode it to the bin's log-space center; regression
    heads exponentiate their log-depth scores. The decoded low-resolution
    depth is upsampled bilinearly.
    """
    mode = net.config.head_mode
    if mode == CLASSIFICATION:
        if scheme is None:
            raise ValueError("classification decoding needs a binning scheme")
        if scheme.bins != net.config.head_channels:
            raise ValueError(
                f"scheme has {scheme.bins} bins, head has {net.config.head_channels}"
            )
        logits = net.forward(stack_images([image]))[0]  # (B, h, w)
        labels = logits.argmax(axis=0) + 1
        coarse = bin_to_depth(labels, scheme)
    elif mode == REGRESSION:
        coarse = np.exp(predict_scores(net, image))
    else:
        raise ValueError("ranking heads produce relative scores, not metric depth")
    full = resize_array_bilinear(coarse, image.height, image.width)
    return DepthMap(full.astype(np.float32), None, kind=DEPTH)


def predict_relative(net: DepthNet, image: Image) -> DepthMap:
    """Depth-ordered map from a ranking head (smaller value = closer).

    Ranking scores grow toward the camera, so they are reflected and shifted
    to a positive range; any strictly decreasing transform would score the
    same under ordinal metrics.
    """
    if net.config.head_mode != RANKING:
        raise ValueError("predict_relative needs a ranking head")
    scores = predict_scores(net, image)
    full = resize_array_bilinear(scores, image.height, image.width)
    depth_like = full.max() - full + 1.0
    return DepthMap(depth_like.astype(np.float32), None, kind=DEPTH)
