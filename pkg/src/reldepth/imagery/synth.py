"""Layered random-dot stereo scene generator.

Each scene is a stack of fronto-parallel planes: a full-frame background plus
random foreground rectangles, every layer carrying one integer disparity.
Layer textures are random color dots whose brightness increases with the
layer's disparity, so closer surfaces look brighter. That shading is the
monocular cue that makes the scenes learnable from a single view; stereo
geometry is untouched by it.

The left view is the composite of the layer textures; the right view is the
same composite with each layer shifted left by its disparity. Ground truth is
the left-view disparity with half-occluded and out-of-frame pixels masked
invalid, which guarantees left(p) == right(p - d) channel-wise at every valid
pixel.
"""

import numpy as np

from .types import DISPARITY, DepthMap, Image, SynthSceneSpec

# dot brightness = BASE + GAIN * d / d_max, then +-TEXTURE_JITTER texture noise
SHADE_BASE = 0.30
SHADE_GAIN = 0.65
TEXTURE_JITTER = 0.25


def _layer_regions(spec, rng):
    """Boolean coverage map per layer; layer 0 covers the full frame."""
    regions = [np.ones((spec.height, spec.width), dtype=bool)]
    for _ in spec.layer_disparities[1:]:
        h = int(rng.integers(max(2, spec.height // 4), max(3, spec.height // 2) + 1))
        w = int(rng.integers(max(2, spec.width // 4), max(3, spec.width // 2) + 1))
        top = int(rng.integers(0, spec.height - h + 1))
        left = int(rng.integers(0, spec.width - w + 1))
        region = np.zeros((spec.height, spec.width), dtype=bool)
        region[top:top + h, left:left + w] = True
        regions.append(region)
    return regions


def _layer_texture(spec, disparity, rng):
    """Random-dot RGB texture on an extended canvas (width + disparity)."""
    h, w = spec.height, spec.width + disparity
    shade = SHADE_BASE + SHADE_GAIN * disparity / spec.d_max
    dots = rng.random((h, w)) < spec.texture_density
    noise = rng.random((h, w, 3)) * 2.0 - 1.0
    tex = np.clip(shade + TEXTURE_JITTER * noise, 0.0, 1.0)
    tex *= dots[:, :, None]
    return tex.astype(np.float32)


def generate_stereogram(spec: SynthSceneSpec):
    """Render one scene.

    Returns (left, right, gt) where gt is a disparity-kind DepthMap aligned
    with the left image. The same spec (including seed) always produces a
    bit-identical triple.
    """
    rng = np.random.default_rng(spec.seed)
    regions = _layer_regions(spec, rng)
    textures = [
        _layer_texture(spec, d, rng) for d in spec.layer_disparities
    ]

    n_layers = len(regions)
    # Topmost covering layer per pixel, in both views. Layer k occupies
    # region_k in the left view and region_k shifted left by d_k in the right.
    label_left = np.zeros((spec.height, spec.width), dtype=np.int64)
    label_right = np.zeros((spec.height, spec.width), dtype=np.int64)
    cols = np.arange(spec.width)
    for k in range(n_layers):
        d = spec.layer_disparities[k]
        label_left[regions[k]] = k
        src = cols + d  # right-view column x shows layer texture column x + d
        covered = np.zeros((spec.height, spec.width), dtype=bool)
        inside = src < spec.width
        covered[:, inside] = regions[k][:, src[inside]]
        label_right[covered] = k

    left = np.zeros((spec.height, spec.width, 3), dtype=np.float32)
    right = np.zeros((spec.height, spec.width, 3), dtype=np.float32)
    gt = np.zeros((spec.height, spec.width), dtype=np.float32)
    valid = np.zeros((spec.height, spec.width), dtype=bool)
    for k in range(n_layers):
        d = spec.layer_disparities[k]
        sel = label_left == k
        left[sel] = textures[k][:, :spec.width][sel]
        gt[sel] = d
        sel_r = label_right == k
        right[sel_r] = textures[k][:, d:d + spec.width][sel_r]
        # valid: the matching right pixel exists and shows the same layer
        match_col = cols - d
        in_frame = np.zeros((spec.height, spec.width), dtype=bool)
        ok = match_col >= 0
        in_frame[:, ok] = label_right[:, match_col[ok]] == k
        valid |= sel & in_frame

    return (
        Image(left),
        Image(right),
        DepthMap(gt, valid, kind=DISPARITY),
    )
