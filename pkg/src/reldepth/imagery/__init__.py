from .augment import augment, flip_depth, flip_image, resize_depth, resize_image
from .io import (
    ImageIOError,
    MalformedHeaderError,
    MalformedPayloadError,
    UnsupportedFormatError,
    load_image,
    load_pfm,
    save_image,
    save_pfm,
)
from .synth import generate_stereogram
from .types import (
    DEPTH,
    DISPARITY,
    DepthMap,
    Image,
    SynthSceneSpec,
    disparity_to_depth,
)

__all__ = [
    "DEPTH",
    "DISPARITY",
    "DepthMap",
    "Image",
    "ImageIOError",
    "MalformedHeaderError",
    "MalformedPayloadError",
    "SynthSceneSpec",
    "UnsupportedFormatError",
    "augment",
    "disparity_to_depth",
    "flip_depth",
    "flip_image",
    "generate_stereogram",
    "load_image",
    "load_pfm",
    "resize_depth",
    "resize_image",
    "save_image",
    "save_pfm",
]
