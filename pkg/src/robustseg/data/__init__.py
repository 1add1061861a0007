"""Toy scenes, prompts, dataset splits and on-disk records."""

from .build import DEFAULT_COUNTS, SPLITS, build_dataset, load_split, load_train_images, variant_spec
from .io import Manifest, read_record, write_record
from .prompts import Prompt, box_prompt, point_prompt
from .records import ImageMaskRecord
from .scenes import SceneConfig, generate_scene, rasterize, visible_masks

__all__ = [
    "DEFAULT_COUNTS",
    "ImageMaskRecord",
    "Manifest",
    "Prompt",
    "SPLITS",
    "SceneConfig",
    "box_prompt",
    "build_dataset",
    "generate_scene",
    "load_split",
    "load_train_images",
    "point_prompt",
    "rasterize",
    "read_record",
    "variant_spec",
    "visible_masks",
    "write_record",
]
