"""File formats: datasets, images, checkpoints and configuration."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import load_config, parse_config
from .datasets import DatasetSpec, load_cifar10, load_dataset, load_image_folder, make_gratings
from .images import read_image, write_image

__all__ = [
    "Checkpoint", "load_checkpoint", "save_checkpoint", "load_config", "parse_config", "DatasetSpec",
    "load_cifar10", "load_dataset", "load_image_folder", "make_gratings", "read_image", "write_image",
]
