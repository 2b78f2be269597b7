"""Feature extraction for multimodal KG datasets.

Runs frozen pretrained encoders (a 12-layer base uncased text encoder, a
16-layer convolutional image encoder) over the entities of a triple dataset
and writes one fixed-width feature file per modality in the MMFT format
consumed by downstream retrieval pipelines.
"""

from .assets import EntityAssets, scan_dataset
from .encoders import ImageEncoder, TextEncoder
from .mmft import write_mmft

__version__ = "0.1.0"

__all__ = [
    "EntityAssets",
    "ImageEncoder",
    "TextEncoder",
    "scan_dataset",
    "write_mmft",
]
