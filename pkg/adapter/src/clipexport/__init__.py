"""Bridge from pretrained vision-language models to the fusion engine's file formats."""

__version__ = "0.1.0"

from .extract import (AdapterConfig, embed_texts, extract_dense_features,
                      extract_object_features, masked_crop, preprocess, tight_box)
from .model import (DEFAULT_MODEL, TINY_DEBUG_MODEL, ModelBundle, encode_dense,
                    encode_images, encode_texts, load_bundle, tiny_random_bundle)
