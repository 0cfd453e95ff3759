"""Vision-language model loading and encoding primitives.

The default variant is the ViT-L/14@336px class of CLIP (768-dim joint
space). `load_bundle` pulls pretrained weights; `tiny_random_bundle` builds
a small randomly initialized model with the same 768-dim projection and a
byte-level tokenizer, so every code path runs offline (useful for tests and
format debugging via the `tiny-debug` model id).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from transformers import CLIPConfig, CLIPModel, CLIPTextConfig, CLIPVisionConfig
from transformers.models.clip.tokenization_clip import CLIPTokenizer

DEFAULT_MODEL = "openai/clip-vit-large-patch14-336"
TINY_DEBUG_MODEL = "tiny-debug"

# CLIP-style channel statistics used for pixel normalization
IMAGE_MEAN = np.array([0.48145466, 0.4578275, 0.40821073], dtype=np.float32)
IMAGE_STD = np.array([0.26862954, 0.26130258, 0.27577711], dtype=np.float32)


@dataclass
class ModelBundle:
    model: CLIPModel
    tokenizer: CLIPTokenizer
    device: str

    @property
    def dim(self) -> int:
        return int(self.model.config.projection_dim)

    @property
    def image_size(self) -> int:
        return int(self.model.config.vision_config.image_size)

    @property
    def patch_size(self) -> int:
        return int(self.model.config.vision_config.patch_size)


def _as_tensor(output) -> torch.Tensor:
    # transformers >= 5 returns an output object from get_*_features
    if torch.is_tensor(output):
        return output
    if hasattr(output, "pooler_output"):
        return output.pooler_output
    raise TypeError(f"unexpected model output type {type(output)!r}")


def load_bundle(model_id: str = DEFAULT_MODEL, device: str = "cpu") -> ModelBundle:
    if model_id == TINY_DEBUG_MODEL:
        return tiny_random_bundle(device=device)
    model = CLIPModel.from_pretrained(model_id).to(device).eval()
    tokenizer = CLIPTokenizer.from_pretrained(model_id)
    return ModelBundle(model=model, tokenizer=tokenizer, device=device)


def _bytes_to_unicode() -> dict[int, str]:
    bs = (list(range(ord("!"), ord("~") + 1))
          + list(range(ord("\xa1"), ord("\xac") + 1))
          + list(range(ord("\xae"), ord("\xff") + 1)))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return dict(zip(bs, [chr(c) for c in cs]))


def tiny_tokenizer() -> CLIPTokenizer:
    """Byte-level CLIP tokenizer with no merges; needs no vocabulary files."""
    chars = list(_bytes_to_unicode().values())
    vocab: dict[str, int] = {}
    for ch in chars:
        vocab[ch] = len(vocab)
    for ch in chars:
        vocab[ch + "</w>"] = len(vocab)
    vocab["<|startoftext|>"] = len(vocab)
    vocab["<|endoftext|>"] = len(vocab)
    return CLIPTokenizer(vocab=vocab, merges=[])


def tiny_random_bundle(device: str = "cpu", seed: int = 0, image_size: int = 32,
                       patch_size: int = 8, projection_dim: int = 768) -> ModelBundle:
    """Small random CLIP with the default model's 768-dim joint space."""
    tokenizer = tiny_tokenizer()
    config = CLIPConfig(
        projection_dim=projection_dim,
        text_config=CLIPTextConfig(
            hidden_size=32, intermediate_size=64, num_hidden_layers=2,
            num_attention_heads=2, projection_dim=projection_dim,
            vocab_size=len(tokenizer), max_position_embeddings=77,
            bos_token_id=tokenizer.bos_token_id, eos_token_id=tokenizer.eos_token_id,
            pad_token_id=tokenizer.pad_token_id,
        ),
        vision_config=CLIPVisionConfig(
            hidden_size=32, intermediate_size=64, num_hidden_layers=2,
            num_attention_heads=2, projection_dim=projection_dim,
            image_size=image_size, patch_size=patch_size,
        ),
    )
    torch.manual_seed(seed)
    model = CLIPModel(config).to(device).eval()
    return ModelBundle(model=model, tokenizer=tokenizer, device=device)


def encode_images(bundle: ModelBundle, pixels: np.ndarray) -> np.ndarray:
    """(B, H, W, 3) normalized pixel batch -> (B, C) unit image embeddings."""
    x = torch.from_numpy(np.transpose(pixels, (0, 3, 1, 2))).to(bundle.device)
    with torch.no_grad():
        feats = _as_tensor(bundle.model.get_image_features(pixel_values=x))
    out = feats.cpu().numpy().astype(np.float64)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def encode_texts(bundle: ModelBundle, texts: list[str]) -> np.ndarray:
    """Text batch -> (B, C) unit text embeddings."""
    toks = bundle.tokenizer(texts, padding=True, truncation=True, max_length=77,
                            return_tensors="pt").to(bundle.device)
    with torch.no_grad():
        feats = _as_tensor(bundle.model.get_text_features(**toks))
    out = feats.cpu().numpy().astype(np.float64)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def encode_dense(bundle: ModelBundle, pixels: np.ndarray) -> np.ndarray:
    """One normalized image -> (H_p, W_p, C) unit patch features.

    Reparameterized final block: the last attention layer is replaced by its
    value path (v_proj then out_proj, no token mixing), keeping the residual
    and MLP, so patch tokens stay aligned with the text space.
    """
    vm = bundle.model.vision_model
    x = torch.from_numpy(np.transpose(pixels[None], (0, 3, 1, 2))).to(bundle.device)
    with torch.no_grad():
        h = vm.embeddings(x)
        h = vm.pre_layrnorm(h)
        for layer in vm.encoder.layers[:-1]:
            out = layer(h, attention_mask=None)
            h = out[0] if isinstance(out, tuple) else out
        last = vm.encoder.layers[-1]
        y = last.layer_norm1(h)
        v = last.self_attn.out_proj(last.self_attn.v_proj(y))
        h = h + v
        h = h + last.mlp(last.layer_norm2(h))
        h = vm.post_layernorm(h)
        patch = bundle.model.visual_projection(h[:, 1:, :])  # drop the class token
    grid = int(round((patch.shape[1]) ** 0.5))
    out = patch[0].cpu().numpy().astype(np.float64).reshape(grid, grid, -1)
    norms = np.linalg.norm(out, axis=2, keepdims=True)
    return out / np.maximum(norms, 1e-12)
