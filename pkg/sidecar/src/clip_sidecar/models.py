"""CLIP vision tower: embeddings, intermediate activations, attention maps.

Weights load from a local snapshot directory named by the
CLIP_SIDECAR_CACHE environment variable; the service never downloads at
request time. Without a cache the tower falls back to a randomly
initialized model of the same architecture (ViT-B/32 vision encoder):
useless for semantics, but every served quantity keeps its contract
(identical inputs embed identically, attentions are probabilities), which
is what the integration tests rely on.
"""

from __future__ import annotations

import logging
import os
from pathlib import Path

import torch
import torch.nn.functional as F
from transformers import CLIPVisionConfig, CLIPVisionModelWithProjection

log = logging.getLogger("sidecar")

CACHE_ENV = "CLIP_SIDECAR_CACHE"

# CLIP's published channel normalization.
CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class VisionTower:
    """Inference wrapper around a CLIP vision+projection model."""

    def __init__(self, model: CLIPVisionModelWithProjection, source: str):
        self.model = model.eval()
        self.source = source
        self.input_size = model.config.image_size
        self._mean = torch.tensor(CLIP_MEAN).view(1, 3, 1, 1)
        self._std = torch.tensor(CLIP_STD).view(1, 3, 1, 1)

    def preprocess(self, images: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) in [0, 1] -> resized, channel-normalized pixels.

        Stays inside the autograd graph so loss gradients reach the caller's
        original image tensor.
        """
        if images.shape[-2:] != (self.input_size, self.input_size):
            images = F.interpolate(images, size=(self.input_size, self.input_size),
                                   mode="bilinear", align_corners=False)
        return (images - self._mean) / self._std

    def forward_features(self, images: torch.Tensor, layers: tuple[int, ...]):
        """Returns (embeddings (B, D), per-layer hidden states).

        Layer k means the output of the k-th transformer block (1-based,
        matching the residual-stage counting the loss configuration uses).
        """
        out = self.model(pixel_values=self.preprocess(images), output_hidden_states=True)
        depth = len(out.hidden_states) - 1
        for layer in layers:
            if not 1 <= layer <= depth:
                raise ValueError(f"layer {layer} outside 1..{depth}")
        return out.image_embeds, [out.hidden_states[k] for k in layers]

    @torch.no_grad()
    def attention_relevancy(self, image: torch.Tensor) -> torch.Tensor:
        """Patch-grid saliency from self-attention.

        Head-averages each layer's attention probabilities, averages the
        per-layer maps, then reads the class-token row restricted to the
        patch tokens; reshaped to the (grid, grid) patch layout.
        """
        out = self.model(pixel_values=self.preprocess(image),
                         output_attentions=True)
        stacked = torch.stack(out.attentions)        # (L, B, heads, T, T)
        per_layer = stacked.mean(dim=2)              # head average
        mean_map = per_layer.mean(dim=0)[0]          # layer average, batch 0
        patches = mean_map[0, 1:]                    # class token -> patches
        grid = self.input_size // self.model.config.patch_size
        return patches.reshape(grid, grid)


def load_tower(mode: str = "auto") -> VisionTower:
    """mode: auto (cache if present, else random), cache (required), random."""
    cache = os.environ.get(CACHE_ENV, "")
    if mode not in ("auto", "cache", "random"):
        raise ValueError(f"model mode must be auto, cache or random, got {mode!r}")
    if mode in ("auto", "cache") and cache and Path(cache).exists():
        model = CLIPVisionModelWithProjection.from_pretrained(
            cache, attn_implementation="eager")
        log.info("loaded pretrained weights from %s", cache)
        return VisionTower(model, source=f"cache:{cache}")
    if mode == "cache":
        raise FileNotFoundError(
            f"model mode 'cache' but {CACHE_ENV}={cache!r} is not a usable snapshot")
    torch.manual_seed(0)  # reproducible fallback weights
    model = CLIPVisionModelWithProjection(CLIPVisionConfig(attn_implementation="eager"))
    log.warning("no weight cache (%s unset or missing); using randomly initialized "
                "weights - losses are structurally valid but not semantic", CACHE_ENV)
    return VisionTower(model, source="random")
