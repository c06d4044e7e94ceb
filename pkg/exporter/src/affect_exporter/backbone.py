"""Frozen ViT-Base wrapper: image in, pooled 768-vector out.

Features are the mean of the final encoder layer's patch tokens; the class
token is excluded from the average. The backbone always runs in eval mode,
so repeated extraction of the same pixels is deterministic.
"""

from __future__ import annotations

import numpy as np
import torch
from PIL import Image

from affect_exporter.errors import SetupError

MODEL_NAME = "google/vit-base-patch16-224-in21k"
IMAGE_SIZE = 224
FEATURE_DIM = 768

# ViT's published preprocessing: scale to [0, 1], then (x - 0.5) / 0.5
_MEAN = 0.5
_STD = 0.5


class Backbone:
    def __init__(self, model, device: str = "cpu"):
        self.device = torch.device(device)
        self.model = model.to(self.device).eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    @classmethod
    def pretrained(cls, device: str = "cpu") -> "Backbone":
        """Load the ImageNet-21k ViT-Base weights (network / cache access)."""
        from transformers import ViTModel

        try:
            model = ViTModel.from_pretrained(MODEL_NAME)
        except Exception as exc:
            raise SetupError(f"cannot obtain weights for {MODEL_NAME}: {exc}") from exc
        return cls(model, device)

    @classmethod
    def random_init(cls, seed: int = 0, device: str = "cpu") -> "Backbone":
        """Architecture-faithful backbone with random weights (no download).

        Pooling, determinism, and output-format behavior do not depend on
        the weight values, so tests run offline against this.
        """
        from transformers import ViTConfig, ViTModel

        torch.manual_seed(seed)
        return cls(ViTModel(ViTConfig()), device)

    def preprocess(self, image: Image.Image) -> np.ndarray:
        """PIL image -> (3, 224, 224) float32 in the backbone's input space."""
        rgb = image.convert("RGB").resize((IMAGE_SIZE, IMAGE_SIZE), Image.BILINEAR)
        x = np.asarray(rgb, dtype=np.float32) / 255.0
        x = (x - _MEAN) / _STD
        return np.ascontiguousarray(x.transpose(2, 0, 1))

    def token_outputs(self, batch: np.ndarray) -> np.ndarray:
        """(B, 3, 224, 224) -> (B, 197, 768) last-layer tokens, class token first."""
        pixels = torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32))
        with torch.no_grad():
            hidden = self.model(pixel_values=pixels.to(self.device)).last_hidden_state
        return hidden.cpu().numpy()

    def extract(self, batch: np.ndarray) -> np.ndarray:
        """(B, 3, 224, 224) -> (B, 768) pooled features."""
        tokens = self.token_outputs(batch)
        return tokens[:, 1:, :].mean(axis=1).astype(np.float32)
