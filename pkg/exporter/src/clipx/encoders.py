"""Encoders mapping text prompts and images into one joint space.

Two implementations: a deterministic color-prototype encoder that needs no
model weights (labels must name a color; images are summarized by mean
RGB), and an optional CLIP wrapper for environments where pretrained
weights are available. Both expose the same interface:

    dimension -> int
    encode_text(prompts) -> (n, d) float32
    encode_images(images) -> (n, d) float32, images are uint8 HxWx3 arrays
"""

from __future__ import annotations

import numpy as np

PROMPT_TEMPLATE = "Image of a {}"


class UnknownLabelError(KeyError):
    """The encoder has no representation for this label."""


def prompt_for(label: str) -> str:
    if not label:
        raise ValueError("label must be non-empty")
    return PROMPT_TEMPLATE.format(label)


# sRGB prototypes in [0, 1]; black is excluded because its projection is
# the zero vector and cannot be normalized
COLOR_PROTOTYPES = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 0.8, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "cyan": (0.0, 1.0, 1.0),
    "magenta": (1.0, 0.0, 1.0),
    "orange": (1.0, 0.55, 0.0),
    "purple": (0.55, 0.0, 1.0),
    "pink": (1.0, 0.6, 0.75),
    "brown": (0.55, 0.3, 0.1),
}


class ColorPrototypeEncoder:
    """Deterministic encoder keyed on color words.

    Text: the first known color word in the prompt selects an RGB
    prototype, which is pushed through a fixed random linear map and
    normalized. Images: the mean RGB goes through the same map, so a patch
    dominated by a color lands near that color's text embedding.
    """

    variant = "color-prototype-v1"

    def __init__(self, dimension: int = 64, seed: int = 7):
        self.dimension = dimension
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((dimension, 3))

    def _embed_rgb(self, rgb: np.ndarray) -> np.ndarray:
        vec = self._projection @ np.asarray(rgb, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ValueError("degenerate all-black input has no direction")
        return (vec / norm).astype(np.float32)

    def color_of(self, text: str) -> str:
        for word in text.lower().replace("_", " ").split():
            if word in COLOR_PROTOTYPES:
                return word
        raise UnknownLabelError(f"no known color word in {text!r}")

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        return np.stack([
            self._embed_rgb(COLOR_PROTOTYPES[self.color_of(p)]) for p in prompts])

    def encode_images(self, images: list[np.ndarray]) -> np.ndarray:
        out = np.empty((len(images), self.dimension), dtype=np.float32)
        for i, image in enumerate(images):
            pixels = np.asarray(image, dtype=np.float64) / 255.0
            out[i] = self._embed_rgb(pixels.reshape(-1, 3).mean(axis=0))
        return out


class ClipEncoder:
    """CLIP wrapper; requires downloadable pretrained weights."""

    def __init__(self, variant: str = "openai/clip-vit-base-patch32",
                 device: str = "cpu"):
        self.variant = variant
        self.device = device
        try:
            from transformers import CLIPModel, CLIPProcessor
            self._model = CLIPModel.from_pretrained(variant).to(device).eval()
            self._processor = CLIPProcessor.from_pretrained(variant)
        except Exception as exc:
            raise RuntimeError(
                f"could not load CLIP variant {variant!r}: {exc}. Install the "
                "[clip] extra and pre-download the weights, or use "
                "ColorPrototypeEncoder for offline runs.") from exc
        self.dimension = int(self._model.config.projection_dim)

    def encode_text(self, prompts: list[str]) -> np.ndarray:
        import torch
        with torch.no_grad():
            inputs = self._processor(text=prompts, return_tensors="pt", padding=True)
            feats = self._model.get_text_features(**inputs.to(self.device))
        return feats.cpu().numpy().astype(np.float32)

    def encode_images(self, images: list[np.ndarray]) -> np.ndarray:
        import torch
        with torch.no_grad():
            inputs = self._processor(images=list(images), return_tensors="pt")
            feats = self._model.get_image_features(**inputs.to(self.device))
        return feats.cpu().numpy().astype(np.float32)


def make_encoder(kind: str = "color", **kwargs):
    if kind == "color":
        return ColorPrototypeEncoder(**kwargs)
    if kind == "clip":
        return ClipEncoder(**kwargs)
    raise ValueError(f"unknown encoder kind {kind!r}")
