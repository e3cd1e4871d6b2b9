"""Skin-tone matching between face and body textures."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class TextureStats:
    mean: tuple[float, float, float]
    std: tuple[float, float, float]
    count: int

    def to_json(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "count": self.count}

    @classmethod
    def from_json(cls, d: dict) -> "TextureStats":
        return cls(tuple(d["mean"]), tuple(d["std"]), int(d["count"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "TextureStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def redmean_distance(c1: Sequence[float], c2: Sequence[float], variant: str = "standard") -> float:
    """Low-cost perceptual RGB distance weighted by the mean red level.

    ``variant="standard"`` is the usual redmean metric. ``variant="printed"``
    evaluates the alternative form with an additive red term and a
    ``(255 + r)/256`` blue weight; it is kept for reproducing results that
    used it and is not zero for identical colours.
    """
    r1, g1, b1 = (float(v) for v in c1)
    r2, g2, b2 = (float(v) for v in c2)
    rbar = (r1 + r2) / 2
    dr, dg, db = r1 - r2, g1 - g2, b1 - b2
    if variant == "standard":
        return math.sqrt((2 + rbar / 256) * dr * dr + 4 * dg * dg + (2 + (255 - rbar) / 256) * db * db)
    if variant == "printed":
        return math.sqrt((2 + rbar / 256) + dr * dr + 4 * dg * dg + (2 + (255 + rbar) / 256) * db * db)
    raise ValueError(f"unknown redmean variant {variant!r}")


def filter_candidates(face_mean, library: Sequence[TextureStats], bound: float, variant: str = "standard") -> list[int]:
    """Indices of library textures whose mean colour lies within ``bound`` of the face."""
    if not bound >= 0:
        raise ValueError("bound must be non-negative")
    return [i for i, s in enumerate(library) if redmean_distance(face_mean, s.mean, variant) <= bound]


def texture_stats(pixels: np.ndarray, mask: np.ndarray | None = None) -> TextureStats:
    """Per-channel mean and population standard deviation over masked pixels."""
    px = np.asarray(pixels, dtype=float)[..., :3]
    sel = px.reshape(-1, 3) if mask is None else px[np.asarray(mask, dtype=bool)]
    if sel.shape[0] == 0:
        raise ValueError("mask selects no pixels")
    return TextureStats(tuple(sel.mean(axis=0).tolist()), tuple(sel.std(axis=0).tolist()), int(sel.shape[0]))


def match_moments(body_pixels: np.ndarray, face_stats: TextureStats, skin_mask: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Shift and scale masked body pixels so each channel matches the face statistics.

    Channels with zero spread are only shifted. Unmasked pixels are returned
    unchanged; with ``clamp`` the result is limited to [0, 255].
    """
    px = np.asarray(body_pixels, dtype=float)
    mask = np.asarray(skin_mask, dtype=bool)
    if mask.shape != px.shape[:-1]:
        raise ValueError("mask shape must match the image's spatial shape")
    if mask.sum() < 2:
        raise ValueError("skin mask must select at least two pixels")
    out = px.copy()
    sel = px[mask][:, :3]
    mu = sel.mean(axis=0)
    sd = sel.std(axis=0)
    target_mu = np.asarray(face_stats.mean, dtype=float)
    target_sd = np.asarray(face_stats.std, dtype=float)
    scale = np.divide(target_sd, sd, out=np.ones(3), where=sd > 0)
    adjusted = (sel - mu) * scale + target_mu
    if clamp:
        adjusted = np.clip(adjusted, 0.0, 255.0)
    block = out[mask]
    block[:, :3] = adjusted
    out[mask] = block
    return out


def load_image(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=float)


def load_mask(path: str | Path) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def save_image(path: str | Path, pixels: np.ndarray) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(pixels, dtype=float)), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(path, format="PNG")
