"""Cloud of Structured Objects scene sampling, rendering and dataset export.

Coordinates are ``(x, y)`` in pixels with ``y`` pointing down.  An object
position is the centre of its 28x28 sprite, i.e. sprite pixel ``(14, 14)``.

Draw order inside :func:`sample_scene` (one ``PCG64`` stream per scene):

1. structure offset ``dx`` then ``dy``
2. per-object jitter ``(dx, dy)`` for shirt, pants, bag
3. ``(x, y)`` for each noise object
4. one 63-bit sprite key per object of interest (shirt, pants, bag), then one
   per noise object
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .seeding import derive_seed, make_rng
from .sprites import SPRITE_SIZE, SpriteProvider

OI_CLASSES = ("shirt", "pants", "bag")
REGIMES = ("easy", "hard", "strict")
MANIFEST_VERSION = 1

_HALF = SPRITE_SIZE // 2


@dataclass(frozen=True)
class CsoConfig:
    regime: str = "easy"
    image_size: int = 160
    leg_horizontal: int = 64
    leg_vertical: int = 48
    translation_bound: int = 32
    jitter_bound: int = 16
    noise_count: int = 3
    noise_class: str = "shoe"
    noise_region: str = "full"      # "full" or "bottom-left"
    noise_square: int = 80
    target_classes: tuple[str, ...] = OI_CLASSES

    @classmethod
    def for_regime(cls, regime: str, **overrides) -> CsoConfig:
        regime = regime.lower()
        presets = {
            "easy": dict(),
            "hard": dict(noise_class="shirt"),
            "strict": dict(noise_class="shirt", translation_bound=40, jitter_bound=0,
                           noise_region="bottom-left", target_classes=("shirt",)),
        }
        if regime not in presets:
            raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
        return cls(regime=regime, **{**presets[regime], **overrides})

    @property
    def n_classes(self) -> int:
        """Output channels: background plus the target classes."""
        return 1 + len(self.target_classes)

    def label_of(self, class_id: str) -> int:
        if class_id in self.target_classes:
            return 1 + self.target_classes.index(class_id)
        return 0

    def canonical_vertices(self) -> dict[str, tuple[int, int]]:
        """Vertices of the centred triangle (right angle at the shirt)."""
        c = self.image_size // 2
        ax = c - self.leg_horizontal // 2
        ay = c + self.leg_vertical // 2
        return {"shirt": (ax, ay),
                "pants": (ax + self.leg_horizontal, ay),
                "bag": (ax, ay - self.leg_vertical)}

    def noise_bounds(self) -> tuple[int, int, int, int]:
        """Half-open ``(x0, x1, y0, y1)`` box that noise centres are drawn from."""
        s = self.image_size
        if self.noise_region == "full":
            return 0, s, 0, s
        if self.noise_region == "bottom-left":
            return 0, self.noise_square, s - self.noise_square, s
        raise ValueError(f"unknown noise region {self.noise_region!r}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["target_classes"] = list(self.target_classes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> CsoConfig:
        d = dict(d)
        if "target_classes" in d:
            d["target_classes"] = tuple(d["target_classes"])
        return cls(**d)


@dataclass
class SceneInstance:
    oi_centers: dict[str, tuple[float, float]]
    noise_centers: list[tuple[float, float]]
    structure_offset: tuple[int, int]
    jitters: dict[str, tuple[int, int]]
    sprite_keys: dict[str, list[int]]
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "oi_centers": {k: list(v) for k, v in self.oi_centers.items()},
            "noise_centers": [list(p) for p in self.noise_centers],
            "structure_offset": list(self.structure_offset),
            "jitters": {k: list(v) for k, v in self.jitters.items()},
            "sprite_keys": {k: [int(x) for x in v] for k, v in self.sprite_keys.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> SceneInstance:
        return cls(
            oi_centers={k: tuple(v) for k, v in d["oi_centers"].items()},
            noise_centers=[tuple(p) for p in d["noise_centers"]],
            structure_offset=tuple(d["structure_offset"]),
            jitters={k: tuple(v) for k, v in d["jitters"].items()},
            sprite_keys={k: list(v) for k, v in d["sprite_keys"].items()},
            seed=d.get("seed"),
        )


@dataclass
class RenderedScene:
    image: np.ndarray               # float32 (S, S), values k/255
    mask: np.ndarray                # uint8 (S, S) class indices
    instance: SceneInstance
    sprite_ids: dict[str, list[int]] = field(default_factory=dict)


def sample_scene(config: CsoConfig, rng: np.random.Generator | int) -> SceneInstance:
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = make_rng(seed)
    t, j = config.translation_bound, config.jitter_bound
    off = (int(rng.integers(-t, t, endpoint=True)), int(rng.integers(-t, t, endpoint=True)))
    jitters = {}
    for c in OI_CLASSES:
        jitters[c] = (int(rng.integers(-j, j, endpoint=True)), int(rng.integers(-j, j, endpoint=True)))
    x0, x1, y0, y1 = config.noise_bounds()
    noise = []
    for _ in range(config.noise_count):
        nx = int(rng.integers(x0, x1))
        ny = int(rng.integers(y0, y1))
        noise.append((float(nx), float(ny)))
    keys = {"oi": [int(rng.integers(0, 2 ** 63)) for _ in OI_CLASSES],
            "noise": [int(rng.integers(0, 2 ** 63)) for _ in range(config.noise_count)]}
    verts = config.canonical_vertices()
    centers = {c: (float(verts[c][0] + off[0] + jitters[c][0]),
                   float(verts[c][1] + off[1] + jitters[c][1])) for c in OI_CLASSES}
    return SceneInstance(centers, noise, off, jitters, keys, seed)


def sprite_window(center, size: int):
    """Clipped paste window: ``(image slices, sprite slices)`` or ``None`` if off-image."""
    cx, cy = int(round(center[0])), int(round(center[1]))
    x0, y0 = cx - _HALF, cy - _HALF
    ix0, iy0 = max(x0, 0), max(y0, 0)
    ix1, iy1 = min(x0 + SPRITE_SIZE, size), min(y0 + SPRITE_SIZE, size)
    if ix0 >= ix1 or iy0 >= iy1:
        return None
    return ((slice(iy0, iy1), slice(ix0, ix1)),
            (slice(iy0 - y0, iy1 - y0), slice(ix0 - x0, ix1 - x0)))


def paste(image: np.ndarray, pixels: np.ndarray, center, mask: np.ndarray | None = None,
          label: int | None = None) -> None:
    """Write sprite pixels with intensity > 0 into ``image`` (and ``label`` into ``mask``)."""
    win = sprite_window(center, image.shape[0])
    if win is None:
        return
    dst, src = win
    patch = pixels[src]
    on = patch > 0
    image[dst][on] = patch[on]
    if mask is not None and label is not None:
        mask[dst][on] = label


def render_scene(instance: SceneInstance, config: CsoConfig,
                 sprites: SpriteProvider) -> RenderedScene:
    """Painter's algorithm: noise first, then shirt, pants, bag."""
    s = config.image_size
    image = np.zeros((s, s), dtype=np.float32)
    mask = np.zeros((s, s), dtype=np.uint8)
    ids = {"oi": [], "noise": []}
    for center, key in zip(instance.noise_centers, instance.sprite_keys["noise"]):
        sp = sprites.resolve(config.noise_class, key)
        ids["noise"].append(sp.source_index)
        paste(image, sp.pixels, center)
    for c, key in zip(OI_CLASSES, instance.sprite_keys["oi"]):
        sp = sprites.resolve(c, key)
        ids["oi"].append(sp.source_index)
        paste(image, sp.pixels, instance.oi_centers[c], mask, config.label_of(c))
    return RenderedScene(image, mask, instance, ids)


def scene_seed(master_seed: int, index: int, stream: str = "scene") -> int:
    return derive_seed(stream, int(master_seed), int(index))


def generate_scenes(config: CsoConfig, count: int, master_seed: int,
                    sprites: SpriteProvider, stream: str = "scene") -> list[RenderedScene]:
    out = []
    for i in range(count):
        inst = sample_scene(config, scene_seed(master_seed, i, stream))
        out.append(render_scene(inst, config, sprites))
    return out


def stack_scenes(scenes) -> tuple[np.ndarray, np.ndarray]:
    """``(images N x S x S float32, masks N x S x S uint8)``."""
    if not scenes:
        return np.zeros((0, 0, 0), np.float32), np.zeros((0, 0, 0), np.uint8)
    return np.stack([s.image for s in scenes]), np.stack([s.mask for s in scenes])


# -- persistence ------------------------------------------------------------

def _to_u8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)


def export_dataset(scenes, path, config: CsoConfig | None = None,
                   master_seed: int | None = None, sprites: SpriteProvider | None = None) -> dict:
    """Write ``images/NNNN.png``, ``masks/NNNN.png`` and ``manifest.json``."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sc in enumerate(scenes):
        name = f"{i:04d}.png"
        Image.fromarray(_to_u8(sc.image), mode="L").save(root / "images" / name)
        Image.fromarray(sc.mask.astype(np.uint8), mode="L").save(root / "masks" / name)
        entries.append({"index": i, "image": f"images/{name}", "mask": f"masks/{name}",
                        **sc.instance.to_dict(), "sprite_ids": sc.sprite_ids})
    manifest = {
        "format": "csolab-dataset",
        "version": MANIFEST_VERSION,
        "config": config.to_dict() if config is not None else None,
        "master_seed": master_seed,
        "sprites": sprites.describe() if sprites is not None else None,
        "count": len(entries),
        "scenes": entries,
    }
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def load_dataset(path) -> tuple[np.ndarray, np.ndarray, dict]:
    root = Path(path)
    with open(root / "manifest.json") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "csolab-dataset" or manifest.get("version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest in {root}")
    images, masks = [], []
    for e in manifest["scenes"]:
        images.append(np.asarray(Image.open(root / e["image"]), dtype=np.uint8))
        masks.append(np.asarray(Image.open(root / e["mask"]), dtype=np.uint8))
    if not images:
        return np.zeros((0, 0, 0), np.float32), np.zeros((0, 0, 0), np.uint8), manifest
    imgs = np.stack(images).astype(np.float32) / np.float32(255.0)
    return imgs, np.stack(masks), manifest
