"""Sliding-reference perturbation probe.

One object of interest (the *reference*) is moved over a regular grid of
positions while the rest of the triangle stays centred; at each position the
shirt precision / recall of a model is averaged over freshly drawn scenes.
"""
from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from PIL import Image

from .errors import OutOfBounds, RegimeMismatch
from .metrics import compute_metrics
from .scene import OI_CLASSES, CsoConfig, RenderedScene, paste, sample_scene, sprite_window
from .seeding import derive_seed, make_rng
from .sprites import SpriteProvider

MEASURES = ("precision", "recall")


@dataclass(frozen=True)
class ProbeConfig:
    reference_class: str = "shirt"
    stride: int = 20
    images_per_position: int = 20
    regime: CsoConfig = dataclasses.field(default_factory=CsoConfig)
    measure: str = "both"
    seed: int = 0

    def __post_init__(self):
        if self.reference_class not in OI_CLASSES:
            raise ValueError(f"reference must be one of {OI_CLASSES}, got {self.reference_class!r}")
        if self.measure not in MEASURES + ("both",):
            raise ValueError(f"measure must be precision, recall or both, got {self.measure!r}")
        if self.stride < 1 or self.regime.image_size % self.stride:
            raise ValueError(f"stride {self.stride} does not divide image size {self.regime.image_size}")
        if self.images_per_position < 1:
            raise ValueError("images_per_position must be >= 1")

    @property
    def measures(self) -> tuple[str, ...]:
        return MEASURES if self.measure == "both" else (self.measure,)

    def centers(self) -> np.ndarray:
        """Cell centres along one axis: ``stride/2 + stride*i``."""
        n = self.regime.image_size // self.stride
        return self.stride / 2 + self.stride * np.arange(n, dtype=np.float64)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["regime"] = self.regime.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ProbeConfig:
        d = dict(d)
        if "regime" in d:
            d["regime"] = CsoConfig.from_dict(d["regime"])
        return cls(**d)


@dataclass
class ProbeScene(RenderedScene):
    """A probe scene; ``visible`` is the painter's-order label map of what is actually drawn."""
    visible: np.ndarray | None = None
    reference: str = "shirt"


@dataclass
class Heatmap:
    grid: np.ndarray            # (ny, nx) cell means, row = y
    xs: np.ndarray
    ys: np.ndarray
    measure: str
    reference: str

    @property
    def positions(self) -> np.ndarray:
        """``(ny, nx, 2)`` array of ``(x, y)`` cell centres."""
        gx, gy = np.meshgrid(self.xs, self.ys)
        return np.stack([gx, gy], axis=-1)

    def argmax_cell(self) -> tuple[int, int]:
        """``(row, col)`` of the maximum, first in row-major order on ties."""
        r, c = np.unravel_index(int(np.argmax(self.grid)), self.grid.shape)
        return int(r), int(c)


def _centered(config: CsoConfig) -> CsoConfig:
    return dataclasses.replace(config, translation_bound=0, jitter_bound=0)


def make_probe_scene(config: CsoConfig, reference_class: str, position,
                     rng: np.random.Generator | int, sprites: SpriteProvider) -> ProbeScene:
    """Centred triangle with ``reference_class`` moved to ``position`` and drawn on top.

    ``mask`` holds the full sprite support of the shirt wherever the shirt is
    (occlusion by the reference does not remove shirt truth); ``visible`` is
    the label map of the composited image.
    """
    if reference_class not in OI_CLASSES:
        raise ValueError(f"reference must be one of {OI_CLASSES}, got {reference_class!r}")
    s = config.image_size
    x, y = float(position[0]), float(position[1])
    if not (0 <= x < s and 0 <= y < s):
        raise OutOfBounds(f"position {(x, y)} outside {s}x{s} image")
    inst = sample_scene(_centered(config), rng)
    inst.oi_centers[reference_class] = (x, y)
    image = np.zeros((s, s), dtype=np.float32)
    visible = np.zeros((s, s), dtype=np.uint8)
    ids = {"oi": [], "noise": []}
    for center, key in zip(inst.noise_centers, inst.sprite_keys["noise"]):
        sp = sprites.resolve(config.noise_class, key)
        ids["noise"].append(sp.source_index)
        paste(image, sp.pixels, center)
    pixels = {}
    for c, key in zip(OI_CLASSES, inst.sprite_keys["oi"]):
        sp = sprites.resolve(c, key)
        ids["oi"].append(sp.source_index)
        pixels[c] = sp.pixels
    for c in [c for c in OI_CLASSES if c != reference_class] + [reference_class]:
        paste(image, pixels[c], inst.oi_centers[c], visible, config.label_of(c))
    mask = visible.copy()
    shirt = config.label_of("shirt")
    win = sprite_window(inst.oi_centers["shirt"], s)
    if win is not None and shirt:
        dst, src = win
        mask[dst][pixels["shirt"][src] > 0] = shirt
    return ProbeScene(image, mask, inst, ids, visible=visible, reference=reference_class)


def dummy_scene(config: CsoConfig, reference_class: str, sprites: SpriteProvider,
                seed: int = 0) -> np.ndarray:
    """Centred, noise-free structure without the reference; background for heatmaps."""
    inst = sample_scene(_centered(config), make_rng("probe-dummy", seed))
    image = np.zeros((config.image_size,) * 2, dtype=np.float32)
    for c, key in zip(OI_CLASSES, inst.sprite_keys["oi"]):
        if c != reference_class:
            paste(image, sprites.resolve(c, key).pixels, inst.oi_centers[c])
    return image


class TruthOracle:
    """Stand-in model that predicts exactly what is visible in a probe scene."""

    def __call__(self, scenes) -> np.ndarray:
        return np.stack([sc.visible for sc in scenes])


def probe_seed(seed: int, reference: str, row: int, col: int, k: int) -> int:
    return derive_seed("probe", int(seed), reference, int(row), int(col), int(k))


def _model_predictor(model, batch_size: int) -> Callable:
    def predict(scenes):
        return model.predict(np.stack([sc.image for sc in scenes])[:, None], batch_size)
    return predict


def run_probe(model, config: ProbeConfig, sprites: SpriteProvider, model_regime: str | None = None,
              batch_size: int = 8) -> dict[str, Heatmap]:
    """Heatmaps of shirt precision / recall, one per requested measure.

    ``model`` is either a ``UNetModel`` (anything with ``predict`` and an
    ``arch``) or a callable mapping a list of probe scenes to label maps.
    """
    regime = config.regime
    if model_regime is not None and model_regime != regime.regime:
        raise RegimeMismatch(f"model trained on {model_regime!r}, probe asks for {regime.regime!r}")
    if hasattr(model, "predict") and hasattr(model, "arch"):
        if model.arch.out_channels != regime.n_classes:
            raise RegimeMismatch(f"model has {model.arch.out_channels} classes, "
                                 f"regime {regime.regime!r} needs {regime.n_classes}")
        predict = _model_predictor(model, batch_size)
    elif callable(model):
        predict = model
    else:
        raise TypeError("model must be a UNetModel or a callable on probe scenes")
    shirt = regime.label_of("shirt")
    xs = ys = config.centers()
    sums = {m: np.zeros((len(ys), len(xs))) for m in MEASURES}
    n = config.images_per_position
    for r, y in enumerate(ys):
        for c, x in enumerate(xs):
            scenes = [make_probe_scene(regime, config.reference_class, (x, y),
                                       probe_seed(config.seed, config.reference_class, r, c, k), sprites)
                      for k in range(n)]
            preds = predict(scenes)
            for sc, pred in zip(scenes, preds):
                p, rec, _ = compute_metrics(pred, sc.mask, shirt)
                sums["precision"][r, c] += p
                sums["recall"][r, c] += rec
    return {m: Heatmap(sums[m] / n, xs.copy(), ys.copy(), m, config.reference_class)
            for m in config.measures}


# -- output -----------------------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_heatmap_csv(heatmap: Heatmap, path) -> None:
    """Header of x centres, then one row per y centre (y ascending = image top to bottom)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x={_fmt(x)}" for x in heatmap.xs])
        for row in heatmap.grid:
            w.writerow([_fmt(v) for v in row])


def read_heatmap_csv(path, measure: str = "", reference: str = "") -> Heatmap:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not all(h.startswith("x=") for h in rows[0]):
        raise ValueError(f"{path}: missing heatmap header")
    xs = np.array([float(h[2:]) for h in rows[0]])
    grid = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    if grid.shape[1:] != (len(xs),):
        raise ValueError(f"{path}: ragged heatmap rows")
    # square images: rows sit on the same centres as columns
    ys = xs[:len(grid)].copy()
    return Heatmap(grid, xs, ys, measure, reference)


def heatmap_image(heatmap: Heatmap, background: np.ndarray, alpha: float = 0.55,
                  cmap: str = "viridis") -> np.ndarray:
    """Nearest-neighbour upsampled, colour-mapped grid blended over a grey background (RGB uint8)."""
    from matplotlib import colormaps

    s = background.shape[0]
    ny, nx = heatmap.grid.shape
    cell_y, cell_x = s // ny, s // nx
    up = np.repeat(np.repeat(np.clip(heatmap.grid, 0, 1), cell_y, axis=0), cell_x, axis=1)
    color = colormaps[cmap](up)[..., :3]
    bg = np.repeat(np.clip(background, 0, 1)[..., None], 3, axis=2)
    out = (1 - alpha) * bg + alpha * color
    return np.clip(np.rint(out * 255), 0, 255).astype(np.uint8)


def render_heatmap(heatmap: Heatmap, background: np.ndarray, out_dir, alpha: float = 0.55,
                   cmap: str = "viridis") -> tuple[Path, Path]:
    """Write ``heatmap_<measure>_<reference>.png`` and ``.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"heatmap_{heatmap.measure}_{heatmap.reference}"
    png, csv_path = out / f"{stem}.png", out / f"{stem}.csv"
    Image.fromarray(heatmap_image(heatmap, background, alpha, cmap), mode="RGB").save(png)
    write_heatmap_csv(heatmap, csv_path)
    return png, csv_path
