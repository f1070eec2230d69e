"""Fashion-MNIST sprite ingestion plus a synthetic glyph fallback.

Sprites are 28x28 float32 arrays in [0, 1].  A pixel belongs to the object
iff its intensity is > 0, which is what the scene renderer uses for masks.
"""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, EmptyPool, Truncated
from .seeding import make_rng

SPRITE_SIZE = 28
CLASSES = ("shirt", "pants", "bag", "shoe")

# Fashion-MNIST labels: 6 "Shirt", 1 "Trouser", 8 "Bag", 7 "Sneaker".
DEFAULT_LABEL_MAP = {"shirt": 6, "pants": 1, "bag": 8, "shoe": 7}

DATA_DIR_ENV = "CSOLAB_DATA_DIR"

_IDX_DTYPES = {0x08: np.uint8}
_IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass(frozen=True)
class Sprite:
    pixels: np.ndarray
    class_id: str
    source_index: int = -1
    source_label: int = -1

    def __post_init__(self):
        if self.pixels.shape != (SPRITE_SIZE, SPRITE_SIZE):
            raise ValueError(f"sprite must be 28x28, got {self.pixels.shape}")


# -- IDX ------------------------------------------------------------------

def parse_idx(data: bytes) -> tuple[tuple[int, ...], np.ndarray]:
    """Parse an IDX byte stream into ``(shape, uint8 array)``.

    Only unsigned-byte payloads are accepted (magic 0x0000080N).
    """
    if len(data) < 4:
        raise Truncated("stream shorter than the IDX magic")
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code not in _IDX_DTYPES or ndim == 0:
        raise BadMagic(f"unknown IDX magic 0x{data[:4].hex()}")
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise Truncated("IDX header truncated")
    shape = struct.unpack(f">{ndim}I", data[4:header_len])
    count = int(np.prod(shape, dtype=np.int64))
    payload = data[header_len:header_len + count]
    if len(payload) < count:
        raise Truncated(f"payload has {len(payload)} bytes, shape {shape} needs {count}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(shape)
    return tuple(int(s) for s in shape), arr


def write_idx(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">HBB", 0, 0x08, array.ndim)
    header += struct.pack(f">{array.ndim}I", *array.shape)
    return header + array.tobytes()


def read_idx_file(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return parse_idx(fh.read())[1]


def _find_idx(data_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        if (data_dir / name).exists():
            return data_dir / name
    raise FileNotFoundError(f"no {stem}[.gz] in {data_dir}")


# -- synthetic glyphs -------------------------------------------------------

def _glyph_shape(class_id: str, dx: int, dy: int, grow: int) -> np.ndarray:
    m = np.zeros((SPRITE_SIZE, SPRITE_SIZE), dtype=bool)
    g = grow
    if class_id == "shirt":
        m[6:11, 3 - g:25 + g] = True           # sleeves
        m[6:25 + g, 8:20] = True               # torso
        m[6:9, 12:16] = False                  # collar notch
    elif class_id == "pants":
        m[3:8, 8 - g:20 + g] = True            # waist
        m[7:26, 8 - g:13] = True               # left leg
        m[7:26, 15:20 + g] = True              # right leg
    elif class_id == "bag":
        m[11:25, 4 - g:24 + g] = True          # body
        m[4:11, 8:11] = True                   # handle
        m[4:11, 17:20] = True
        m[4:7, 8:20] = True
    elif class_id == "shoe":
        m[19:24, 2:26] = True                # sole
        for r in range(11, 19):
            m[r, 2:14 - (r - 11) // 2 + g] = True
        m[15:19, 2:22] = True
    else:
        raise ValueError(f"unknown class {class_id!r}")
    return np.roll(m, (dy, dx), axis=(0, 1))


def synth_glyph(class_id: str, rng: np.random.Generator | int) -> Sprite:
    """Deterministic class-specific glyph with a small seeded perturbation."""
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(int(rng))
    dx, dy = (int(v) for v in rng.integers(-1, 2, size=2))
    grow = int(rng.integers(0, 2))
    mask = _glyph_shape(class_id, dx, dy, grow)
    base = rng.uniform(0.65, 0.95)
    texture = rng.uniform(-0.1, 0.1, size=mask.shape)
    levels = np.rint(np.where(mask, np.clip(base + texture, 0.05, 1.0), 0.0) * 255)
    # quantised to k/255 like real u8 sprites, so PNG export round-trips exactly
    pixels = levels.astype(np.uint8).astype(np.float32) / np.float32(255.0)
    return Sprite(pixels=pixels, class_id=class_id)


# -- provider ---------------------------------------------------------------

@dataclass
class SpriteProvider:
    """Class-indexed sprite pools.

    Build with :meth:`synthetic` or :meth:`from_idx`.  Pools are read-only
    after construction; :meth:`resolve` maps a 64-bit draw key to a pool
    entry so scene sampling never needs the pools themselves.
    """
    source: str
    split: str
    pools: dict[str, np.ndarray]
    source_indices: dict[str, np.ndarray]
    rng_seed: int = 0
    label_map: dict[str, int] = field(default_factory=lambda: dict(DEFAULT_LABEL_MAP))

    def __post_init__(self):
        self._rng = make_rng(int(self.rng_seed))

    @classmethod
    def synthetic(cls, split: str = "train", pool_size: int = 64, seed: int = 0) -> SpriteProvider:
        pools, idx = {}, {}
        for c in CLASSES:
            rng = make_rng("glyph-pool", split, c, seed)
            glyphs = [synth_glyph(c, rng).pixels for _ in range(pool_size)]
            pools[c] = np.stack(glyphs)
            idx[c] = np.arange(pool_size)
        return cls("synthetic", split, pools, idx, rng_seed=seed)

    @classmethod
    def from_idx(cls, data_dir: str | os.PathLike, split: str = "train",
                 label_map: dict[str, int] | None = None, seed: int = 0) -> SpriteProvider:
        data_dir = Path(data_dir)
        label_map = dict(label_map or DEFAULT_LABEL_MAP)
        img_stem, lbl_stem = _IDX_FILES[split]
        images = read_idx_file(_find_idx(data_dir, img_stem))
        labels = read_idx_file(_find_idx(data_dir, lbl_stem))
        if images.shape[0] != labels.shape[0]:
            raise Truncated("image and label counts differ")
        pools, idx = {}, {}
        for c in CLASSES:
            sel = np.flatnonzero(labels == label_map[c])
            pools[c] = images[sel].astype(np.float32) / np.float32(255.0)
            idx[c] = sel
        return cls("idx-files", split, pools, idx, rng_seed=seed, label_map=label_map)

    @classmethod
    def auto(cls, split: str = "train", data_dir=None, label_map=None, seed: int = 0) -> SpriteProvider:
        """IDX files from ``data_dir`` / ``$CSOLAB_DATA_DIR`` if present, else synthetic."""
        data_dir = data_dir or os.environ.get(DATA_DIR_ENV)
        if data_dir and Path(data_dir).is_dir():
            return cls.from_idx(data_dir, split, label_map, seed)
        return cls.synthetic(split, seed=seed)

    def pool_size(self, class_id: str) -> int:
        pool = self.pools.get(class_id)
        return 0 if pool is None else len(pool)

    def resolve(self, class_id: str, key: int) -> Sprite:
        n = self.pool_size(class_id)
        if n == 0:
            raise EmptyPool(f"no sprites for class {class_id!r}")
        i = int(key) % n
        label = self.label_map.get(class_id, -1) if self.source == "idx-files" else -1
        return Sprite(self.pools[class_id][i], class_id,
                      source_index=int(self.source_indices[class_id][i]), source_label=label)

    def describe(self) -> dict:
        return {"source": self.source, "split": self.split, "seed": int(self.rng_seed),
                "label_map": dict(self.label_map),
                "pool_sizes": {c: self.pool_size(c) for c in CLASSES}}


def get_sprite(provider: SpriteProvider, class_id: str,
               rng: np.random.Generator | None = None) -> Sprite:
    """Uniform draw with replacement from the class pool."""
    n = provider.pool_size(class_id)
    if n == 0:
        raise EmptyPool(f"no sprites for class {class_id!r}")
    rng = provider._rng if rng is None else rng
    return provider.resolve(class_id, int(rng.integers(0, n)))
