"""Four-level U-Net assembled from :mod:`csolab.nn` primitives, plus checkpoints.

Layout for ``base_width=w`` (3x3 convs use padding 1, every conv but the
head is followed by ReLU)::

    enc1  conv(in->w)    conv(w->w)       pool
    enc2  conv(w->2w)    conv(2w->2w)     pool
    enc3  conv(2w->4w)   conv(4w->4w)     pool
    bottleneck conv(4w->8w) conv(8w->8w)
    up3   tconv(8w->4w), concat enc3, dec3 conv(8w->4w) conv(4w->4w)
    up2   tconv(4w->2w), concat enc2, dec2 conv(4w->2w) conv(2w->2w)
    up1   tconv(2w->w),  concat enc1, dec1 conv(2w->w)  conv(w->w)
    head  conv1x1(w->out)

Transposed convs are k=2, s=2.  Weights are He-initialised with
``fan_in = k*k*C_in``; biases start at zero.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArchMismatch, BadSpatialDims, CorruptHeader
from .nn import functional as F
from .nn.gradcheck import GradCheckReport, grad_check
from .nn.init import he_init
from .nn.receptive import LayerSpec, receptive_field
from .nn.tensor import Tensor
from .seeding import make_rng

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"CSOLABCK"
CHECKPOINT_VERSION = 1
REFERENCE_BOTTLENECK_RF = 61
REFERENCE_OUTPUT_RF = 101

PROFILES = {"desk": 16, "paper": 64}


@dataclass(frozen=True)
class UNetArch:
    base_width: int = 16
    in_channels: int = 1
    out_channels: int = 4
    levels: int = 4
    convs_per_level: int = 2
    kernel: int = 3

    def __post_init__(self):
        if self.levels < 2 or self.base_width < 1 or self.out_channels < 2 or self.convs_per_level < 1:
            raise ValueError(f"invalid U-Net architecture {self}")
        if self.kernel % 2 == 0:
            raise ValueError("kernel must be odd so zero padding preserves size")

    @classmethod
    def for_profile(cls, profile: str, out_channels: int) -> UNetArch:
        return cls(base_width=PROFILES[profile], out_channels=out_channels)

    @property
    def widths(self) -> list[int]:
        return [self.base_width * 2 ** i for i in range(self.levels)]

    @property
    def downsample(self) -> int:
        return 2 ** (self.levels - 1)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> UNetArch:
        return cls(**d)


def _conv_block(arch, cin, cout):
    return [(cin if i == 0 else cout, cout) for i in range(arch.convs_per_level)]


def parameter_shapes(arch: UNetArch) -> dict[str, tuple[int, ...]]:
    """Ordered ``name -> shape`` for every parameter of ``arch``."""
    k = arch.kernel
    widths = arch.widths
    shapes = {}
    cin = arch.in_channels
    for lvl, w in enumerate(widths):
        block = "bottleneck" if lvl == arch.levels - 1 else f"enc{lvl + 1}"
        for j, (a, b) in enumerate(_conv_block(arch, cin, w)):
            shapes[f"{block}.conv{j + 1}.weight"] = (b, a, k, k)
            shapes[f"{block}.conv{j + 1}.bias"] = (b,)
        cin = w
    for lvl in range(arch.levels - 2, -1, -1):
        w = widths[lvl]
        shapes[f"up{lvl + 1}.weight"] = (cin, w, 2, 2)
        shapes[f"up{lvl + 1}.bias"] = (w,)
        for j, (a, b) in enumerate(_conv_block(arch, 2 * w, w)):
            shapes[f"dec{lvl + 1}.conv{j + 1}.weight"] = (b, a, k, k)
            shapes[f"dec{lvl + 1}.conv{j + 1}.bias"] = (b,)
        cin = w
    shapes["head.weight"] = (arch.out_channels, cin, 1, 1)
    shapes["head.bias"] = (arch.out_channels,)
    return shapes


def layer_specs(arch: UNetArch) -> tuple[list[LayerSpec], int]:
    """Layers along the deepest input-to-output path, and the bottleneck's index."""
    k, p = arch.kernel, arch.kernel // 2
    specs = []
    for lvl in range(arch.levels):
        block = "bottleneck" if lvl == arch.levels - 1 else f"enc{lvl + 1}"
        for j in range(arch.convs_per_level):
            specs.append(LayerSpec("conv", k, 1, p, f"{block}.conv{j + 1}"))
        if lvl < arch.levels - 1:
            specs.append(LayerSpec("pool", 2, 2, 0, f"pool{lvl + 1}"))
    bottleneck = len(specs) - 1
    for lvl in range(arch.levels - 2, -1, -1):
        specs.append(LayerSpec("transposed-conv", 2, 2, 0, f"up{lvl + 1}"))
        for j in range(arch.convs_per_level):
            specs.append(LayerSpec("conv", k, 1, p, f"dec{lvl + 1}.conv{j + 1}"))
    specs.append(LayerSpec("conv", 1, 1, 0, "head"))
    return specs, bottleneck


def receptive_field_report(arch: UNetArch) -> dict:
    specs, bottleneck = layer_specs(arch)
    rfs = receptive_field(specs)
    return {"layers": specs, "results": rfs,
            "bottleneck_rf": rfs[bottleneck][0], "output_rf": rfs[-1][0],
            "reference_bottleneck_rf": REFERENCE_BOTTLENECK_RF, "reference_output_rf": REFERENCE_OUTPUT_RF}


class UNetModel:
    def __init__(self, arch: UNetArch, params: dict[str, Tensor]):
        self.arch = arch
        self.params = params

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def n_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}

    def astype(self, dtype) -> UNetModel:
        return UNetModel(self.arch, {k: Tensor(p.data.astype(dtype), requires_grad=True)
                                     for k, p in self.params.items()})

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def _conv(self, name, x, relu=True, padding=None):
        pad = self.arch.kernel // 2 if padding is None else padding
        y = F.conv2d(x, self.params[name + ".weight"], self.params[name + ".bias"], 1, pad)
        return F.relu(y) if relu else y

    def forward(self, batch) -> Tensor:
        x = batch if isinstance(batch, Tensor) else Tensor(np.asarray(batch))
        if x.data.ndim != 4 or x.shape[1] != self.arch.in_channels:
            raise BadSpatialDims(f"expected N x {self.arch.in_channels} x H x W input, got {x.shape}")
        d = self.arch.downsample
        if x.shape[2] % d or x.shape[3] % d:
            raise BadSpatialDims(f"H and W must be divisible by {d}, got {x.shape[2:]}")
        if x.dtype != self.dtype and not x.requires_grad:
            x = Tensor(x.data.astype(self.dtype))
        a = self.arch
        skips = []
        for lvl in range(a.levels):
            block = "bottleneck" if lvl == a.levels - 1 else f"enc{lvl + 1}"
            for j in range(a.convs_per_level):
                x = self._conv(f"{block}.conv{j + 1}", x)
            if lvl < a.levels - 1:
                skips.append(x)
                x = F.maxpool2d(x, 2, 2)
        for lvl in range(a.levels - 2, -1, -1):
            x = F.transposed_conv2d(x, self.params[f"up{lvl + 1}.weight"], self.params[f"up{lvl + 1}.bias"], 2)
            x = F.concat_channels(skips[lvl], x)
            for j in range(a.convs_per_level):
                x = self._conv(f"dec{lvl + 1}.conv{j + 1}", x)
        return self._conv("head", x, relu=False, padding=0)

    __call__ = forward

    def predict_logits(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        images = np.asarray(images, dtype=self.dtype)
        if images.ndim == 3:
            images = images[:, None]
        outs = [self.forward(Tensor(images[i:i + batch_size])).data
                for i in range(0, len(images), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0, self.arch.out_channels) + images.shape[2:],
                                                          self.dtype)

    def predict(self, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
        """Per-pixel argmax class map; ties go to the lowest class index."""
        return self.predict_logits(images, batch_size).argmax(axis=1).astype(np.uint8)


def build_unet(arch: UNetArch, seed: int, dtype=np.float32) -> UNetModel:
    rng = make_rng("unet-init", int(seed))
    params = {}
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".bias"):
            params[name] = Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)
        elif name.startswith("up"):
            params[name] = he_init(shape, shape[0] * shape[2] * shape[3], rng, dtype)
        else:
            params[name] = he_init(shape, shape[1] * shape[2] * shape[3], rng, dtype)
    report = receptive_field_report(arch)
    log.info("U-Net receptive field: bottleneck %d px (reference %d), output %d px (reference %d)",
             report["bottleneck_rf"], REFERENCE_BOTTLENECK_RF, report["output_rf"], REFERENCE_OUTPUT_RF)
    return UNetModel(arch, params)


def forward(model: UNetModel, batch) -> Tensor:
    return model.forward(batch)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(model: UNetModel, path, config_digest: str | None = None, extra: dict | None = None) -> None:
    """``magic | u32 version | u64 header length | JSON header | f32 LE payload``."""
    index, offset = [], 0
    blobs = []
    for name, p in model.params.items():
        blob = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        index.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"arch": model.arch.to_dict(), "config_digest": config_digest,
                         "extra": extra or {}, "tensors": index, "payload_bytes": offset},
                        sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def read_checkpoint_header(data: bytes) -> tuple[dict, int]:
    fixed = len(CHECKPOINT_MAGIC) + 12
    if len(data) < fixed or data[:len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptHeader("not a csolab checkpoint")
    version, hlen = struct.unpack("<IQ", data[len(CHECKPOINT_MAGIC):fixed])
    if version != CHECKPOINT_VERSION:
        raise CorruptHeader(f"unsupported checkpoint version {version}")
    if len(data) < fixed + hlen:
        raise CorruptHeader("header truncated")
    try:
        header = json.loads(data[fixed:fixed + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"unreadable header: {exc}") from None
    return header, fixed + hlen


def load_checkpoint(path, expected_arch: UNetArch | None = None) -> UNetModel:
    with open(path, "rb") as fh:
        data = fh.read()
    header, start = read_checkpoint_header(data)
    try:
        arch = UNetArch.from_dict(header["arch"])
        index = header["tensors"]
        payload_bytes = int(header["payload_bytes"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"malformed header: {exc}") from None
    if expected_arch is not None and arch != expected_arch:
        raise ArchMismatch(f"checkpoint arch {arch} differs from expected {expected_arch}")
    shapes = parameter_shapes(arch)
    declared = {t["name"]: tuple(t["shape"]) for t in index}
    if declared != shapes:
        bad = sorted(n for n in set(shapes) | set(declared) if shapes.get(n) != declared.get(n))
        raise ArchMismatch(f"tensor index disagrees with declared arch for: {', '.join(bad[:4])}")
    if len(data) - start != payload_bytes:
        raise CorruptHeader(f"payload is {len(data) - start} bytes, header declares {payload_bytes}")
    params = {}
    for t in index:
        shape = tuple(t["shape"])
        n = int(np.prod(shape)) * 4
        if t["nbytes"] != n or t["offset"] < 0 or t["offset"] + n > payload_bytes:
            raise CorruptHeader(f"bad extent for tensor {t['name']}")
        arr = np.frombuffer(data, dtype="<f4", count=n // 4, offset=start + t["offset"])
        params[t["name"]] = Tensor(arr.astype(np.float32).reshape(shape), requires_grad=True)
    return UNetModel(arch, {name: params[name] for name in shapes})


def checkpoint_metadata(path) -> dict:
    with open(path, "rb") as fh:
        fixed = len(CHECKPOINT_MAGIC) + 12
        head = fh.read(fixed)
        if len(head) < fixed or not head.startswith(CHECKPOINT_MAGIC):
            raise CorruptHeader("not a csolab checkpoint")
        _, hlen = struct.unpack("<IQ", head[len(CHECKPOINT_MAGIC):])
        return read_checkpoint_header(head + fh.read(hlen))[0]


def unet_grad_check(seed: int, size: int = 16, base_width: int = 16, n_classes: int = 4,
                    tolerance: float = 1e-4, max_coords: int | None = 4, h: float = 3e-6,
                    atol: float = 1e-6) -> GradCheckReport:
    """Finite-difference check of the whole float64 network on one random ``size``x``size`` image.

    ``max_coords`` coordinates are sampled per parameter tensor (and for the
    input image); ``None`` checks every coordinate.
    """
    rng = make_rng("gradcheck-unet", int(seed))
    model = build_unet(UNetArch(base_width=base_width, out_channels=n_classes), int(seed), np.float64)
    x = Tensor(rng.random((1, 1, size, size)), requires_grad=True)
    target = rng.integers(0, n_classes, size=(1, size, size))

    def fn():
        return F.softmax_cross_entropy(model(x), target)

    return grad_check(fn, {"input": x, **model.params}, tolerance=tolerance, h=h, atol=atol,
                      max_coords=max_coords, rng=rng)
