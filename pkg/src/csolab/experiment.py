"""Training/evaluation protocol: splits, seeded runs, grids, reports, overlays."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DivergedLoss, ShapeMismatch
from .estimator import UNetSegmenter
from .metrics import MetricsReport
from .scene import CsoConfig, generate_scenes, stack_scenes
from .seeding import config_digest, derive_seed
from .sprites import SpriteProvider
from .unet import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

RECORD_VERSION = 1


@dataclass(frozen=True)
class ExperimentConfig:
    scene: CsoConfig = field(default_factory=CsoConfig)
    d: int = 100
    train_fraction: float = 0.7
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 1e-3
    init_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    split_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    test_size: int = 100
    base_width: int = 16
    data_seed: int = 0
    sprite_source: str = "auto"     # auto | synthetic | idx
    data_dir: str | None = None
    n_overlays: int = 8

    @property
    def regime(self) -> str:
        return self.scene.regime

    @property
    def n_train(self) -> int:
        return int(math.floor(self.train_fraction * self.d + 0.5))

    @property
    def n_val(self) -> int:
        return self.d - self.n_train

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scene"] = self.scene.to_dict()
        d["init_seeds"] = list(self.init_seeds)
        d["split_seeds"] = list(self.split_seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        d = dict(d)
        d["scene"] = CsoConfig.from_dict(d["scene"]) if "scene" in d else CsoConfig()
        for k in ("init_seeds", "split_seeds"):
            if k in d:
                d[k] = tuple(int(s) for s in d[k])
        return cls(**d)

    def digest(self) -> str:
        """Identifies everything that shapes a run except the seed lists."""
        d = self.to_dict()
        for k in ("init_seeds", "split_seeds", "n_overlays", "data_dir"):
            d.pop(k)
        return config_digest(d)

    def run_digest(self, init_seed: int, split_seed: int) -> str:
        return config_digest({"config": self.digest(), "init": int(init_seed), "split": int(split_seed)})


@dataclass
class RunRecord:
    config_digest: str
    config: dict
    init_seed: int
    split_seed: int
    train_loss: list[float]
    val_loss: list[float]
    epoch_seconds: list[float]
    checkpoint: str | None
    metrics: dict | None
    status: str = "complete"
    version: int = RECORD_VERSION

    @property
    def report(self) -> MetricsReport:
        return MetricsReport.from_dict(self.metrics)

    @property
    def converged(self) -> bool:
        return self.metrics is not None and self.report.converged

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> RunRecord:
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, allow_nan=True)

    @classmethod
    def load(cls, path) -> RunRecord:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# -- data ------------------------------------------------------------------

def make_provider(config: ExperimentConfig, split: str) -> SpriteProvider:
    if config.sprite_source == "synthetic":
        return SpriteProvider.synthetic(split)
    if config.sprite_source == "idx":
        if not config.data_dir:
            raise ValueError("sprite_source 'idx' needs data_dir")
        return SpriteProvider.from_idx(config.data_dir, split)
    return SpriteProvider.auto(split, config.data_dir)


def trainval_seed(config: ExperimentConfig) -> int:
    return derive_seed("trainval", config_digest(config.scene.to_dict()), config.data_seed)


def test_seed(config: ExperimentConfig) -> int:
    return derive_seed("test", config_digest(config.scene.to_dict()), config.data_seed)


_DATA_CACHE: dict = {}


def build_datasets(config: ExperimentConfig):
    """``((X, y) train+val pool of size D, (X_test, y_test))``; cached per process."""
    key = (config_digest(config.scene.to_dict()), config.data_seed, config.d, config.test_size,
           config.sprite_source, config.data_dir)
    if key not in _DATA_CACHE:
        pool = stack_scenes(generate_scenes(config.scene, config.d, trainval_seed(config),
                                            make_provider(config, "train")))
        test = stack_scenes(generate_scenes(config.scene, config.test_size, test_seed(config),
                                            make_provider(config, "test")))
        _DATA_CACHE.clear()
        _DATA_CACHE[key] = (pool, test)
    return _DATA_CACHE[key]


def split_indices(d: int, n_train: int, split_seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.Generator(np.random.PCG64(derive_seed("split", int(split_seed)))).permutation(d)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def class_names(scene: CsoConfig) -> dict[int, str]:
    return {0: "background", **{1 + i: c for i, c in enumerate(scene.target_classes)}}


# -- runs ------------------------------------------------------------------

def evaluate_model(model, images, masks, scene: CsoConfig, batch_size: int = 8):
    preds = model.predict(images, batch_size)
    return MetricsReport.from_predictions(preds, masks, class_names(scene), focus_class=1), preds


def _write_run_outputs(out: Path, record: RunRecord, report: MetricsReport | None,
                       images=None, preds=None, truths=None, n_overlays=0):
    with open(out / "loss.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "seconds"])
        for i, (a, b, s) in enumerate(zip(record.train_loss, record.val_loss, record.epoch_seconds)):
            w.writerow([i + 1, repr(a), repr(b), f"{s:.3f}"])
    if report is not None:
        with open(out / "metrics.csv", "w", newline="") as fh:
            rows = report.rows()
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
        if n_overlays and images is not None:
            (out / "overlays").mkdir(exist_ok=True)
            for i in range(min(n_overlays, len(images))):
                Image.fromarray(render_overlay(images[i], preds[i], truths[i])).save(out / "overlays" / f"{i:04d}.png")
    record.save(out / "record.json")


def train_run(config: ExperimentConfig, init_seed: int, split_seed: int, out_dir=None,
              reuse: bool = True, stop_below: float | None = None) -> RunRecord:
    """Train one model and evaluate it on the regime's fresh test set.

    With ``out_dir`` the run lands in ``out_dir/<run digest>/``; a complete
    record already there for the same digest is returned instead of retraining
    when ``reuse`` is set (training is deterministic, so it is the same run).
    """
    run_dir = None
    if out_dir is not None:
        run_dir = Path(out_dir) / config.run_digest(init_seed, split_seed)
        existing = run_dir / "record.json"
        if reuse and existing.exists():
            rec = RunRecord.load(existing)
            if rec.status == "complete" and rec.config_digest == config.digest():
                log.info("reusing run %s", run_dir)
                return rec
        run_dir.mkdir(parents=True, exist_ok=True)
        with open(run_dir / "config.json", "w") as fh:
            json.dump({"experiment": config.to_dict(), "init_seed": init_seed, "split_seed": split_seed},
                      fh, indent=1)
    (X, y), (X_test, y_test) = build_datasets(config)
    tr, va = split_indices(config.d, config.n_train, split_seed)
    est = UNetSegmenter(n_classes=config.scene.n_classes, base_width=config.base_width,
                        epochs=config.epochs, batch_size=config.batch_size,
                        learning_rate=config.learning_rate, random_state=init_seed,
                        shuffle_seed=derive_seed("shuffle", init_seed, split_seed),
                        stop_below=stop_below, verbose=1)
    t0 = time.perf_counter()
    record = RunRecord(config.digest(), config.to_dict(), int(init_seed), int(split_seed),
                       [], [], [], None, None)
    try:
        est.fit(X[tr], y[tr], X[va] if len(va) else None, y[va] if len(va) else None)
    except DivergedLoss as exc:
        record.status = "diverged"
        if run_dir is not None:
            record.save(run_dir / "record.json")
        raise DivergedLoss(str(exc), record) from None
    record.train_loss = [float(v) for v in est.history_["train_loss"]]
    record.val_loss = [float(v) for v in est.history_["val_loss"]]
    record.epoch_seconds = [float(v) for v in est.history_["epoch_seconds"]]
    report, preds = evaluate_model(est.model_, X_test, y_test, config.scene, config.batch_size)
    record.metrics = report.to_dict()
    log.info("run init=%d split=%d: shirt precision %.4f recall %.4f (%.0fs)", init_seed, split_seed,
             report.precision(), report.recall(), time.perf_counter() - t0)
    if run_dir is not None:
        ckpt = run_dir / "model.ckpt"
        save_checkpoint(est.model_, ckpt, config_digest=config.digest(),
                        extra={"init_seed": int(init_seed), "split_seed": int(split_seed),
                               "regime": config.regime})
        record.checkpoint = str(ckpt)
        _write_run_outputs(run_dir, record, report, X_test, preds, y_test, config.n_overlays)
    record.model = est.model_
    return record


def evaluate_checkpoint(path, config: ExperimentConfig):
    model = load_checkpoint(path)
    if model.arch.out_channels != config.scene.n_classes:
        raise ShapeMismatch(f"checkpoint has {model.arch.out_channels} outputs, regime "
                            f"{config.regime} needs {config.scene.n_classes}")
    _, (X_test, y_test) = build_datasets(config)
    return evaluate_model(model, X_test, y_test, config.scene, config.batch_size)


# -- grids -------------------------------------------------------------------

@dataclass
class GridSummary:
    regime: str
    d: int
    n_runs: int
    n_converged: int
    precision_mean: float | None
    precision_std: float | None
    recall_mean: float | None
    recall_std: float | None

    @property
    def convergences(self) -> str:
        return f"{self.n_converged}/{self.n_runs}"

    def row(self) -> dict:
        def fmt(v):
            return "" if v is None else repr(v)
        return {"config": f"T-{self.regime.capitalize()}", "D": self.d,
                "precision_mean": fmt(self.precision_mean), "precision_std": fmt(self.precision_std),
                "recall_mean": fmt(self.recall_mean), "recall_std": fmt(self.recall_std),
                "convergences": self.convergences}

    def format(self) -> str:
        def pm(m, s):
            return "      -      " if m is None else f"{m:.2f} ± {s:.2f}"
        return (f"{'T-' + self.regime.capitalize():<9}{self.d:>7}  {pm(self.precision_mean, self.precision_std):>13}"
                f"  {pm(self.recall_mean, self.recall_std):>13}  {self.convergences:>6}")


TABLE_HEADER = f"{'Config.':<9}{'D':>7}  {'Precision':>13}  {'Recall':>13}  {'Conv.':>6}"


def summarize(records, regime: str | None = None, d: int | None = None) -> GridSummary:
    """Mean and population std of shirt precision/recall over converged runs."""
    records = list(records)
    if records:
        regime = regime or records[0].config["scene"]["regime"]
        d = d if d is not None else records[0].config["d"]
    conv = [r.report for r in records if r.converged]
    if not conv:
        return GridSummary(regime, d, len(records), 0, None, None, None, None)
    p = np.array([rep.precision() for rep in conv])
    r = np.array([rep.recall() for rep in conv])
    return GridSummary(regime, d, len(records), len(conv), float(p.mean()), float(p.std()),
                       float(r.mean()), float(r.std()))


def write_summary(summaries, path) -> str:
    summaries = list(summaries)
    with open(path, "w", newline="") as fh:
        rows = [s.row() for s in summaries]
        w = csv.DictWriter(fh, fieldnames=["config", "D", "precision_mean", "precision_std",
                                           "recall_mean", "recall_std", "convergences"])
        w.writeheader()
        w.writerows(rows)
    return "\n".join([TABLE_HEADER] + [s.format() for s in summaries])


def run_grid(config: ExperimentConfig, out_dir, init_seeds=None, split_seeds=None, reuse=True):
    """Fully crossed ``init_seeds x split_seeds`` grid; returns ``(records, summary)``."""
    init_seeds = config.init_seeds if init_seeds is None else init_seeds
    split_seeds = config.split_seeds if split_seeds is None else split_seeds
    records = []
    for i in init_seeds:
        for s in split_seeds:
            try:
                records.append(train_run(config, i, s, out_dir, reuse=reuse))
            except DivergedLoss as exc:
                records.append(exc.record)
    summary = summarize(records, config.regime, config.d)
    text = write_summary([summary], Path(out_dir) / "summary.csv")
    (Path(out_dir) / "summary.txt").write_text(text + "\n")
    return records, summary


# -- overlays ------------------------------------------------------------------

GREEN = (0, 200, 0)
BLUE = (0, 80, 255)
YELLOW = (255, 230, 0)
MAGENTA = (230, 0, 230)


def render_overlay(image, pred, truth, shirt: int = 1) -> np.ndarray:
    """RGB uint8: green TP, yellow shirt FP, magenta other FP, blue FN, gray elsewhere.

    A pixel that is both a false positive of one class and a false negative
    of another is drawn with the false-positive colour.
    """
    image, pred, truth = np.asarray(image), np.asarray(pred), np.asarray(truth)
    if not (image.shape == pred.shape == truth.shape):
        raise ShapeMismatch(f"image {image.shape}, prediction {pred.shape}, truth {truth.shape}")
    gray = np.clip(np.rint(image * 255), 0, 255).astype(np.uint8)
    out = np.repeat(gray[..., None], 3, axis=-1)
    tp = (pred == truth) & (truth != 0)
    fn = (truth != 0) & (pred != truth)
    fp = (pred != 0) & (pred != truth)
    out[fn] = BLUE
    out[fp & (pred != shirt)] = MAGENTA
    out[fp & (pred == shirt)] = YELLOW
    out[tp] = GREEN
    return out
