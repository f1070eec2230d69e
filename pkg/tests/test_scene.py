import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from csolab.scene import (OI_CLASSES, CsoConfig, SceneInstance, export_dataset, generate_scenes,
                          load_dataset, render_scene, sample_scene, scene_seed, stack_scenes)
from oracles import pairwise_distances

seeds = st.integers(0, 2 ** 63 - 1)
regimes = st.sampled_from(["easy", "hard", "strict"])


def test_regime_presets():
    e, h, s = (CsoConfig.for_regime(r) for r in ("easy", "hard", "strict"))
    assert (e.noise_class, h.noise_class, s.noise_class) == ("shoe", "shirt", "shirt")
    assert (e.translation_bound, h.translation_bound, s.translation_bound) == (32, 32, 40)
    assert (e.jitter_bound, h.jitter_bound, s.jitter_bound) == (16, 16, 0)
    assert s.noise_region == "bottom-left" and s.target_classes == ("shirt",)
    assert (e.n_classes, h.n_classes, s.n_classes) == (4, 4, 2)
    with pytest.raises(ValueError):
        CsoConfig.for_regime("medium")


def test_canonical_triangle():
    v = CsoConfig().canonical_vertices()
    assert v == {"shirt": (48, 104), "pants": (112, 104), "bag": (48, 56)}
    assert pairwise_distances(v.values()) == [48.0, 64.0, 80.0]
    xs, ys = [p[0] for p in v.values()], [p[1] for p in v.values()]
    # bounding box of the centred structure sits on the image centre
    assert ((min(xs) + max(xs)) / 2, (min(ys) + max(ys)) / 2) == (80, 80)


@given(seeds)
def test_strict_distances_exact(seed):
    inst = sample_scene(CsoConfig.for_regime("strict"), seed)
    assert pairwise_distances(inst.oi_centers.values()) == [48.0, 64.0, 80.0]


@given(regimes, seeds)
def test_offsets_and_jitter_bounded(regime, seed):
    cfg = CsoConfig.for_regime(regime)
    inst = sample_scene(cfg, seed)
    assert all(abs(v) <= cfg.translation_bound for v in inst.structure_offset)
    assert all(abs(v) <= cfg.jitter_bound for j in inst.jitters.values() for v in j)
    verts = cfg.canonical_vertices()
    for c in OI_CLASSES:
        assert inst.oi_centers[c] == (verts[c][0] + inst.structure_offset[0] + inst.jitters[c][0],
                                      verts[c][1] + inst.structure_offset[1] + inst.jitters[c][1])


@given(st.sampled_from(["easy", "hard"]), seeds)
def test_distance_deviation_bound(regime, seed):
    inst = sample_scene(CsoConfig.for_regime(regime), seed)
    c = inst.oi_centers
    for (a, b), d0 in {("shirt", "pants"): 64, ("shirt", "bag"): 48, ("pants", "bag"): 80}.items():
        assert abs(math.dist(c[a], c[b]) - d0) <= 32 * math.sqrt(2) + 1e-9


@given(regimes, seeds)
def test_noise_inside_region(regime, seed):
    cfg = CsoConfig.for_regime(regime)
    inst = sample_scene(cfg, seed)
    assert len(inst.noise_centers) == 3
    for x, y in inst.noise_centers:
        if regime == "strict":
            assert 0 <= x < 80 and 80 <= y < 160
        else:
            assert 0 <= x < 160 and 0 <= y < 160


def test_sample_scene_draw_order_documented():
    """Replaying the documented draw order on the same stream reproduces the scene."""
    cfg = CsoConfig.for_regime("easy")
    inst = sample_scene(cfg, np.random.default_rng(99))
    rng = np.random.default_rng(99)
    off = (rng.integers(-32, 32, endpoint=True), rng.integers(-32, 32, endpoint=True))
    jit = [(rng.integers(-16, 16, endpoint=True), rng.integers(-16, 16, endpoint=True)) for _ in range(3)]
    noise = [(rng.integers(0, 160), rng.integers(0, 160)) for _ in range(3)]
    keys = [rng.integers(0, 2 ** 63) for _ in range(6)]
    assert inst.structure_offset == off
    assert [inst.jitters[c] for c in OI_CLASSES] == jit
    assert inst.noise_centers == [(float(x), float(y)) for x, y in noise]
    assert inst.sprite_keys["oi"] + inst.sprite_keys["noise"] == keys


def _check_foreground(scene, cfg, sprites):
    """mask(p) = c implies the class-c OI sprite is drawn non-zero at p, and shows in the image."""
    keys = dict(zip(OI_CLASSES, scene.instance.sprite_keys["oi"]))
    size = cfg.image_size
    violations = 0
    for c in cfg.target_classes:
        label = cfg.label_of(c)
        ys, xs = np.nonzero(scene.mask == label)
        px = sprites.resolve(c, keys[c]).pixels
        cx, cy = (int(round(v)) for v in scene.instance.oi_centers[c])
        for y, x in zip(ys, xs):
            r, q = y - cy + 14, x - cx + 14
            ok = 0 <= r < 28 and 0 <= q < 28 and px[r, q] > 0 and scene.image[y, x] == px[r, q]
            violations += not ok
    assert scene.mask.shape == scene.image.shape == (size, size)
    return violations


@given(regimes, seeds)
def test_foreground_and_label_rules(regime, seed):
    from csolab.sprites import SpriteProvider
    sprites = SpriteProvider.synthetic("train")
    cfg = CsoConfig.for_regime(regime)
    sc = render_scene(sample_scene(cfg, seed), cfg, sprites)
    assert _check_foreground(sc, cfg, sprites) == 0
    allowed = {0, 1} if regime == "strict" else {0, 1, 2, 3}
    assert set(np.unique(sc.mask)) <= allowed
    assert sc.image.min() >= 0 and sc.image.max() <= 1


def test_noise_under_shirt_is_hidden(train_sprites):
    cfg = CsoConfig.for_regime("hard")
    inst = SceneInstance({"shirt": (60.0, 60.0), "pants": (124.0, 60.0), "bag": (60.0, 12.0)},
                         [(62.0, 61.0)], (0, 0), {c: (0, 0) for c in OI_CLASSES},
                         {"oi": [1, 2, 3], "noise": [4]})
    sc = render_scene(inst, cfg, train_sprites)
    shirt = train_sprites.resolve("shirt", 1).pixels
    noise = train_sprites.resolve("shirt", 4).pixels
    win = sc.image[46:74, 46:74]
    on = shirt > 0
    assert np.array_equal(win[on], shirt[on])
    assert np.all(sc.mask[46:74, 46:74][on] == 1)
    # noise is still visible where the shirt sprite is empty and the noise is not
    noise_only = np.zeros((160, 160), bool)
    noise_only[47:75, 48:76] = noise > 0
    noise_only[46:74, 46:74] &= ~on
    assert np.all(sc.image[noise_only] > 0)
    assert np.all(sc.mask[noise_only] == 0)


def test_later_oi_overwrites_label(train_sprites):
    cfg = CsoConfig.for_regime("easy")
    inst = SceneInstance({"shirt": (80.0, 80.0), "pants": (84.0, 80.0), "bag": (20.0, 20.0)}, [],
                         (0, 0), {c: (0, 0) for c in OI_CLASSES}, {"oi": [0, 0, 0], "noise": []})
    cfg = CsoConfig.for_regime("easy", noise_count=0)
    sc = render_scene(inst, cfg, train_sprites)
    pants = np.zeros((160, 160), bool)
    pants[66:94, 70:98] = train_sprites.resolve("pants", 0).pixels > 0
    assert np.all(sc.mask[pants] == 2)


def test_border_clipping(train_sprites):
    cfg = CsoConfig.for_regime("easy", noise_count=0)
    inst = SceneInstance({"shirt": (0.0, 159.0), "pants": (200.0, 80.0), "bag": (159.0, 0.0)}, [],
                         (0, 0), {c: (0, 0) for c in OI_CLASSES}, {"oi": [5, 6, 7], "noise": []})
    sc = render_scene(inst, cfg, train_sprites)
    shirt = train_sprites.resolve("shirt", 5).pixels
    assert np.array_equal(sc.image[145:160, 0:14], shirt[0:15, 14:28])
    assert not np.any(sc.mask == 2)             # pants fully off-image


def test_strict_mask_only_shirt(train_sprites):
    cfg = CsoConfig.for_regime("strict")
    scenes = generate_scenes(cfg, 20, 3, train_sprites)
    assert set(np.unique(np.stack([s.mask for s in scenes]))) <= {0, 1}


def test_render_deterministic(train_sprites):
    cfg = CsoConfig.for_regime("hard")
    inst = sample_scene(cfg, 17)
    a, b = render_scene(inst, cfg, train_sprites), render_scene(inst, cfg, train_sprites)
    assert np.array_equal(a.image, b.image) and np.array_equal(a.mask, b.mask)


def test_generate_is_pure(train_sprites):
    cfg = CsoConfig.for_regime("easy")
    a = stack_scenes(generate_scenes(cfg, 6, 11, train_sprites))
    b = stack_scenes(generate_scenes(cfg, 6, 11, train_sprites))
    c = stack_scenes(generate_scenes(cfg, 6, 12, train_sprites))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not np.array_equal(a[0], c[0])
    assert scene_seed(11, 0) != scene_seed(11, 1) != scene_seed(12, 1)


def test_export_load_roundtrip(tmp_path, train_sprites):
    cfg = CsoConfig.for_regime("hard")
    scenes = generate_scenes(cfg, 10, 5, train_sprites)
    manifest = export_dataset(scenes, tmp_path, cfg, 5, train_sprites)
    imgs, masks, loaded = load_dataset(tmp_path)
    X, y = stack_scenes(scenes)
    assert np.array_equal(imgs, X) and np.array_equal(masks, y)
    assert imgs.dtype == np.float32
    assert loaded == json.loads(json.dumps(manifest))
    assert sorted(p.name for p in (tmp_path / "images").iterdir()) == [f"{i:04d}.png" for i in range(10)]


def test_strict_manifest_noise_containment(tmp_path, train_sprites):
    cfg = CsoConfig.for_regime("strict")
    export_dataset(generate_scenes(cfg, 25, 8, train_sprites), tmp_path, cfg, 8, train_sprites)
    raw = json.loads(Path(tmp_path, "manifest.json").read_text())
    pts = [p for s in raw["scenes"] for p in s["noise_centers"]]
    assert len(pts) == 75
    assert all(0 <= x < 80 and 80 <= y < 160 for x, y in pts)


def test_export_empty(tmp_path):
    manifest = export_dataset([], tmp_path)
    assert manifest["count"] == 0 and manifest["scenes"] == []
    imgs, masks, _ = load_dataset(tmp_path)
    assert len(imgs) == 0 and len(masks) == 0


def test_load_rejects_foreign_manifest(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"format": "other", "version": 1}))
    with pytest.raises(ValueError):
        load_dataset(tmp_path)


def test_instance_dict_roundtrip():
    inst = sample_scene(CsoConfig.for_regime("easy"), 4)
    again = SceneInstance.from_dict(json.loads(json.dumps(inst.to_dict())))
    assert again == inst


def test_config_dict_roundtrip():
    cfg = CsoConfig.for_regime("strict", noise_count=5)
    assert CsoConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
