"""Synthetic rig: material sampling, texture rendering, stroke simulation."""

import numpy as np
import pytest

from vtlearn import analysis, preprocess, stroke_sim
from vtlearn.stroke_sim import MaterialSpec, StrokeConfig


def spec(**kw):
    base = dict(material_id="m00", hardness=0.6, roughness_freq=8.0,
                roughness_amp=0.5, friction=0.4, texture_style="stripes",
                seed=3)
    base.update(kw)
    return MaterialSpec(**base)


# ---- domain type validation -------------------------------------------------

@pytest.mark.parametrize("bad", [
    dict(hardness=-0.1), dict(hardness=1.2),
    dict(roughness_freq=0.5), dict(roughness_freq=41.0),
    dict(roughness_amp=-0.01), dict(roughness_amp=1.01),
    dict(friction=-0.2), dict(friction=2.0),
    dict(texture_style="velvet"),
])
def test_material_spec_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        spec(**bad)


def test_material_spec_accepts_boundaries():
    spec(hardness=0.0, roughness_amp=0.0, friction=0.0, roughness_freq=1.0)
    spec(hardness=1.0, roughness_amp=1.0, friction=1.0, roughness_freq=40.0)


@pytest.mark.parametrize("bad", [
    dict(steps=99), dict(sample_rate=0.0), dict(press_force=-1.0),
    dict(stroke_length=0.0), dict(speed=-2.0), dict(sensor_noise_sd=-0.1),
])
def test_stroke_config_rejects_invalid(bad):
    with pytest.raises(ValueError):
        StrokeConfig(**bad)


# ---- phase layout -----------------------------------------------------------

def test_phase_lengths_default():
    assert stroke_sim.phase_lengths(900) == (100, 80, 720)


@pytest.mark.parametrize("steps", [100, 250, 900, 1800])
def test_phase_lengths_partition(steps):
    rest, ramp, stroke = stroke_sim.phase_lengths(steps)
    assert rest + ramp + stroke == steps
    assert rest >= 50 and ramp >= 0 and stroke >= 10


def test_phase_lengths_too_small():
    with pytest.raises(ValueError):
        stroke_sim.phase_lengths(60)


# ---- material sampling ------------------------------------------------------

def test_sample_materials_deterministic():
    assert stroke_sim.sample_materials(25, 7) == stroke_sim.sample_materials(25, 7)


def test_sample_materials_unique_ids():
    mats = stroke_sim.sample_materials(25, 7)
    assert len({m.material_id for m in mats}) == 25


def test_sample_materials_in_range():
    for m in stroke_sim.sample_materials(200, 11):
        assert 0.0 <= m.hardness <= 1.0
        assert 1.0 <= m.roughness_freq <= 40.0
        assert 0.0 <= m.roughness_amp <= 1.0
        assert 0.0 <= m.friction <= 1.0
        assert m.texture_style in stroke_sim.STYLES


def test_sample_materials_uniform_deciles():
    # binomial per decile bin: n=10000, p=0.1 -> sd 30; require +-3 sd
    mats = stroke_sim.sample_materials(10000, 123)
    columns = [
        (np.array([m.hardness for m in mats]), 0.0, 1.0),
        (np.array([m.roughness_freq for m in mats]), 1.0, 40.0),
        (np.array([m.roughness_amp for m in mats]), 0.0, 1.0),
        (np.array([m.friction for m in mats]), 0.0, 1.0),
    ]
    for values, lo, hi in columns:
        hist, _ = np.histogram(values, bins=10, range=(lo, hi))
        assert np.abs(hist - 1000).max() <= 90


# ---- texture rendering ------------------------------------------------------

def test_render_texture_shape_dtype():
    img = stroke_sim.render_texture(spec())
    assert img.shape == (480, 640, 3)
    assert img.dtype == np.uint8
    assert np.array_equal(img[:, :, 0], img[:, :, 1])
    assert np.array_equal(img[:, :, 0], img[:, :, 2])


def test_render_texture_zero_amplitude_constant():
    img = stroke_sim.render_texture(spec(roughness_amp=0.0))
    assert img.min() == img.max()


def test_render_texture_deterministic():
    a = stroke_sim.render_texture(spec(texture_style="speckle"))
    b = stroke_sim.render_texture(spec(texture_style="speckle"))
    assert np.array_equal(a, b)


def test_render_texture_edge_count_tracks_frequency():
    # doubling the stripe frequency doubles above-threshold edge pixels
    def edge_count(rf):
        img = stroke_sim.render_texture(
            spec(hardness=1.0, roughness_freq=rf, roughness_amp=1.0,
                 friction=0.5, seed=99))
        edges = preprocess.edge_extract(img, (0, 0))
        return int((edges > 0.0).sum())

    low = edge_count(5.0)
    high = edge_count(10.0)
    assert low > 0
    assert abs(high / low - 2.0) <= 0.2


# ---- stroke simulation ------------------------------------------------------

def test_simulate_stroke_shape_range_integrality():
    seq = stroke_sim.simulate_stroke(spec())
    assert seq.shape == (900, 16, 3)
    assert seq.min() >= 0.0 and seq.max() <= 65535.0
    assert np.array_equal(seq, np.rint(seq))


def test_simulate_stroke_deterministic():
    a = stroke_sim.simulate_stroke(spec())
    b = stroke_sim.simulate_stroke(spec())
    assert np.array_equal(a, b)


def test_simulate_stroke_noiseless_rest_at_baseline():
    cfg = StrokeConfig(sensor_noise_sd=0.0)
    seq = stroke_sim.simulate_stroke(spec(), cfg)
    rest, _, _ = stroke_sim.phase_lengths(cfg.steps)
    assert np.all(seq[:rest] == stroke_sim.REST_BASELINE)


def test_simulate_stroke_zero_friction_mean():
    # calibrated y over the stroking window is noise-only at mu=0
    cfg = StrokeConfig()
    seq = stroke_sim.simulate_stroke(spec(friction=0.0, seed=14), cfg)
    rest, ramp, stroke = stroke_sim.phase_lengths(cfg.steps)
    y = preprocess.calibrate(seq)[rest + ramp:, :, 1]
    tol = 3.0 * cfg.sensor_noise_sd / np.sqrt(y.size)
    assert abs(y.mean()) <= tol


def test_simulate_stroke_flat_surface_zero_roughness():
    seq = stroke_sim.simulate_stroke(spec(roughness_amp=0.0, seed=21))
    down = preprocess.downsample(preprocess.calibrate(seq))
    stats = preprocess.normalize_fit([down])
    tensor = preprocess.tactile_tensor(preprocess.normalize_apply(down, stats))
    assert analysis.roughness_score(tensor) == 0


def test_simulate_stroke_roughness_oracle():
    # noiseless rf=12 scores 12 +- 1 through the downsampling pipeline
    cfg = StrokeConfig(sensor_noise_sd=0.0)
    seq = stroke_sim.simulate_stroke(
        spec(hardness=0.9, roughness_freq=12.0, roughness_amp=0.8), cfg)
    tensor = preprocess.tactile_tensor(
        preprocess.downsample(preprocess.calibrate(seq)))
    assert abs(analysis.roughness_score(tensor) - 12) <= 1


def test_simulate_stroke_hardness_sets_z_plateau():
    cfg = StrokeConfig(sensor_noise_sd=0.0)
    seq = stroke_sim.simulate_stroke(
        spec(hardness=0.8, roughness_amp=0.0), cfg)
    z = preprocess.calibrate(seq)[:, :, 2]
    expected = 0.8 * cfg.press_force * stroke_sim.COUNTS_PER_NEWTON
    assert abs(z.max() - expected) <= 1.0


# ---- dataset generation -----------------------------------------------------

def test_generate_dataset_layout(tmp_path):
    mats = stroke_sim.sample_materials(2, 5)
    manifest = stroke_sim.generate_dataset(mats, tmp_path, strokes_per_material=3)
    entries = preprocess.load_manifest(manifest)
    assert len(entries) == 6
    assert sorted({e.material_id for e in entries}) == ["m00", "m01"]
    for e in entries:
        assert e.image_path.exists()
        assert e.tactile_path.exists()
    lines = (tmp_path / "tactile" / "m00_s00.csv").read_text().splitlines()
    assert len(lines) == 900 * 16 + 1
    assert lines[0] == "step,taxel,fx,fy,fz"


def test_generate_dataset_bitwise_reproducible(tmp_path):
    mats = stroke_sim.sample_materials(1, 9)
    m1 = stroke_sim.generate_dataset(mats, tmp_path / "a", strokes_per_material=2)
    m2 = stroke_sim.generate_dataset(mats, tmp_path / "b", strokes_per_material=2)
    for p1 in sorted((tmp_path / "a").rglob("*")):
        if p1.is_dir():
            continue
        p2 = tmp_path / "b" / p1.relative_to(tmp_path / "a")
        assert p2.read_bytes() == p1.read_bytes(), p1.name
    assert m1.read_text() == m2.read_text()


def test_generate_dataset_illumination_varies(tmp_path):
    mats = [spec(roughness_amp=1.0)]
    stroke_sim.generate_dataset(mats, tmp_path, strokes_per_material=3)
    imgs = [(tmp_path / "images" / f"m00_s{j:02d}.png").read_bytes()
            for j in range(3)]
    assert len(set(imgs)) > 1


def test_materials_csv_roundtrip(tmp_path):
    mats = stroke_sim.sample_materials(5, 13)
    path = tmp_path / "materials.csv"
    stroke_sim.write_materials_csv(path, mats)
    assert stroke_sim.read_materials_csv(path) == mats
