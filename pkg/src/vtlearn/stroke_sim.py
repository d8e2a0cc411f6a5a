"""Synthetic stand-in for the robot stroking rig.

Generates parametrized materials, renders texture photos whose edge
statistics track the material parameters, and simulates constant-velocity
strokes that emit raw 16-bit tactile sequences with known ground-truth
property degrees.  The signal model captures shape only (rest baseline,
contact ramp, plateau with oscillation): the downstream property scores
depend on extrema and oscillation counts, nothing finer.

Visual encoding: pattern period tracks roughness frequency, contrast
tracks roughness amplitude, stripe duty (or speckle radius) tracks
friction, and edge sharpness tracks hardness.  Edge maps are rescaled
per image downstream, so every property is carried by pattern structure
rather than absolute brightness.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageFilter

FLOAT = np.float64

STYLES = ("stripes", "grid", "speckle")

REST_BASELINE = 32768.0
RAW_MAX = 65535.0
COUNTS_PER_NEWTON = 2000.0

# z oscillation amplitude = SIN_AMP_FRAC * roughness_amp * z plateau
SIN_AMP_FRAC = 0.5
# stick-slip: +-10% modulation of the shear plateau at 5x roughness frequency
STICK_SLIP_FRAC = 0.1
STICK_SLIP_FREQ_MULT = 5.0
# x-axis jitter during the stroke, as a fraction of full press level
X_NOISE_FRAC = 0.01
# taxel columns are 1/20 stroke length apart (phase offsets along travel)
TAXEL_PITCH_FRAC = 0.05

TAXEL_GRID = 4
N_TAXELS = TAXEL_GRID * TAXEL_GRID

# the rendered patch spans this many stroke lengths across its width
PATCH_WIDTHS_PER_STROKE = 4.0


@dataclass(frozen=True)
class MaterialSpec:
    """Ground-truth material parameters; seed fixes all randomness."""

    material_id: str
    hardness: float            # [0, 1]
    roughness_freq: float      # oscillations per stroke, [1, 40]
    roughness_amp: float       # [0, 1]
    friction: float            # [0, 1]
    texture_style: str         # stripes | grid | speckle
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.hardness <= 1.0:
            raise ValueError(f"hardness out of [0,1]: {self.hardness}")
        if not 1.0 <= self.roughness_freq <= 40.0:
            raise ValueError(
                f"roughness_freq out of [1,40]: {self.roughness_freq}")
        if not 0.0 <= self.roughness_amp <= 1.0:
            raise ValueError(f"roughness_amp out of [0,1]: {self.roughness_amp}")
        if not 0.0 <= self.friction <= 1.0:
            raise ValueError(f"friction out of [0,1]: {self.friction}")
        if self.texture_style not in STYLES:
            raise ValueError(f"unknown texture_style: {self.texture_style!r}")


@dataclass(frozen=True)
class StrokeConfig:
    """Acquisition parameters of one stroke."""

    steps: int = 900
    sample_rate: float = 100.0        # Hz
    press_force: float = 5.0          # N
    stroke_length: float = 3.0e-2     # m
    speed: float = 2.0e-3             # m/s
    sensor_noise_sd: float = 40.0     # raw counts

    def __post_init__(self):
        if self.steps < 100:
            raise ValueError("steps must be >= 100 (calibration window plus content)")
        for name in ("sample_rate", "press_force", "stroke_length", "speed"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sensor_noise_sd < 0:
            raise ValueError("sensor_noise_sd must be non-negative")


def phase_lengths(steps):
    """(rest, ramp, stroke) step counts; stroke covers the last 80% at 900."""
    rest = max(50, round(steps / 9))
    ramp = round(steps * 4 / 45)
    stroke = steps - rest - ramp
    if stroke < 10:
        raise ValueError(
            f"steps={steps} too small to contain rest/ramp/stroke phases")
    return rest, ramp, stroke


def sample_materials(n, seed):
    """Draw n materials with uniform parameters over the declared ranges."""
    if n < 1:
        raise ValueError("need at least one material")
    rng = np.random.default_rng(seed)
    specs = []
    for i in range(n):
        h = float(rng.uniform(0.0, 1.0))
        rf = float(rng.uniform(1.0, 40.0))
        ra = float(rng.uniform(0.0, 1.0))
        mu = float(rng.uniform(0.0, 1.0))
        style = STYLES[int(rng.integers(0, len(STYLES)))]
        mseed = int(rng.integers(0, 2**62))
        specs.append(MaterialSpec(
            material_id=f"m{i:02d}", hardness=h, roughness_freq=rf,
            roughness_amp=ra, friction=mu, texture_style=style, seed=mseed))
    return specs


def _speckle_pattern(rng, width, height, period, radius):
    """+1 canvas with -1 disks; count scales inversely with period."""
    pattern = np.ones((height, width), dtype=FLOAT)
    n_dots = max(1, int(round(3.0 * width * height / (period * period))))
    cx = rng.uniform(0, width, size=n_dots)
    cy = rng.uniform(0, height, size=n_dots)
    r2 = radius * radius
    ir = int(np.ceil(radius))
    for x0, y0 in zip(cx, cy):
        xa, xb = int(x0) - ir, int(x0) + ir + 1
        ya, yb = int(y0) - ir, int(y0) + ir + 1
        xa, xb = max(xa, 0), min(xb, width)
        ya, yb = max(ya, 0), min(yb, height)
        if xa >= xb or ya >= yb:
            continue
        gx = np.arange(xa, xb) - x0
        gy = np.arange(ya, yb) - y0
        mask = gy[:, None] ** 2 + gx[None, :] ** 2 <= r2
        pattern[ya:yb, xa:xb][mask] = -1.0
    return pattern


def render_texture(spec, width=640, height=480):
    """Render a grayscale-patterned RGB uint8 image (height, width, 3).

    Pattern period is the stroke-equivalent wavelength of roughness_freq
    (the patch spans PATCH_WIDTHS_PER_STROKE stroke lengths), contrast is
    proportional to roughness_amp (zero amp gives a constant image), dark
    fraction / dot radius follows friction, and the pattern is softened
    by a blur whose radius grows as hardness drops.
    """
    rng = np.random.default_rng(spec.seed)
    period = width / (PATCH_WIDTHS_PER_STROKE * spec.roughness_freq)
    duty = 0.25 + 0.5 * spec.friction
    amp = 127.0 * spec.roughness_amp
    phase0 = rng.uniform(0.0, 1.0)

    if spec.texture_style == "stripes":
        fx = (np.arange(width) / period + phase0) % 1.0
        pattern = np.where(fx < duty, -1.0, 1.0)[None, :].repeat(height, axis=0)
    elif spec.texture_style == "grid":
        fx = (np.arange(width) / period + phase0) % 1.0
        fy = (np.arange(height) / period + phase0) % 1.0
        dark = (fx < duty)[None, :] | (fy < duty)[:, None]
        pattern = np.where(dark, -1.0, 1.0)
    else:
        radius = 2.0 + 6.0 * spec.friction
        pattern = _speckle_pattern(rng, width, height, period, radius)

    gray = np.clip(np.rint(128.0 + amp * pattern), 0, 255).astype(np.uint8)
    blur_radius = 2.5 * (1.0 - spec.hardness)
    if blur_radius > 0.05:
        img = Image.fromarray(gray, mode="L")
        img = img.filter(ImageFilter.BoxBlur(blur_radius))
        gray = np.asarray(img, dtype=np.uint8)
    return np.repeat(gray[:, :, None], 3, axis=2)


def simulate_stroke(spec, cfg=StrokeConfig()):
    """Simulate one stroke; returns integral raw counts (steps, 16, 3).

    Axes are (x, y, z).  Phase 1 rests at the 32768 baseline (contact
    free, so calibration removes it exactly when noiseless), phase 2
    ramps z linearly to a plateau scaled by hardness x press force,
    phase 3 strokes: z carries roughness_freq sinusoid cycles, y a shear
    plateau proportional to friction x press with stick-slip modulation,
    x zero-mean jitter.  Taxel columns get phase offsets from their
    spacing along the travel direction.  Gaussian sensor noise is added
    everywhere and values are clamped to [0, 65535].
    """
    rest, ramp, stroke = phase_lengths(cfg.steps)
    rng = np.random.default_rng(spec.seed)
    press = cfg.press_force * COUNTS_PER_NEWTON
    plateau_z = spec.hardness * press
    amp_z = SIN_AMP_FRAC * spec.roughness_amp * plateau_z
    plateau_y = spec.friction * press

    seq = np.zeros((cfg.steps, N_TAXELS, 3), dtype=FLOAT)
    u = (np.arange(stroke) + 0.5) / stroke      # stroke progress in (0,1)
    ramp_frac = (np.arange(ramp) + 1.0) / ramp if ramp else np.zeros(0)
    onset = min(20, max(1, stroke // 10))
    y_onset = np.minimum((np.arange(stroke) + 1.0) / onset, 1.0)
    s0 = rest + ramp

    for taxel in range(N_TAXELS):
        col = taxel % TAXEL_GRID
        phi = 2.0 * np.pi * spec.roughness_freq * TAXEL_PITCH_FRAC * col
        z = seq[:, taxel, 2]
        z[rest:s0] = ramp_frac * plateau_z
        z[s0:] = plateau_z + amp_z * np.sin(
            2.0 * np.pi * spec.roughness_freq * u + phi)
        wob = 1.0 + STICK_SLIP_FRAC * np.sin(
            2.0 * np.pi * STICK_SLIP_FREQ_MULT * spec.roughness_freq * u + phi)
        seq[s0:, taxel, 1] = plateau_y * wob * y_onset
        seq[s0:, taxel, 0] = rng.normal(0.0, X_NOISE_FRAC * press, size=stroke)

    seq += REST_BASELINE
    if cfg.sensor_noise_sd > 0:
        seq += rng.normal(0.0, cfg.sensor_noise_sd, size=seq.shape)
    return np.clip(np.rint(seq), 0.0, RAW_MAX)


def write_tactile_csv(path, seq):
    """Write one sequence as `step,taxel,fx,fy,fz` rows (step-major)."""
    steps, taxels, _ = seq.shape
    lines = ["step,taxel,fx,fy,fz"]
    for t in range(steps):
        for k in range(taxels):
            x, y, z = seq[t, k]
            lines.append(f"{t},{k},{int(x)},{int(y)},{int(z)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_materials_csv(path, materials):
    """Persist ground-truth parameters for provenance and analysis."""
    lines = ["material_id,hardness,roughness_freq,roughness_amp,friction,texture_style,seed"]
    for m in materials:
        lines.append(f"{m.material_id},{m.hardness!r},{m.roughness_freq!r},"
                     f"{m.roughness_amp!r},{m.friction!r},{m.texture_style},{m.seed}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_materials_csv(path):
    lines = Path(path).read_text().splitlines()
    out = []
    for line in lines[1:]:
        mid, h, rf, ra, mu, style, seed = line.split(",")
        out.append(MaterialSpec(mid, float(h), float(rf), float(ra),
                                float(mu), style, int(seed)))
    return out


def _stroke_seed(seed, stroke_idx, salt):
    ss = np.random.SeedSequence((seed, stroke_idx, salt))
    return int(ss.generate_state(1, np.uint64)[0])


def generate_dataset(materials, out_dir, strokes_per_material=10,
                     cfg=StrokeConfig()):
    """Write images, tactile CSVs, materials.csv, and the manifest.

    Each stroke re-simulates with a derived seed and re-exposes the
    material photo under a seeded illumination gain in [0.9, 1.1].
    Returns the manifest path.  Output is bitwise reproducible.
    """
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "tactile").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directories under {out}: {e}") from e
    lines = []
    for spec in materials:
        base = render_texture(spec).astype(FLOAT)
        for j in range(strokes_per_material):
            sseed = _stroke_seed(spec.seed, j, 0)
            grng = np.random.default_rng(_stroke_seed(spec.seed, j, 1))
            gain = 0.9 + 0.2 * grng.uniform()
            img = np.clip(np.rint(base * gain), 0, 255).astype(np.uint8)
            img_rel = f"images/{spec.material_id}_s{j:02d}.png"
            tac_rel = f"tactile/{spec.material_id}_s{j:02d}.csv"
            try:
                Image.fromarray(img, mode="RGB").save(out / img_rel)
                seq = simulate_stroke(
                    dataclasses.replace(spec, seed=sseed), cfg)
                write_tactile_csv(out / tac_rel, seq)
            except OSError as e:
                raise OSError(f"failed writing {out / img_rel}: {e}") from e
            lines.append(f"{spec.material_id},{j},{img_rel},{tac_rel}")
    write_materials_csv(out / "materials.csv", materials)
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
