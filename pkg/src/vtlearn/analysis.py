"""Property scoring, latent embedding, and correlation reporting.

Scores are the synthetic ground-truth hooks: roughness is a hysteresis
oscillation count on the z axis inside the stroking window, hardness and
friction are peak |z| and |y| over the whole sequence, and the combined
score is roughness x hardness.  Materials are embedded as the mean 4-D
latent over their crops; Spearman rank correlation (average ranks for
ties) quantifies how well each latent coordinate orders the materials by
each property.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import models

FLOAT = np.float64

HYSTERESIS = 0.05
N_TAXELS = 16
PROPERTY_NAMES = ("combined", "hardness", "friction")


@dataclass(frozen=True)
class PropertyScores:
    roughness: int
    hardness: float
    friction: float
    combined: float


@dataclass(frozen=True)
class LatentEmbedding:
    z: np.ndarray               # (4,)
    material_id: str
    known: bool


def _window_start(steps):
    # stroking occupies the last 80% of the recording
    return int(np.floor(steps * 0.2))


def _count_crossings(signal, band=HYSTERESIS):
    """Positive-going crossings with hysteresis; starts armed.

    A count fires on the transition past +band while armed; dipping
    below -band re-arms.  The state before the window is treated as
    below band, so a first sample already above +band fires at once.
    A zero-phase k-cycle sinusoid in the window then counts exactly k;
    other phases may gain one from a partial leading excursion, which
    the per-taxel median absorbs.
    """
    armed = True
    prev_above = False          # pre-window state counts as below band
    count = 0
    for x in signal:
        above = x > band
        if armed and above and not prev_above:
            count += 1
            armed = False
        elif x < -band:
            armed = True
        prev_above = above
    return count


def roughness_score(seq):
    """Median over taxels of the z-axis oscillation count in the window."""
    seq = np.asarray(seq, dtype=FLOAT)
    if seq.ndim != 4 or seq.shape[0] != 3:
        raise ValueError(f"expected (3, 4, 4, T) tensor, got {seq.shape}")
    steps = seq.shape[-1]
    start = _window_start(steps)
    z = seq[2].reshape(N_TAXELS, steps)[:, start:]
    centered = z - z.mean(axis=1, keepdims=True)
    counts = [_count_crossings(row) for row in centered]
    return int(np.rint(np.median(counts)))


def hardness_score(seq):
    """Peak |z| over all taxels and steps."""
    seq = np.asarray(seq, dtype=FLOAT)
    return float(np.abs(seq[2]).max())


def friction_score(seq):
    """Peak |y| over all taxels and steps."""
    seq = np.asarray(seq, dtype=FLOAT)
    return float(np.abs(seq[1]).max())


def property_scores(seq):
    r = roughness_score(seq)
    h = hardness_score(seq)
    return PropertyScores(roughness=r, hardness=h,
                          friction=friction_score(seq), combined=r * h)


def score_material(seqs):
    """Aggregate per-stroke scores into one PropertyScores via medians."""
    seqs = list(seqs)
    if not seqs:
        raise ValueError("no sequences to score")
    per = [property_scores(s) for s in seqs]
    r = int(np.rint(np.median([p.roughness for p in per])))
    h = float(np.median([p.hardness for p in per]))
    return PropertyScores(roughness=r, hardness=h,
                          friction=float(np.median([p.friction for p in per])),
                          combined=r * h)


# ---- latent embedding ------------------------------------------------------

def embed_materials(net, groups, known_ids):
    """Mean latent per material over all its edge images.

    groups maps material_id -> (N, 200, 200) stack of edge images; the
    mean runs in stack order so results do not depend on dict ordering.
    Returns embeddings sorted by material_id.
    """
    known = set(known_ids)
    out = []
    for mid in sorted(groups):
        stack = np.asarray(groups[mid], dtype=FLOAT)
        if stack.ndim != 3 or stack.shape[0] == 0:
            raise ValueError(f"material {mid}: empty or malformed crop stack")
        latents = models.infer_latent(net, stack[:, None, :, :])
        out.append(LatentEmbedding(z=latents.mean(axis=0),
                                   material_id=mid, known=mid in known))
    return out


# ---- Spearman correlation --------------------------------------------------

def average_ranks(values):
    """Ranks 1..n with ties replaced by their average rank."""
    x = np.asarray(values, dtype=FLOAT)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x), dtype=FLOAT)
    xs = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b):
    """Spearman rho with average-rank ties; NaN when a side is constant."""
    ra = average_ranks(a)
    rb = average_ranks(b)
    da = ra - ra.mean()
    db = rb - rb.mean()
    na = float(np.sqrt((da * da).sum()))
    nb = float(np.sqrt((db * db).sum()))
    if na == 0.0 or nb == 0.0:
        return float("nan")
    # clamp fp residue so identical rank vectors give exactly +-1
    return float(np.clip((da * db).sum() / (na * nb), -1.0, 1.0))


def latent_property_correlation(embeddings, scores):
    """4x3 Spearman matrix: latent coordinates x (combined, hardness, friction).

    scores maps material_id -> PropertyScores.  Constant columns yield
    NaN entries (undefined rho is reported, not masked).
    """
    if len(embeddings) < 5:
        raise ValueError("need at least 5 materials for rank correlation")
    embs = sorted(embeddings, key=lambda e: e.material_id)
    zmat = np.stack([e.z for e in embs])
    cols = np.empty((len(embs), len(PROPERTY_NAMES)), dtype=FLOAT)
    for row, e in enumerate(embs):
        s = scores[e.material_id]
        cols[row] = (s.combined, s.hardness, s.friction)
    out = np.empty((4, len(PROPERTY_NAMES)), dtype=FLOAT)
    for i in range(4):
        for j in range(len(PROPERTY_NAMES)):
            out[i, j] = spearman(zmat[:, i], cols[:, j])
    return out


# ---- scatter emission ------------------------------------------------------

_SVG_SIZE = 480
_SVG_MARGIN = 50


def _score_of(scores, mid, property_name):
    s = scores[mid]
    if property_name not in PROPERTY_NAMES:
        raise ValueError(f"unknown property {property_name!r}")
    return float(getattr(s, property_name))


def _shade(score, lo, hi):
    """Fill gray level, darker for larger score."""
    if hi == lo:
        t = 0.5
    else:
        t = (score - lo) / (hi - lo)
    return int(round(230.0 - 180.0 * t))


def emit_scatter(embeddings, scores, axes, out_dir, property_name="combined"):
    """Write scatter_z{i}{j}_{property}.csv and .svg; returns both paths."""
    i, j = axes
    if not (0 <= i <= 3 and 0 <= j <= 3):
        raise ValueError(f"axes must be in 0..3, got {axes}")
    embs = sorted(embeddings, key=lambda e: e.material_id)
    vals = [_score_of(scores, e.material_id, property_name) for e in embs]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = f"scatter_z{i}{j}_{property_name}"

    lines = ["material_id,known,z_i,z_j,score"]
    for e, s in zip(embs, vals):
        lines.append(f"{e.material_id},{int(e.known)},"
                     f"{float(e.z[i])!r},{float(e.z[j])!r},{s!r}")
    csv_path = out / f"{stem}.csv"
    csv_path.write_text("\n".join(lines) + "\n")

    xs = np.array([e.z[i] for e in embs], dtype=FLOAT)
    ys = np.array([e.z[j] for e in embs], dtype=FLOAT)
    data_lo_x, data_hi_x = _span(xs)
    data_lo_y, data_hi_y = _span(ys)
    slo, shi = min(vals), max(vals)
    span = _SVG_SIZE - 2 * _SVG_MARGIN

    def px(v):
        return _SVG_MARGIN + span * (v - data_lo_x) / (data_hi_x - data_lo_x)

    def py(v):
        # SVG y grows downward; flip so larger z_j plots higher
        return _SVG_SIZE - _SVG_MARGIN - span * (v - data_lo_y) / (data_hi_y - data_lo_y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_SIZE}" '
        f'height="{_SVG_SIZE}" viewBox="0 0 {_SVG_SIZE} {_SVG_SIZE}">',
        f'<rect width="{_SVG_SIZE}" height="{_SVG_SIZE}" fill="white"/>',
        f'<line x1="{_SVG_MARGIN}" y1="{_SVG_SIZE - _SVG_MARGIN}" '
        f'x2="{_SVG_SIZE - _SVG_MARGIN}" y2="{_SVG_SIZE - _SVG_MARGIN}" stroke="black"/>',
        f'<line x1="{_SVG_MARGIN}" y1="{_SVG_MARGIN}" '
        f'x2="{_SVG_MARGIN}" y2="{_SVG_SIZE - _SVG_MARGIN}" stroke="black"/>',
        f'<text x="{_SVG_SIZE // 2}" y="{_SVG_SIZE - 12}" font-size="14" '
        f'text-anchor="middle">z{i}</text>',
        f'<text x="16" y="{_SVG_SIZE // 2}" font-size="14" text-anchor="middle" '
        f'transform="rotate(-90 16 {_SVG_SIZE // 2})">z{j}</text>',
    ]
    for e, s, x, y in zip(embs, vals, xs, ys):
        g = _shade(s, slo, shi)
        fill = f"rgb({g},{g},{g})"
        edge = "#c02020" if e.known else "#2040c0"
        parts.append(
            f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="6" '
            f'fill="{fill}" stroke="{edge}" stroke-width="1.5"/>')
        parts.append(
            f'<text x="{px(x) + 8:.2f}" y="{py(y) - 6:.2f}" '
            f'font-size="9">{e.material_id}</text>')
    parts.append("</svg>")
    svg_path = out / f"{stem}.svg"
    svg_path.write_text("\n".join(parts) + "\n")
    return csv_path, svg_path


def _span(v):
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi
