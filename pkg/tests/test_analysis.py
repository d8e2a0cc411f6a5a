"""Property scores, latent embedding, Spearman analysis, scatter output."""

import re

import numpy as np
import pytest
from scipy import stats as sstats

from vtlearn import analysis, models, preprocess, stroke_sim
from vtlearn.analysis import LatentEmbedding, PropertyScores


def window_sinusoid(k, amp=0.5, steps=90, phase=0.0):
    """(3,4,4,steps) tensor whose stroking window holds k z-cycles."""
    start = int(np.floor(steps * 0.2))
    u = (np.arange(steps - start) + 0.5) / (steps - start)
    seq = np.zeros((3, 4, 4, steps))
    seq[2, :, :, start:] = amp * np.sin(2.0 * np.pi * k * u + phase)
    return seq


# ---- roughness score --------------------------------------------------------

def test_roughness_all_zero():
    assert analysis.roughness_score(np.zeros((3, 4, 4, 90))) == 0


def test_roughness_twelve_cycles():
    assert analysis.roughness_score(window_sinusoid(12, amp=0.5)) == 12


def test_roughness_subthreshold_amplitude():
    assert analysis.roughness_score(window_sinusoid(12, amp=0.01)) == 0
    assert analysis.roughness_score(window_sinusoid(12, amp=0.04)) == 0


@pytest.mark.parametrize("k", [2, 5, 12, 20, 30])
def test_roughness_exact_cycle_count(k):
    assert analysis.roughness_score(window_sinusoid(k)) == k


def test_roughness_noise_within_band():
    rng = np.random.default_rng(5)
    seq = window_sinusoid(7)
    seq[2] += rng.uniform(-0.03, 0.03, size=seq[2].shape)
    assert analysis.roughness_score(seq) == 7


def test_roughness_taxel_permutation_invariant():
    rng = np.random.default_rng(8)
    seq = window_sinusoid(9)
    seq[2] += rng.uniform(-0.02, 0.02, size=seq[2].shape)
    flat = seq.reshape(3, 16, 90)
    perm = rng.permutation(16)
    shuffled = flat[:, perm, :].reshape(3, 4, 4, 90)
    assert analysis.roughness_score(shuffled) == analysis.roughness_score(seq)


def test_roughness_rejects_bad_shape():
    with pytest.raises(ValueError):
        analysis.roughness_score(np.zeros((4, 4, 90)))


# ---- hardness / friction ----------------------------------------------------

def test_hardness_friction_all_zero():
    seq = np.zeros((3, 4, 4, 90))
    assert analysis.hardness_score(seq) == 0.0
    assert analysis.friction_score(seq) == 0.0


def test_hardness_negative_plateau():
    seq = np.zeros((3, 4, 4, 90))
    seq[2, 1, 2, 30:60] = -0.8
    assert analysis.hardness_score(seq) == 0.8


def test_friction_reads_y_axis():
    seq = np.zeros((3, 4, 4, 90))
    seq[1, 0, 0, 10] = -0.65
    seq[2, 0, 0, 10] = 0.9          # z must not leak into friction
    assert analysis.friction_score(seq) == 0.65


def test_extrema_taxel_permutation_invariant():
    rng = np.random.default_rng(9)
    seq = rng.normal(size=(3, 4, 4, 90))
    perm = rng.permutation(16)
    shuffled = seq.reshape(3, 16, 90)[:, perm, :].reshape(3, 4, 4, 90)
    assert analysis.hardness_score(shuffled) == analysis.hardness_score(seq)
    assert analysis.friction_score(shuffled) == analysis.friction_score(seq)


def test_friction_monotone_in_mu():
    # noiseless simulated pair differing only in friction
    cfg = stroke_sim.StrokeConfig(sensor_noise_sd=0.0)

    def score(mu):
        spec = stroke_sim.MaterialSpec("m00", 0.7, 10.0, 0.5, mu, "grid", 3)
        seq = stroke_sim.simulate_stroke(spec, cfg)
        t = preprocess.tactile_tensor(
            preprocess.downsample(preprocess.calibrate(seq)))
        return analysis.friction_score(t)

    assert score(0.8) > score(0.2)


def test_hardness_monotone_in_h():
    cfg = stroke_sim.StrokeConfig(sensor_noise_sd=0.0)

    def score(h):
        spec = stroke_sim.MaterialSpec("m00", h, 10.0, 0.5, 0.4, "grid", 3)
        seq = stroke_sim.simulate_stroke(spec, cfg)
        t = preprocess.tactile_tensor(
            preprocess.downsample(preprocess.calibrate(seq)))
        return analysis.hardness_score(t)

    assert score(0.9) > score(0.3)


def test_roughness_monotone_in_frequency():
    cfg = stroke_sim.StrokeConfig(sensor_noise_sd=0.0)

    def score(rf):
        spec = stroke_sim.MaterialSpec("m00", 0.8, rf, 0.8, 0.4, "grid", 3)
        seq = stroke_sim.simulate_stroke(spec, cfg)
        t = preprocess.tactile_tensor(
            preprocess.downsample(preprocess.calibrate(seq)))
        return analysis.roughness_score(t)

    assert score(5.0) < score(15.0) < score(25.0)


# ---- aggregation ------------------------------------------------------------

def test_property_scores_combined():
    seq = window_sinusoid(6, amp=0.5)
    s = analysis.property_scores(seq)
    assert s.roughness == 6
    assert s.combined == 6 * s.hardness
    assert s.friction == 0.0


def test_score_material_medians():
    seqs = [window_sinusoid(k, amp=a)
            for k, a in [(4, 0.3), (6, 0.5), (8, 0.9)]]
    per = [analysis.property_scores(s) for s in seqs]
    agg = analysis.score_material(seqs)
    assert agg.roughness == int(np.median([p.roughness for p in per]))
    assert agg.hardness == np.median([p.hardness for p in per])
    assert agg.friction == np.median([p.friction for p in per])
    # combined is recomputed from the aggregated medians
    assert agg.combined == agg.roughness * agg.hardness


def test_score_material_empty():
    with pytest.raises(ValueError):
        analysis.score_material([])


# ---- rank machinery ---------------------------------------------------------

def test_average_ranks_plain():
    assert np.array_equal(analysis.average_ranks([30.0, 10.0, 20.0]),
                          [3.0, 1.0, 2.0])


def test_average_ranks_ties():
    assert np.array_equal(analysis.average_ranks([5.0, 1.0, 5.0, 3.0]),
                          [3.5, 1.0, 3.5, 2.0])


def test_spearman_monotone_is_one():
    rng = np.random.default_rng(12)
    a = rng.normal(size=30)
    assert analysis.spearman(a, np.exp(a)) == 1.0
    assert analysis.spearman(a, -3.0 * a + 2.0) == -1.0


def test_spearman_monotone_rescale_invariant():
    rng = np.random.default_rng(13)
    a = rng.normal(size=25)
    b = rng.normal(size=25)
    assert analysis.spearman(np.exp(a), 2.0 * b + 1.0) == analysis.spearman(a, b)


def test_spearman_independent_random_small():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=25), rng.normal(size=25)
    assert abs(analysis.spearman(a, b)) < 0.5


def test_spearman_duplicated_pairs_unchanged():
    rng = np.random.default_rng(14)
    a, b = rng.normal(size=12), rng.normal(size=12)
    base = analysis.spearman(a, b)
    doubled = analysis.spearman(np.repeat(a, 2), np.repeat(b, 2))
    assert abs(doubled - base) <= 1e-12


def test_spearman_constant_side_nan():
    assert np.isnan(analysis.spearman(np.ones(10), np.arange(10.0)))


@pytest.mark.parametrize("seed", [21, 22, 23])
def test_spearman_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 6, size=40).astype(float)     # forces ties
    b = rng.normal(size=40) + a
    want = sstats.spearmanr(a, b).statistic
    assert abs(analysis.spearman(a, b) - want) <= 1e-12


# ---- correlation matrix -----------------------------------------------------

def make_embeddings_scores(n, seed=0):
    rng = np.random.default_rng(seed)
    embs, scores = [], {}
    for i in range(n):
        mid = f"m{i:02d}"
        embs.append(LatentEmbedding(z=rng.normal(size=4), material_id=mid,
                                    known=i < n // 2))
        r = int(rng.integers(1, 30))
        h = float(rng.uniform(0.1, 1.0))
        scores[mid] = PropertyScores(roughness=r, hardness=h,
                                     friction=float(rng.uniform(0.0, 1.0)),
                                     combined=r * h)
    return embs, scores


def test_latent_property_correlation_shape_and_values():
    embs, scores = make_embeddings_scores(10)
    # overwrite one latent coordinate with a monotone image of each property
    for e in embs:
        s = scores[e.material_id]
        e.z[0] = np.exp(s.combined * 0.1)
        e.z[1] = -s.hardness
        e.z[2] = s.friction ** 3
    mat = analysis.latent_property_correlation(embs, scores)
    assert mat.shape == (4, 3)
    assert mat[0, 0] == 1.0
    assert mat[1, 1] == -1.0
    assert mat[2, 2] == 1.0
    assert np.all(np.abs(mat[~np.isnan(mat)]) <= 1.0)


def test_latent_property_correlation_constant_nan():
    embs, scores = make_embeddings_scores(8)
    for e in embs:
        e.z[3] = 2.5
    mat = analysis.latent_property_correlation(embs, scores)
    assert np.all(np.isnan(mat[3]))
    assert not np.any(np.isnan(mat[:3]))


def test_latent_property_correlation_needs_five():
    embs, scores = make_embeddings_scores(4)
    with pytest.raises(ValueError):
        analysis.latent_property_correlation(embs, scores)


# ---- embedding --------------------------------------------------------------

@pytest.fixture(scope="module")
def recon_net():
    return models.build_visuotactile_net(seed=0)


def test_embed_materials_counts_and_flags(recon_net):
    rng = np.random.default_rng(3)
    groups = {f"m{i:02d}": rng.uniform(-1, 1, size=(2, 200, 200))
              for i in range(6)}
    known = {f"m{i:02d}" for i in range(4)}
    embs = analysis.embed_materials(recon_net, groups, known)
    assert [e.material_id for e in embs] == sorted(groups)
    assert [e.known for e in embs] == [True, True, True, True, False, False]
    for e in embs:
        assert e.z.shape == (4,)


def test_embed_materials_single_sample_is_latent(recon_net):
    rng = np.random.default_rng(4)
    img = rng.uniform(-1, 1, size=(200, 200))
    embs = analysis.embed_materials(recon_net, {"m00": img[None]}, {"m00"})
    want = models.infer_latent(recon_net, img[None, None])
    assert np.array_equal(embs[0].z, want[0])


def test_embed_materials_order_free(recon_net):
    rng = np.random.default_rng(6)
    stack = rng.uniform(-1, 1, size=(5, 200, 200))
    a = analysis.embed_materials(recon_net, {"m00": stack}, set())
    b = analysis.embed_materials(recon_net, {"m00": stack[::-1]}, set())
    assert np.allclose(a[0].z, b[0].z, rtol=1e-12, atol=1e-12)


def test_embed_materials_empty_group(recon_net):
    with pytest.raises(ValueError):
        analysis.embed_materials(
            recon_net, {"m00": np.zeros((0, 200, 200))}, set())


# ---- scatter emission -------------------------------------------------------

def test_emit_scatter_files(tmp_path):
    embs, scores = make_embeddings_scores(25)
    csv_path, svg_path = analysis.emit_scatter(embs, scores, (0, 1), tmp_path)
    assert csv_path.name == "scatter_z01_combined.csv"
    assert svg_path.name == "scatter_z01_combined.svg"
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "material_id,known,z_i,z_j,score"
    assert len(lines) == 26
    for line in lines[1:]:
        mid, known, zi, zj, score = line.split(",")
        assert known in ("0", "1")
        float(zi), float(zj), float(score)


def test_emit_scatter_deterministic(tmp_path):
    embs, scores = make_embeddings_scores(10)
    c1, s1 = analysis.emit_scatter(embs, scores, (2, 3), tmp_path / "a")
    c2, s2 = analysis.emit_scatter(embs, scores, (2, 3), tmp_path / "b")
    assert c1.read_bytes() == c2.read_bytes()
    assert s1.read_bytes() == s2.read_bytes()


def test_emit_scatter_shading_monotone(tmp_path):
    embs, scores = make_embeddings_scores(12, seed=5)
    _, svg_path = analysis.emit_scatter(embs, scores, (0, 1), tmp_path)
    fills = [int(m.group(1)) for m in
             re.finditer(r'fill="rgb\((\d+),', svg_path.read_text())]
    vals = [scores[e.material_id].combined
            for e in sorted(embs, key=lambda e: e.material_id)]
    assert len(fills) == len(vals)
    order = np.argsort(vals)
    shades = np.asarray(fills)[order]
    assert np.all(np.diff(shades) <= 0)        # darker for larger score


def test_emit_scatter_alternate_property(tmp_path):
    embs, scores = make_embeddings_scores(6)
    csv_path, _ = analysis.emit_scatter(embs, scores, (1, 2), tmp_path,
                                        property_name="friction")
    assert csv_path.name == "scatter_z12_friction.csv"
    for line, e in zip(csv_path.read_text().splitlines()[1:],
                       sorted(embs, key=lambda e: e.material_id)):
        assert float(line.split(",")[4]) == scores[e.material_id].friction


def test_emit_scatter_validates_arguments(tmp_path):
    embs, scores = make_embeddings_scores(6)
    with pytest.raises(ValueError):
        analysis.emit_scatter(embs, scores, (0, 4), tmp_path)
    with pytest.raises(ValueError):
        analysis.emit_scatter(embs, scores, (0, 1), tmp_path,
                              property_name="gloss")
