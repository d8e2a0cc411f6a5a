"""End-to-end experiment orchestration.

simulate -> preprocess -> train -> train-classifier -> embed -> analyze,
then a plain-text report.  Every stage reads and writes under
cfg.out_dir, so each can also run standalone from the CLI against the
artifacts of the previous ones.  run_pipeline chains them; a failing
stage aborts with its name while partial outputs stay on disk.

Layout under out_dir:
  config.txt                 effective configuration echo
  raw_known/  raw_unknown/   simulated datasets (manifest + images + csv)
  pre/                       train/val/test record containers + norm stats
  recon.vtl  recon_loss.csv  reconstruction net (best-val checkpoint)
  classifier.vtl  classifier_loss.csv  labels.csv
  embeddings.csv  classifier_embeddings.csv  scores.csv
  analysis/                  scatter csv/svg, correlations.csv
  report.txt                 all metrics plus sha256 of every artifact
"""

import hashlib
import io
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import analysis, checkpoint, models, preprocess, stroke_sim
from .config import format_config

RAW_KNOWN = "raw_known"
RAW_UNKNOWN = "raw_unknown"
PRE = "pre"
RECON_CKPT = "recon.vtl"
CLS_CKPT = "classifier.vtl"
EMB_CSV = "embeddings.csv"
CLS_EMB_CSV = "classifier_embeddings.csv"
SCORES_CSV = "scores.csv"
ANALYSIS_DIR = "analysis"
REPORT = "report.txt"

AXIS_PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _out(cfg):
    return Path(cfg.out_dir)


# ---- simulate ----------------------------------------------------------------

def known_unknown_materials(cfg):
    """One joint draw, first train_materials specs become the known set."""
    mats = stroke_sim.sample_materials(
        cfg.train_materials + cfg.unknown_materials, cfg.seed)
    return mats[:cfg.train_materials], mats[cfg.train_materials:]


def simulate_stage(cfg):
    known, unknown = known_unknown_materials(cfg)
    out = _out(cfg)
    paths = {"known": stroke_sim.generate_dataset(
        known, out / RAW_KNOWN, cfg.strokes_per_material, cfg.stroke_config())}
    if unknown:
        paths["unknown"] = stroke_sim.generate_dataset(
            unknown, out / RAW_UNKNOWN, cfg.strokes_per_material,
            cfg.stroke_config())
    return paths


# ---- preprocess ---------------------------------------------------------------

def preprocess_stage(cfg, manifest_path=None):
    """Build train/val/test containers from the known-material dataset."""
    out = _out(cfg)
    manifest = Path(manifest_path) if manifest_path else out / RAW_KNOWN / "manifest.txt"
    if not manifest.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest} (run simulate first)")
    return preprocess.run_preprocess(manifest, out / PRE, cfg.augment_per)


# ---- feeds --------------------------------------------------------------------

def cap_records(records, cap):
    """Keep at most cap records per material, spread evenly over each
    material's id-sorted records; cap=0 keeps everything."""
    records = list(records)
    if not cap:
        return records
    by_mid = {}
    for r in records:
        by_mid.setdefault(r.material_id, []).append(r)
    kept = []
    for mid in sorted(by_mid):
        group = by_mid[mid]
        if cap >= len(group):
            kept.extend(group)
            continue
        idx = np.unique(np.rint(np.linspace(0, len(group) - 1, cap)).astype(int))
        kept.extend(group[i] for i in idx)
    return kept


def recon_feeds(records):
    img = np.stack([r.edge_image for r in records])[:, None]
    tac = np.stack([r.tactile for r in records])
    return {"image": img, "target": tac}


def classifier_feeds(records, label_map):
    img = np.stack([r.edge_image for r in records])[:, None]
    tac = np.stack([r.tactile for r in records])
    labels = np.array([label_map[r.material_id] for r in records], dtype=np.int64)
    return {"image": img, "tactile": tac, "labels": labels}


def _load_splits(cfg, names=("train", "val")):
    out = _out(cfg)
    splits = []
    for name in names:
        path = out / PRE / f"{name}.vtl"
        if not path.is_file():
            raise FileNotFoundError(f"split not found: {path} (run preprocess first)")
        splits.append(preprocess.load_split(path))
    return splits


# ---- training -----------------------------------------------------------------

def train_stage(cfg):
    """Train the reconstruction net; checkpoint the best-validation state."""
    out = _out(cfg)
    train_recs, val_recs = _load_splits(cfg)
    data = recon_feeds(cap_records(train_recs, cfg.train_cap))
    val = recon_feeds(val_recs)
    net = models.build_visuotactile_net(seed=cfg.seed)
    tcfg = models.TrainConfig(loss="mse", alpha=cfg.alpha,
                              batch_size=cfg.batch_size, epochs=cfg.epochs,
                              seed=cfg.seed,
                              checkpoint_path=str(out / RECON_CKPT))
    history = models.train(net, data, tcfg, val_data=val)
    models.write_loss_csv(history, out / "recon_loss.csv")
    return {
        "history": history,
        "train_records_used": len(data["target"]),
        "final_train_mse": history[-1][1],
        "final_val_mse": history[-1][2],
        "best_val_mse": min(h[2] for h in history),
        "mean_predictor_val_mse": models.mean_predictor_mse(
            data["target"], val["target"]),
    }


def label_mapping(records):
    """material_id -> class index, stable under record order."""
    return {mid: i for i, mid in enumerate(sorted({r.material_id for r in records}))}


def classifier_stage(cfg):
    """Train the material classifier; report checkpointed-state accuracy."""
    out = _out(cfg)
    train_recs, val_recs = _load_splits(cfg)
    label_map = label_mapping(train_recs)
    data = classifier_feeds(cap_records(train_recs, cfg.train_cap), label_map)
    val = classifier_feeds(val_recs, label_map)
    net = models.build_classifier_net(seed=cfg.seed)
    tcfg = models.TrainConfig(loss="softmax-ce", alpha=cfg.alpha,
                              batch_size=cfg.batch_size,
                              epochs=cfg.classifier_epochs, seed=cfg.seed,
                              checkpoint_path=str(out / CLS_CKPT))
    history = models.train(net, data, tcfg, val_data=val)
    models.write_loss_csv(history, out / "classifier_loss.csv")
    lines = ["material_id,label"]
    lines += [f"{mid},{label_map[mid]}" for mid in sorted(label_map)]
    (out / "labels.csv").write_text("\n".join(lines) + "\n")
    # judge the checkpointed (best-validation) state, the one embed uses
    net.graph.load_state_dict(checkpoint.load_tensors(out / CLS_CKPT))
    return {
        "history": history,
        "train_records_used": len(data["labels"]),
        "final_train_loss": history[-1][1],
        "final_val_loss": history[-1][2],
        "train_accuracy": models.classifier_accuracy(net, data),
    }


# ---- embedding ----------------------------------------------------------------

def _manifest_entries(cfg):
    out = _out(cfg)
    entries = preprocess.load_manifest(out / RAW_KNOWN / "manifest.txt")
    unknown_manifest = out / RAW_UNKNOWN / "manifest.txt"
    if unknown_manifest.is_file():
        entries += preprocess.load_manifest(unknown_manifest)
    return entries


def _known_ids(cfg):
    mats = stroke_sim.read_materials_csv(_out(cfg) / RAW_KNOWN / "materials.csv")
    return [m.material_id for m in mats]


def _edge_groups(entries):
    """material_id -> (64, 200, 200) stack of stroke-0 edge crops."""
    groups = {}
    for e in entries:
        if e.stroke_id != 0:
            continue
        groups[e.material_id] = np.stack(preprocess.augment(
            preprocess.load_raw_image(e.image_path)))
    return groups


def _processed_tactile(path, stats):
    """Calibrated, downsampled, [-1, 1]-normalized (3, 4, 4, T) tensor.

    Network-input variant: matches what training fed the nets.
    """
    seq = preprocess.downsample(preprocess.calibrate(
        preprocess.load_tactile_csv(path)))
    return preprocess.tactile_tensor(preprocess.normalize_apply(seq, stats))


def _score_tactile(path, stats):
    """Calibrated, downsampled (3, 4, 4, T) tensor in full-scale units.

    Scoring variant: peak scores need magnitudes relative to a fixed
    full scale with rest at zero.  The affine [-1, 1] normalization the
    nets train on maps the rest phase to -1 and would saturate every
    peak-|value| score at 1 regardless of material.  Dividing by the
    train split's per-axis peak magnitude keeps rest at zero and makes
    max|z| / max|y| track the material's force plateau; the clamp pins
    hardness and friction into [0, 1] even for out-of-range unknowns.
    """
    seq = preprocess.downsample(preprocess.calibrate(
        preprocess.load_tactile_csv(path)))
    scale = np.maximum(np.abs(stats.vmin), np.abs(stats.vmax))
    return preprocess.tactile_tensor(np.clip(seq / scale, -1.0, 1.0))


def _load_net(cfg, kind):
    out = _out(cfg)
    if kind == "reconstruction":
        net, path = models.build_visuotactile_net(seed=cfg.seed), out / RECON_CKPT
    else:
        net, path = models.build_classifier_net(seed=cfg.seed), out / CLS_CKPT
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path} (train first)")
    net.graph.load_state_dict(checkpoint.load_tensors(path))
    return net


def write_embeddings_csv(embeddings, path):
    lines = ["material_id,known,z0,z1,z2,z3"]
    for e in embeddings:
        zs = ",".join(repr(float(v)) for v in e.z)
        lines.append(f"{e.material_id},{int(e.known)},{zs}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_embeddings_csv(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "material_id,known,z0,z1,z2,z3":
        raise ValueError(f"{path}: not an embeddings csv")
    embs = []
    for line in lines[1:]:
        parts = line.split(",")
        embs.append(analysis.LatentEmbedding(
            z=np.array([float(v) for v in parts[2:]]),
            material_id=parts[0], known=bool(int(parts[1]))))
    return embs


def embed_stage(cfg):
    """Mean latent per material (all of them) under both trained nets."""
    out = _out(cfg)
    entries = _manifest_entries(cfg)
    known_ids = _known_ids(cfg)
    norm_path = out / PRE / "norm.vtl"
    if not norm_path.is_file():
        raise FileNotFoundError(f"norm stats not found: {norm_path} (run preprocess first)")
    stats = preprocess.load_norm_stats(norm_path)
    recon_net = _load_net(cfg, "reconstruction")
    cls_net = _load_net(cfg, "classifier")

    groups = _edge_groups(entries)
    recon = analysis.embed_materials(recon_net, groups, known_ids)
    write_embeddings_csv(recon, out / EMB_CSV)

    # classifier latents need the paired tactile; reuse each material's
    # stroke-0 recording against all 64 crops
    known = set(known_ids)
    cls = []
    for e in sorted(entries, key=lambda e: e.material_id):
        if e.stroke_id != 0:
            continue
        stack = groups[e.material_id][:, None]
        tac = _processed_tactile(e.tactile_path, stats)
        tacs = np.repeat(tac[None], len(stack), axis=0)
        z = models.classifier_latent(cls_net, stack, tacs).mean(axis=0)
        cls.append(analysis.LatentEmbedding(
            z=z, material_id=e.material_id, known=e.material_id in known))
    write_embeddings_csv(cls, out / CLS_EMB_CSV)
    return {"reconstruction": recon, "classifier": cls}


# ---- analysis -----------------------------------------------------------------

def measured_scores(cfg):
    """PropertyScores per material from its processed tactile recordings."""
    out = _out(cfg)
    stats = preprocess.load_norm_stats(out / PRE / "norm.vtl")
    by_mid = {}
    for e in _manifest_entries(cfg):
        by_mid.setdefault(e.material_id, []).append(e)
    scores = {}
    for mid, group in sorted(by_mid.items()):
        seqs = [_score_tactile(e.tactile_path, stats)
                for e in sorted(group, key=lambda e: e.stroke_id)]
        scores[mid] = analysis.score_material(seqs)
    return scores


def write_scores_csv(scores, path):
    lines = ["material_id,roughness,hardness,friction,combined"]
    for mid in sorted(scores):
        s = scores[mid]
        lines.append(f"{mid},{s.roughness},{s.hardness!r},"
                     f"{s.friction!r},{s.combined!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def analyze_stage(cfg):
    """Correlation matrices for both nets plus scatter emission."""
    out = _out(cfg)
    for name in (EMB_CSV, CLS_EMB_CSV):
        if not (out / name).is_file():
            raise FileNotFoundError(f"embeddings not found: {out / name} (run embed first)")
    scores = measured_scores(cfg)
    write_scores_csv(scores, out / SCORES_CSV)
    recon = load_embeddings_csv(out / EMB_CSV)
    cls = load_embeddings_csv(out / CLS_EMB_CSV)
    corr_recon = analysis.latent_property_correlation(recon, scores)
    corr_cls = analysis.latent_property_correlation(cls, scores)

    adir = out / ANALYSIS_DIR
    for axes in AXIS_PAIRS:
        for prop in analysis.PROPERTY_NAMES:
            analysis.emit_scatter(recon, scores, axes, adir, prop)
    lines = ["net,latent,property,rho"]
    for name, mat in (("reconstruction", corr_recon), ("classifier", corr_cls)):
        for i in range(4):
            for j, prop in enumerate(analysis.PROPERTY_NAMES):
                lines.append(f"{name},z{i},{prop},{float(mat[i, j])!r}")
    (adir / "correlations.csv").write_text("\n".join(lines) + "\n")
    return {"scores": scores, "corr_reconstruction": corr_recon,
            "corr_classifier": corr_cls}


# ---- report -------------------------------------------------------------------

def _sha256(path):
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_report(cfg, results, path=None):
    out = _out(cfg)
    path = Path(path) if path else out / REPORT
    tr, cl, an = results["train"], results["train-classifier"], results["analyze"]
    counts = results["preprocess"]

    lines = ["# pipeline report"]
    lines += format_config(cfg).splitlines()
    lines += [
        f"known_materials = {cfg.train_materials}",
        f"unknown_materials_held_out = {cfg.unknown_materials}",
        f"count_train_records = {counts['train']}",
        f"count_val_records = {counts['val']}",
        f"count_test_records = {counts['test']}",
        f"recon_train_records_used = {tr['train_records_used']}",
        f"classifier_train_records_used = {cl['train_records_used']}",
        f"recon_final_train_mse = {tr['final_train_mse']!r}",
        f"recon_final_val_mse = {tr['final_val_mse']!r}",
        f"recon_best_val_mse = {tr['best_val_mse']!r}",
        f"recon_val_mean_predictor_mse = {tr['mean_predictor_val_mse']!r}",
        f"classifier_final_train_loss = {cl['final_train_loss']!r}",
        f"classifier_final_val_loss = {cl['final_val_loss']!r}",
        f"classifier_train_accuracy = {cl['train_accuracy']!r}",
    ]
    for name, key in (("recon", "corr_reconstruction"),
                      ("classifier", "corr_classifier")):
        mat = an[key]
        for i in range(4):
            for j, prop in enumerate(analysis.PROPERTY_NAMES):
                lines.append(f"corr_{name}_z{i}_{prop} = {float(mat[i, j])!r}")
        lines.append(f"max_abs_rho_{name} = {float(np.nanmax(np.abs(mat)))!r}")
    files = sorted(p for p in out.rglob("*")
                   if p.is_file() and p.relative_to(out) != Path(REPORT))
    for p in files:
        lines.append(f"artifact.{p.relative_to(out).as_posix()} = {_sha256(p)}")
    path.write_text("\n".join(lines) + "\n")
    return path


# ---- foreign dataset import -----------------------------------------------

_IMG_EXTS = (".png", ".jpg", ".jpeg", ".bmp")


def import_paper_dataset(src_dir, out_dir):
    """Map a published dataset tree onto the manifest convention.

    The published archive's layout is not standardized, so this adapter
    defines one (documented in the README):

      src/<material>/     one directory per material; sorted directory
                          names become ids m00, m01, ...
        <photo>           exactly one Pillow-readable image
        *.csv             one recording per stroke; lexicographic order
                          gives stroke ids 0, 1, ...

    Recordings either already use `step,taxel,fx,fy,fz` rows (copied as
    is) or are wide per-step tables of 48 columns in taxel-major axis
    order (fx,fy,fz per taxel); a 49th leading column is treated as a
    step index and dropped.  A header line is skipped if present.
    Writes source_materials.csv recording the id mapping; returns the
    manifest path.
    """
    src, out = Path(src_dir), Path(out_dir)
    mat_dirs = sorted(d for d in src.iterdir() if d.is_dir()) if src.is_dir() else []
    if not mat_dirs:
        raise ValueError(f"no material directories under {src}")
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "tactile").mkdir(parents=True, exist_ok=True)
    lines = []
    names = ["material_id,source_name"]
    for idx, d in enumerate(mat_dirs):
        mid = f"m{idx:02d}"
        names.append(f"{mid},{d.name}")
        images = sorted(p for p in d.iterdir() if p.suffix.lower() in _IMG_EXTS)
        csvs = sorted(p for p in d.iterdir() if p.suffix.lower() == ".csv")
        if len(images) != 1 or not csvs:
            raise ValueError(f"{d}: need exactly one image and >= 1 csv, "
                             f"found {len(images)} image(s), {len(csvs)} csv(s)")
        img_rel = f"images/{mid}.png"
        with Image.open(images[0]) as im:
            im.convert("RGB").save(out / img_rel)
        for sid, csv in enumerate(csvs):
            tac_rel = f"tactile/{mid}_s{sid:02d}.csv"
            _import_recording(csv, out / tac_rel)
            lines.append(f"{mid},{sid},{img_rel},{tac_rel}")
    (out / "source_materials.csv").write_text("\n".join(names) + "\n")
    manifest = out / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def _import_recording(src_csv, dst_csv):
    text = Path(src_csv).read_text()
    stripped = text.strip()
    first = stripped.splitlines()[0].strip() if stripped else ""
    if first == "step,taxel,fx,fy,fz":
        Path(dst_csv).write_text(text)
        return
    has_header = any(c.isalpha() for c in first)
    try:
        rows = np.loadtxt(io.StringIO(text), delimiter=",",
                          skiprows=1 if has_header else 0, ndmin=2)
    except ValueError as e:
        raise ValueError(f"{src_csv}: cannot parse as numeric csv: {e}") from None
    if rows.shape[1] == 49:
        rows = rows[:, 1:]
    if rows.shape[1] != 48:
        raise ValueError(f"{src_csv}: expected 48 force columns "
                         f"(or 49 with a step index), got {rows.shape[1]}")
    seq = rows.reshape(len(rows), 16, 3)
    out = ["step,taxel,fx,fy,fz"]
    for t in range(len(seq)):
        for k in range(16):
            vals = ",".join(_fmt(v) for v in seq[t, k])
            out.append(f"{t},{k},{vals}")
    Path(dst_csv).write_text("\n".join(out) + "\n")


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


STAGES = (("simulate", simulate_stage),
          ("preprocess", preprocess_stage),
          ("train", train_stage),
          ("train-classifier", classifier_stage),
          ("embed", embed_stage),
          ("analyze", analyze_stage))


def run_pipeline(cfg, log=None):
    """Run every stage in order; returns the report path."""
    say = log if log is not None else (lambda msg: None)
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(cfg))
    results = {}
    for name, fn in STAGES:
        t0 = time.perf_counter()
        say(f"[{name}] running")
        try:
            results[name] = fn(cfg)
        except Exception as e:
            raise StageError(name, e) from e
        say(f"[{name}] done in {time.perf_counter() - t0:.1f}s")
    try:
        report = write_report(cfg, results)
    except Exception as e:
        raise StageError("report", e) from e
    say(f"[report] {report}")
    return report
