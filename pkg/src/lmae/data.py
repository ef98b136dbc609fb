"""Synthetic longitudinal fundus-like dataset, manifest IO, splits, windows.

The generator plants a decodable severity signal. Every image is a dark
circular disk; grade 1 adds small bright dots near the center, and each
further grade adds one bright blob (plus a dark companion) on a ring of
growing eccentricity, so the count of bright blobs beyond half the disk
radius determines the grade of a clean image exactly. Lesion layout is
fixed per patient and persists across visits.

Grade trajectories mix progression with treatment. Early grades (below 2)
accumulate Poisson increments driven by a wide log-uniform per-year hazard.
Reaching grade 2 starts a per-patient calendar clock: grade 3 arrives once
the time since entering grade 2 exceeds a progression delay drawn in years,
and grade 4 after a fixed multiple of that delay. Patients at grade 2 or
worse may be treated between visits, which drops them to grade 1, slows
the early hazard for good, and resets the clock. Visit order therefore
matters beyond the multiset of frames (a treated patient and a progressing
patient can share the same frames in different order with opposite
outlooks), and elapsed time matters beyond order: the delay clock runs in
years, not visits, so a patient seen every six months and one seen every
three years show the same flat grade-2 run at very different points of the
delay, with very different odds of being severe by the next visit. Visits
follow a per-patient screening cadence with small jitter, so the context
gaps reveal the likely distance to the next visit.

When noise is enabled, visits may be degraded the way screening photos are:
attenuated lesion contrast (underexposure) or bright reflection artifacts in
the periphery that mimic lesions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import rng as rng_mod

N_GRADES = 5


@dataclass
class VisitRecord:
    image: np.ndarray  # (H, W, C) float32 in [0, 1]
    t: float  # years since the patient's first visit epoch
    grade: int


@dataclass
class SequenceRecord:
    patient_id: str
    visits: list[VisitRecord]

    def grades(self) -> list[int]:
        return [v.grade for v in self.visits]

    def times(self) -> list[float]:
        return [v.t for v in self.visits]


@dataclass(frozen=True)
class SyntheticGenConfig:
    n_patients: int = 200
    image_size: int = 32
    seed: int = 0
    min_visits: int = 5
    max_visits: int = 8
    gap_range: tuple[float, float] = (0.5, 3.0)  # per-patient screening cadence (years)
    gap_jitter: tuple[float, float] = (0.9, 1.1)  # per-visit factor on the cadence
    hazard_range: tuple[float, float] = (0.2, 1.8)  # log-uniform, grades per year below grade 2
    treated_hazard: tuple[float, float] = (0.03, 0.10)  # log-uniform after treatment
    progression_delay: tuple[float, float] = (1.0, 2.4)  # years from grade 2 to grade 3
    severe_delay_mult: float = 1.8  # grade 4 arrives at this multiple of the delay
    init_grade_probs: tuple[float, ...] = (0.45, 0.35, 0.20, 0.0, 0.0)
    treat_prob_moderate: float = 0.12  # treatment between visits at grade 2
    treat_prob_severe: float = 0.50  # treatment between visits at grade 3+
    noise: bool = True
    noise_sigma: float = 0.02
    artifact_prob: float = 0.10
    attenuation_prob: float = 0.10

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError(f"need at least one patient, got {self.n_patients}")
        if self.image_size < 16:
            raise ValueError(f"image size must be at least 16, got {self.image_size}")
        if not 1 <= self.min_visits <= self.max_visits:
            raise ValueError(f"bad visit-count range [{self.min_visits}, {self.max_visits}]")
        if abs(sum(self.init_grade_probs) - 1.0) > 1e-9 or len(self.init_grade_probs) != N_GRADES:
            raise ValueError("init_grade_probs must be 5 probabilities summing to 1")
        for name in ("treat_prob_moderate", "treat_prob_severe"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not 0.0 < self.progression_delay[0] <= self.progression_delay[1]:
            raise ValueError(f"bad progression_delay range {self.progression_delay}")
        if self.severe_delay_mult < 1.0:
            raise ValueError(f"severe_delay_mult must be at least 1, got {self.severe_delay_mult}")


# -- image synthesis --------------------------------------------------------

_DISK_RADIUS_FRAC = 0.44  # of image side
_DOT_RADIUS_FRAC = 0.055  # central microaneurysm-like dots
_BLOB_RADIUS_FRAC = 0.085  # peripheral lesions and artifacts
_RING_ECC = (0.62, 0.74, 0.86)  # ring eccentricity (fraction of disk radius) per grade step 2..4
_GOLDEN_ANGLE = 2.399963229728653


@dataclass(frozen=True)
class _LesionLayout:
    """Per-patient lesion geometry, fixed across visits."""

    dot_angles: tuple[float, ...]
    dot_eccs: tuple[float, ...]
    base_angle: float
    ring_jitter: tuple[float, ...]
    angle_jitter: tuple[float, ...]


def _sample_layout(rng: np.random.Generator) -> _LesionLayout:
    dot_angles = tuple(rng.uniform(0.0, 2.0 * np.pi) + k * (2.0 * np.pi / 3.0) for k in range(3))
    dot_eccs = tuple(rng.uniform(0.10, 0.27) for _ in range(3))
    base_angle = rng.uniform(0.0, 2.0 * np.pi)
    ring_jitter = tuple(rng.uniform(-0.03, 0.03) for _ in range(3))
    angle_jitter = tuple(rng.uniform(-0.2, 0.2) for _ in range(3))
    return _LesionLayout(dot_angles, dot_eccs, base_angle, ring_jitter, angle_jitter)


def _bump(canvas: np.ndarray, cx: float, cy: float, radius: float, amplitude: float):
    """Add a Gaussian bump in place; sigma chosen so the bump crosses half
    amplitude near `radius`."""
    h, w = canvas.shape
    y = np.arange(h, dtype=np.float64)[:, None]
    x = np.arange(w, dtype=np.float64)[None, :]
    d2 = (y - cy) ** 2 + (x - cx) ** 2
    sigma = radius / 1.1774  # half-width at half maximum = radius
    canvas += amplitude * np.exp(-d2 / (2.0 * sigma * sigma))


def render_fundus(size: int, grade: int, layout: _LesionLayout,
                  lesion_gain: float = 1.0,
                  artifacts: tuple[tuple[float, float], ...] = ()) -> np.ndarray:
    """Clean synthetic fundus frame as (H, W, 1) float64 before quantization.

    artifacts: (angle, eccentricity fraction) pairs rendered like lesions.
    lesion_gain scales true-lesion contrast (1.0 = clean).
    """
    if not 0 <= grade < N_GRADES:
        raise ValueError(f"grade must be in 0..4, got {grade}")
    c = (size - 1) / 2.0
    radius = _DISK_RADIUS_FRAC * size
    y = np.arange(size, dtype=np.float64)[:, None]
    x = np.arange(size, dtype=np.float64)[None, :]
    dist = np.sqrt((y - c) ** 2 + (x - c) ** 2)
    img = np.full((size, size), 0.05, dtype=np.float64)
    inside = dist <= radius
    img[inside] = 0.30 + 0.10 * (1.0 - (dist[inside] / radius) ** 2)

    lesions = np.zeros_like(img)
    if grade >= 1:
        for angle, ecc in zip(layout.dot_angles, layout.dot_eccs):
            cx = c + ecc * radius * np.cos(angle)
            cy = c + ecc * radius * np.sin(angle)
            _bump(lesions, cx, cy, _DOT_RADIUS_FRAC * size, 0.75)
    for step in range(2, grade + 1):
        k = step - 2
        ecc = _RING_ECC[k] + layout.ring_jitter[k]
        angle = layout.base_angle + k * _GOLDEN_ANGLE + layout.angle_jitter[k]
        cx = c + ecc * radius * np.cos(angle)
        cy = c + ecc * radius * np.sin(angle)
        _bump(lesions, cx, cy, _BLOB_RADIUS_FRAC * size, 0.85)
        dark_angle = angle + np.pi / 3.0
        dx = c + (ecc - 0.06) * radius * np.cos(dark_angle)
        dy = c + (ecc - 0.06) * radius * np.sin(dark_angle)
        _bump(lesions, dx, dy, _BLOB_RADIUS_FRAC * size, -0.25)
    img += lesion_gain * lesions

    for angle, ecc in artifacts:
        cx = c + ecc * radius * np.cos(angle)
        cy = c + ecc * radius * np.sin(angle)
        _bump(img, cx, cy, _BLOB_RADIUS_FRAC * size, 0.85)

    return np.clip(img, 0.0, 1.0)[:, :, None]


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so in-memory data matches the files exactly."""
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def estimate_grade(image: np.ndarray) -> int:
    """Hand-written detector for clean images: count bright blobs beyond
    half the disk radius; fall back to central bright dots for grade 1."""
    gray = np.asarray(image, dtype=np.float64)[:, :, 0]
    size = gray.shape[0]
    c = (size - 1) / 2.0
    radius = _DISK_RADIUS_FRAC * size
    y = np.arange(size, dtype=np.float64)[:, None]
    x = np.arange(size, dtype=np.float64)[None, :]
    dist = np.sqrt((y - c) ** 2 + (x - c) ** 2)
    bright = gray > 0.62
    peripheral = bright & (dist > 0.5 * radius)
    _, n_blobs = ndimage.label(peripheral)
    if n_blobs > 0:
        return min(n_blobs + 1, N_GRADES - 1)
    central = bright & (dist <= 0.5 * radius)
    return 1 if central.any() else 0


# -- trajectories and generation --------------------------------------------


def _log_uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _sample_trajectory(rng: np.random.Generator, cfg: SyntheticGenConfig) -> tuple[list[float], list[int]]:
    """Visit times and grades for one patient.

    Below grade 2 the grade rises by Poisson(hazard * gap) increments with a
    log-uniform per-patient hazard, entering grade 2 on any crossing. From the
    moment grade 2 is entered a calendar clock runs: the grade becomes 3 once
    the elapsed time exceeds the patient's progression delay and 4 at
    severe_delay_mult times the delay, regardless of how many visits happen in
    between. At each visit a patient at grade 2 (or 3+) is treated with
    probability treat_prob_moderate (treat_prob_severe): the grade drops to 1,
    the early hazard is re-drawn from the slow treated range for good, and the
    delay clock is reset with a fresh draw. Visits follow a per-patient
    screening cadence with small jitter. Fixed draw order per transition: the
    treatment gate is drawn only when the grade is 2+, then either the new
    hazard and delay or the Poisson increment."""
    n_visits = int(rng.integers(cfg.min_visits, cfg.max_visits + 1))
    cadence = float(rng.uniform(*cfg.gap_range))
    times = [0.0]
    for _ in range(n_visits - 1):
        gap = cadence * float(rng.uniform(*cfg.gap_jitter))
        times.append(times[-1] + float(np.clip(gap, cfg.gap_range[0], cfg.gap_range[1])))
    hazard = _log_uniform(rng, *cfg.hazard_range)
    delay = float(rng.uniform(*cfg.progression_delay))
    grade = int(rng.choice(N_GRADES, p=cfg.init_grade_probs))
    entry = times[0] if grade >= 2 else None  # when the delay clock started
    stage = grade if grade >= 2 else 2  # grade at which the clock started
    grades = [grade]
    for k in range(1, n_visits):
        dt = times[k] - times[k - 1]
        threshold = cfg.treat_prob_severe if grade >= 3 else cfg.treat_prob_moderate
        if grade >= 2 and rng.random() < threshold:
            grade = 1
            entry = None
            hazard = _log_uniform(rng, *cfg.treated_hazard)
            delay = float(rng.uniform(*cfg.progression_delay))
        elif grade < 2:
            grade = min(N_GRADES - 1, grade + int(rng.poisson(hazard * dt)))
            if grade >= 2:
                grade = 2
                stage = 2
                entry = times[k]
        else:
            elapsed = times[k] - entry
            grade = min(N_GRADES - 1,
                        stage + (elapsed >= delay) + (elapsed >= cfg.severe_delay_mult * delay))
        grades.append(grade)
    return times, grades


def _degrade(rng: np.random.Generator, cfg: SyntheticGenConfig) -> tuple[float, tuple[tuple[float, float], ...]]:
    """Per-visit acquisition-quality draws (fixed order: attenuation gate,
    attenuation factor, artifact gate, artifact count, artifact geometry)."""
    gain = 1.0
    if rng.random() < cfg.attenuation_prob:
        gain = float(rng.uniform(0.2, 0.5))
    artifacts: list[tuple[float, float]] = []
    if rng.random() < cfg.artifact_prob:
        count = int(rng.integers(1, 3))
        for _ in range(count):
            artifacts.append((float(rng.uniform(0.0, 2.0 * np.pi)), float(rng.uniform(0.55, 0.92))))
    return gain, tuple(artifacts)


def generate_synthetic(cfg: SyntheticGenConfig) -> list[SequenceRecord]:
    """Deterministic synthetic dataset; patient i draws only from its own
    substream, so generation order is irrelevant."""
    records = []
    for i in range(cfg.n_patients):
        rng = rng_mod.substream(cfg.seed, rng_mod.DATA, "patient", i)
        times, grades = _sample_trajectory(rng, cfg)
        layout = _sample_layout(rng)
        visits = []
        for t, grade in zip(times, grades):
            if cfg.noise:
                gain, artifacts = _degrade(rng, cfg)
                img = render_fundus(cfg.image_size, grade, layout, lesion_gain=gain,
                                    artifacts=artifacts)
                img += rng.normal(0.0, cfg.noise_sigma, size=img.shape)
            else:
                img = render_fundus(cfg.image_size, grade, layout)
            visits.append(VisitRecord(image=quantize(img), t=t, grade=grade))
        records.append(SequenceRecord(patient_id=f"p{i:04d}", visits=visits))
    return records


# -- image and manifest IO ---------------------------------------------------


def write_pgm(path: str | Path, image: np.ndarray):
    """8-bit binary PGM; the header carries no timestamps or comments."""
    arr = np.asarray(image)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ValueError(f"PGM is grayscale; got {arr.shape[2]} channels")
        arr = arr[:, :, 0]
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_image(path: str | Path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB image as (H, W, C) float32 in [0, 1]."""
    with Image.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB" if im.mode in ("RGBA", "P") else "L")
        arr = np.asarray(im, dtype=np.float32) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def write_dataset(records: list[SequenceRecord], out_dir: str | Path) -> Path:
    """Write one PGM per visit plus a line-delimited manifest; returns the
    manifest path. Layout: images/<patient_id>/visit<k>.pgm."""
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    image_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for rec in records:
        patient_dir = image_dir / rec.patient_id
        patient_dir.mkdir(exist_ok=True)
        visits = []
        for k, visit in enumerate(rec.visits):
            rel = f"images/{rec.patient_id}/visit{k:02d}.pgm"
            write_pgm(out_dir / rel, visit.image)
            visits.append({"image": rel, "t_years": visit.t, "grade": visit.grade})
        lines.append(json.dumps({"patient_id": rec.patient_id, "visits": visits},
                                sort_keys=True, separators=(",", ":")))
    manifest = out_dir / "manifest.jsonl"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


class ManifestError(ValueError):
    pass


def load_manifest(path: str | Path) -> list[SequenceRecord]:
    """Parse a line-delimited manifest and load the referenced images.

    Visits are sorted by time; duplicate timestamps within a patient are
    rejected. Errors carry the offending line number or image path.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    base = path.parent
    records = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                patient_id = str(obj["patient_id"])
                raw_visits = obj["visits"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ManifestError(f"{path}:{lineno}: malformed record ({exc})") from exc
            visits = []
            for v in raw_visits:
                try:
                    rel, t, grade = v["image"], float(v["t_years"]), int(v["grade"])
                except (KeyError, TypeError, ValueError) as exc:
                    raise ManifestError(f"{path}:{lineno}: malformed visit ({exc})") from exc
                if not 0 <= grade < N_GRADES:
                    raise ManifestError(f"{path}:{lineno}: grade {grade} outside 0..4")
                img_path = base / rel
                if not img_path.exists():
                    raise ManifestError(f"{path}:{lineno}: missing image {img_path}")
                visits.append(VisitRecord(image=read_image(img_path), t=t, grade=grade))
            visits.sort(key=lambda v: v.t)
            times = [v.t for v in visits]
            if len(set(times)) != len(times):
                raise ManifestError(f"{path}:{lineno}: duplicate visit times for {patient_id!r}")
            records.append(SequenceRecord(patient_id=patient_id, visits=visits))
    return records


# -- splits and windows -------------------------------------------------------


def split_patients(records: list[SequenceRecord],
                   fractions: tuple[float, float, float] = (0.6, 0.2, 0.2),
                   seed: int = 0) -> tuple[list[SequenceRecord], list[SequenceRecord], list[SequenceRecord]]:
    """Patient-level train/val/test split: floor(fraction * n) patients for
    val and test, remainder to train. Stable under input reordering."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {fractions}")
    n = len(records)
    if n < 3:
        raise ValueError(f"need at least 3 patients to split, got {n}")
    ids = sorted(r.patient_id for r in records)
    if len(set(ids)) != n:
        raise ValueError("duplicate patient_id in dataset")
    order = rng_mod.substream(seed, rng_mod.SHUFFLE, "split").permutation(n)
    by_id = {r.patient_id: r for r in records}
    shuffled = [by_id[ids[k]] for k in order]
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test
    return (shuffled[:n_train],
            shuffled[n_train:n_train + n_val],
            shuffled[n_train + n_val:])


@dataclass
class Window:
    """T_ctx context visits plus the grade of the next visit within horizon."""

    frames: np.ndarray  # (T, H, W, C)
    times: np.ndarray  # (T,)
    grades: np.ndarray  # (T,) context grades (used by progression-aware masks)
    target_grade: int
    patient_id: str


def build_windows(record: SequenceRecord, t_ctx: int,
                  horizon_years: float = 3.0) -> list[Window]:
    """Every run of t_ctx consecutive visits whose immediate successor falls
    within horizon_years of the last context visit."""
    if t_ctx < 1:
        raise ValueError(f"t_ctx must be at least 1, got {t_ctx}")
    visits = record.visits
    out = []
    for i in range(t_ctx - 1, len(visits) - 1):
        nxt = visits[i + 1]
        if nxt.t - visits[i].t <= horizon_years:
            ctx = visits[i - t_ctx + 1:i + 1]
            out.append(Window(
                frames=np.stack([v.image for v in ctx]),
                times=np.array([v.t for v in ctx], dtype=np.float64),
                grades=np.array([v.grade for v in ctx], dtype=np.int64),
                target_grade=nxt.grade,
                patient_id=record.patient_id,
            ))
    return out


def dataset_windows(records: list[SequenceRecord], t_ctx: int,
                    horizon_years: float = 3.0) -> list[Window]:
    out = []
    for rec in records:
        out.extend(build_windows(rec, t_ctx, horizon_years))
    return out


@dataclass
class PretrainSequence:
    """T consecutive visits used as one pretraining example."""

    frames: np.ndarray
    times: np.ndarray
    grades: np.ndarray
    patient_id: str


def pretrain_sequences(records: list[SequenceRecord], t_frames: int) -> list[PretrainSequence]:
    """All runs of t_frames consecutive visits (no target needed)."""
    if t_frames < 1:
        raise ValueError(f"t_frames must be at least 1, got {t_frames}")
    out = []
    for rec in records:
        visits = rec.visits
        for i in range(len(visits) - t_frames + 1):
            run = visits[i:i + t_frames]
            out.append(PretrainSequence(
                frames=np.stack([v.image for v in run]),
                times=np.array([v.t for v in run], dtype=np.float64),
                grades=np.array([v.grade for v in run], dtype=np.int64),
                patient_id=rec.patient_id,
            ))
    return out
