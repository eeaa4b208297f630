"""Participant records, labeling, scaling, splitting, and cohort synthesis.

The synthetic cohort exists so the whole pipeline can run end to end without
clinical data: blood pressure values are drawn per sex from bounded normal
profiles, and each participant's vowel recording carries the pressure in its
acoustics (f0 tracks systolic, first formant tracks diastolic).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .audio_io import synthesize_speech, write_wav
from .features import FeatureVector

SBP_RANGE = (60.0, 260.0)
DBP_RANGE = (30.0, 160.0)
AGE_RANGE = (20, 70)

SBP_THRESHOLD = 115.0
DBP_THRESHOLD = 72.0

# Per-sex (min, max, mean, std) for systolic and diastolic pressure.
DEFAULT_PROFILE = {
    "F": {"sbp": (91.0, 153.0, 114.28, 15.74),
          "dbp": (35.0, 98.0, 77.42, 13.30)},
    "M": {"sbp": (86.0, 153.0, 119.7, 13.73),
          "dbp": (48.0, 91.0, 79.88, 17.01)},
}

# planted acoustic couplings: fraction of the cohort BP range maps linearly
# onto these bands
F0_BAND_HZ = (90.0, 240.0)
F1_BAND_HZ = (500.0, 900.0)
SECOND_FORMANT = (1200.0, 0.6)

# latent coupling before clipping; the bound-and-gap adjustments below pull
# the realized cohort correlation down to roughly 0.83
SBP_DBP_CORRELATION = 0.88
MIN_PRESSURE_GAP = 10.0

VOWEL_SECONDS = 1.5
SILENCE_SECONDS = 0.8
SILENCE_NOISE = 5e-4
COHORT_SAMPLE_RATE = 48000

MANIFEST_COLUMNS = ("id", "sex", "age", "sbp_initial", "sbp_final",
                    "dbp_initial", "dbp_final", "heart_rate", "wav_path")


class OutOfPhysiologicRange(ValueError):
    pass


class MissingFeatures(KeyError):
    pass


class DuplicateId(ValueError):
    pass


class TooFewExamples(ValueError):
    pass


class InvalidProfile(ValueError):
    pass


class ConstantColumn(ValueError):
    pass


class DegenerateFeature(ValueError):
    pass


def _check_bp(value: float, lo: float, hi: float, what: str) -> None:
    if not lo <= value <= hi:
        raise OutOfPhysiologicRange(f"{what} {value} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class ParticipantRecord:
    id: str
    sex: str
    age: int
    sbp_initial: float
    sbp_final: float
    dbp_initial: float
    dbp_final: float
    heart_rate: float | None = None
    wav_paths: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.sex not in ("F", "M"):
            raise ValueError(f"sex must be F or M, got {self.sex!r}")
        if not AGE_RANGE[0] <= self.age <= AGE_RANGE[1]:
            raise ValueError(f"age {self.age} outside {AGE_RANGE}")
        for v, what in ((self.sbp_initial, "initial SBP"),
                        (self.sbp_final, "final SBP")):
            _check_bp(v, *SBP_RANGE, what)
        for v, what in ((self.dbp_initial, "initial DBP"),
                        (self.dbp_final, "final DBP")):
            _check_bp(v, *DBP_RANGE, what)
        if self.dbp_initial >= self.sbp_initial:
            raise OutOfPhysiologicRange("initial DBP must stay below SBP")
        if self.dbp_final >= self.sbp_final:
            raise OutOfPhysiologicRange("final DBP must stay below SBP")


@dataclass(frozen=True)
class LabeledExample:
    participant_id: str
    features: FeatureVector
    sbp_target: float
    dbp_target: float
    hypertension: int


def label_hypertension(sbp: float, dbp: float) -> int:
    """1 when either pressure exceeds its threshold, boundary included as 0."""
    _check_bp(sbp, *SBP_RANGE, "SBP")
    _check_bp(dbp, *DBP_RANGE, "DBP")
    return int(sbp > SBP_THRESHOLD or dbp > DBP_THRESHOLD)


def mean_of_measurements(record: ParticipantRecord):
    return ((record.sbp_initial + record.sbp_final) / 2.0,
            (record.dbp_initial + record.dbp_final) / 2.0)


def build_examples(records: Sequence[ParticipantRecord],
                   feature_vectors: dict,
                   target_rule: Callable = mean_of_measurements):
    """Pair each participant with their feature vector and BP targets."""
    examples = []
    seen = set()
    for record in records:
        if record.id in seen:
            raise DuplicateId(record.id)
        seen.add(record.id)
        if record.id not in feature_vectors:
            raise MissingFeatures(record.id)
        sbp, dbp = target_rule(record)
        examples.append(LabeledExample(
            participant_id=record.id,
            features=feature_vectors[record.id],
            sbp_target=float(sbp),
            dbp_target=float(dbp),
            hypertension=label_hypertension(sbp, dbp),
        ))
    return examples


def id_and_target_vectors(examples: Sequence[LabeledExample]):
    """The id list and the (sbp, dbp, class) triples, index-aligned."""
    ids = [e.participant_id for e in examples]
    targets = [(e.sbp_target, e.dbp_target, e.hypertension) for e in examples]
    return ids, targets


# --- scaling ---

@dataclass(frozen=True)
class Scaler:
    kind: str
    center: np.ndarray  # per-feature min (minmax) or mean (standard)
    scale: np.ndarray   # per-feature range or std; 0 flags a constant column


def fit_scaler(train_features, kind: str, on_constant: str = "reject") -> Scaler:
    X = np.asarray(train_features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need a 2-d matrix with at least 2 training rows")
    if kind == "minmax":
        center = X.min(axis=0)
        scale = X.max(axis=0) - center
    elif kind == "standard":
        center = X.mean(axis=0)
        scale = X.std(axis=0)
        if on_constant == "reject" and np.any(scale == 0.0):
            flat = [int(i) for i in np.flatnonzero(scale == 0.0)]
            raise DegenerateFeature(f"constant feature columns {flat}")
    else:
        raise ValueError(f"unknown scaler kind {kind!r}")
    return Scaler(kind=kind, center=center, scale=scale)


def apply_scaler(scaler: Scaler, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    safe = np.where(scaler.scale == 0.0, 1.0, scaler.scale)
    out = (X - scaler.center) / safe
    if scaler.kind == "minmax":
        # a constant training column gives no ordering information; park it
        # mid-range
        out[:, scaler.scale == 0.0] = 0.5
    else:
        out[:, scaler.scale == 0.0] = 0.0
    return out


def invert_scaler(scaler: Scaler, scaled) -> np.ndarray:
    X = np.atleast_2d(np.asarray(scaled, dtype=np.float64))
    out = X * scaler.scale + scaler.center
    out[:, scaler.scale == 0.0] = scaler.center[scaler.scale == 0.0]
    return out


def scaler_to_dict(scaler: Scaler) -> dict:
    return {"kind": scaler.kind,
            "center": [float(v) for v in scaler.center],
            "scale": [float(v) for v in scaler.scale]}


def scaler_from_dict(payload: dict) -> Scaler:
    return Scaler(kind=payload["kind"],
                  center=np.array(payload["center"], dtype=np.float64),
                  scale=np.array(payload["scale"], dtype=np.float64))


# --- splitting ---

def split(examples: Sequence[LabeledExample], test_fraction: float,
          seed: int):
    """Seeded, class-stratified partition into (train, test).

    Each class contributes floor or ceil of its proportional test share;
    leftover seats go to the classes with the largest fractional parts so
    the overall test size lands on round(n * test_fraction).
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie strictly between 0 and 1")
    by_class: dict = {}
    for i, ex in enumerate(examples):
        by_class.setdefault(ex.hypertension, []).append(i)
    for label, members in sorted(by_class.items()):
        if len(members) < 2:
            raise TooFewExamples(
                f"class {label} has {len(members)} example(s); need >= 2")

    total_test = int(round(len(examples) * test_fraction))
    shares = {label: len(m) * test_fraction for label, m in by_class.items()}
    counts = {label: int(np.floor(s)) for label, s in shares.items()}
    leftovers = total_test - sum(counts.values())
    by_fraction = sorted(by_class, key=lambda c: (counts[c] - shares[c], c))
    for label in by_fraction:
        if leftovers <= 0:
            break
        if counts[label] + 1 < len(by_class[label]):
            counts[label] += 1
            leftovers -= 1

    test_idx: list = []
    for label in sorted(by_class):
        members = np.array(by_class[label])
        rng = np.random.default_rng((seed, int(label)))
        chosen = members[rng.permutation(len(members))[:counts[label]]]
        test_idx.extend(int(i) for i in chosen)

    test_set = set(test_idx)
    train = [examples[i] for i in range(len(examples)) if i not in test_set]
    test = [examples[i] for i in range(len(examples)) if i in test_set]
    return train, test


# --- synthetic cohort ---

def _check_profile(profile: dict) -> None:
    for sex in ("F", "M"):
        if sex not in profile:
            raise InvalidProfile(f"profile missing sex {sex!r}")
        for key in ("sbp", "dbp"):
            if key not in profile[sex]:
                raise InvalidProfile(f"profile[{sex!r}] missing {key!r}")
            lo, hi, mean, std = profile[sex][key]
            if not (lo < hi and lo <= mean <= hi and std > 0):
                raise InvalidProfile(
                    f"profile[{sex!r}][{key!r}] = {(lo, hi, mean, std)}")


def _bounded_pair(rng, sbp_stats, dbp_stats):
    """Correlated (sbp, dbp) base values, clipped into the profile bounds."""
    s_lo, s_hi, s_mean, s_std = sbp_stats
    d_lo, d_hi, d_mean, d_std = dbp_stats
    z1 = rng.standard_normal()
    z2 = rng.standard_normal()
    rho = SBP_DBP_CORRELATION
    sbp = float(np.clip(s_mean + s_std * z1, s_lo, s_hi))
    dbp_z = rho * z1 + np.sqrt(1.0 - rho * rho) * z2
    dbp = float(np.clip(d_mean + d_std * dbp_z, d_lo, d_hi))
    dbp = float(np.clip(min(dbp, sbp - MIN_PRESSURE_GAP), d_lo, d_hi))
    return sbp, dbp


def _band_position(value, lo, hi):
    return float(np.clip((value - lo) / (hi - lo), 0.0, 1.0))


def planted_voice(profile: dict, sbp_target: float, dbp_target: float):
    """(f0, formants) carrying the BP targets; shared by synthesis and tests."""
    sbp_lo = min(profile[s]["sbp"][0] for s in ("F", "M"))
    sbp_hi = max(profile[s]["sbp"][1] for s in ("F", "M"))
    dbp_lo = min(profile[s]["dbp"][0] for s in ("F", "M"))
    dbp_hi = max(profile[s]["dbp"][1] for s in ("F", "M"))
    f0 = F0_BAND_HZ[0] + _band_position(sbp_target, sbp_lo, sbp_hi) * (
        F0_BAND_HZ[1] - F0_BAND_HZ[0])
    f1 = F1_BAND_HZ[0] + _band_position(dbp_target, dbp_lo, dbp_hi) * (
        F1_BAND_HZ[1] - F1_BAND_HZ[0])
    return f0, [(f1, 1.0), SECOND_FORMANT]


def synthesize_cohort(stats_profile: dict | None = None, n_female: int = 45,
                      n_male: int = 50, seed: int = 0,
                      wav_dir: str | Path | None = None):
    """Deterministic synthetic participant list, optionally with WAV files.

    All random draws happen in a fixed order that does not depend on
    wav_dir, so the records are identical whether or not audio is written.
    """
    profile = DEFAULT_PROFILE if stats_profile is None else stats_profile
    _check_profile(profile)
    if n_female < 0 or n_male < 0:
        raise ValueError("cohort sizes must be non-negative")

    rng = np.random.default_rng(seed)
    drawn = []
    ordinal = 0
    for sex, count in (("F", n_female), ("M", n_male)):
        for j in range(count):
            sbp, dbp = _bounded_pair(rng, profile[sex]["sbp"],
                                     profile[sex]["dbp"])
            jitter_s = float(np.clip(rng.normal(0.0, 2.0), -4.0, 4.0))
            jitter_d = float(np.clip(rng.normal(0.0, 2.0), -4.0, 4.0))
            age = int(rng.integers(AGE_RANGE[0], AGE_RANGE[1] + 1))
            heart_rate = round(float(np.clip(rng.normal(74.0, 9.0),
                                             45.0, 120.0)), 1)
            drawn.append((sex, j, sbp, dbp, jitter_s, jitter_d, age,
                          heart_rate, ordinal))
            ordinal += 1

    records = []
    for sex, j, sbp, dbp, jitter_s, jitter_d, age, heart_rate, idx in drawn:
        pid = f"{sex}{j + 1:03d}"
        wav_paths: tuple = ()
        if wav_dir is not None:
            wav_paths = (str(Path(wav_dir) / f"{pid}.wav"),)
            _write_cohort_wav(Path(wav_paths[0]), profile, sbp, dbp,
                              seed * 1_000_003 + idx)
        records.append(ParticipantRecord(
            id=pid, sex=sex, age=age,
            sbp_initial=sbp + jitter_s, sbp_final=sbp - jitter_s,
            dbp_initial=dbp + jitter_d, dbp_final=dbp - jitter_d,
            heart_rate=heart_rate, wav_paths=wav_paths,
        ))
    return records


def _write_cohort_wav(path: Path, profile: dict, sbp: float, dbp: float,
                      wav_seed: int) -> None:
    f0, formants = planted_voice(profile, sbp, dbp)
    vowel = synthesize_speech(f0, formants, VOWEL_SECONDS,
                              COHORT_SAMPLE_RATE, seed=wav_seed)
    noise_rng = np.random.default_rng((wav_seed, 1))
    pad_len = int(round(SILENCE_SECONDS * COHORT_SAMPLE_RATE))
    lead = noise_rng.normal(0.0, SILENCE_NOISE, pad_len)
    tail = noise_rng.normal(0.0, SILENCE_NOISE, pad_len)
    samples = np.concatenate([lead, vowel.samples, tail])
    path.parent.mkdir(parents=True, exist_ok=True)
    write_wav(path, samples, COHORT_SAMPLE_RATE, channels=1)


# --- manifest I/O ---

def _float_text(v) -> str:
    return f"{float(v):.17g}"


def write_manifest(path, records: Sequence[ParticipantRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        for r in records:
            writer.writerow([
                r.id, r.sex, r.age,
                _float_text(r.sbp_initial), _float_text(r.sbp_final),
                _float_text(r.dbp_initial), _float_text(r.dbp_final),
                "" if r.heart_rate is None else _float_text(r.heart_rate),
                ";".join(r.wav_paths),
            ])


def read_manifest(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != MANIFEST_COLUMNS:
            raise ValueError(f"unexpected manifest header {header}")
        records = []
        for row in reader:
            (pid, sex, age, sbp_i, sbp_f, dbp_i, dbp_f, hr, wavs) = row
            records.append(ParticipantRecord(
                id=pid, sex=sex, age=int(age),
                sbp_initial=float(sbp_i), sbp_final=float(sbp_f),
                dbp_initial=float(dbp_i), dbp_final=float(dbp_f),
                heart_rate=None if hr == "" else float(hr),
                wav_paths=tuple(p for p in wavs.split(";") if p),
            ))
    return records


# --- correlations ---

def correlation_matrix(columns: dict):
    """Pearson correlations between named columns.

    Returns (names, matrix); the matrix is exactly symmetric with a unit
    diagonal.
    """
    names = list(columns)
    if not names:
        raise ValueError("no columns given")
    X = np.column_stack([np.asarray(columns[n], dtype=np.float64)
                         for n in names])
    if X.shape[0] < 3:
        raise ValueError("need at least 3 rows")
    stds = X.std(axis=0)
    flat = np.flatnonzero(stds == 0.0)
    if flat.size:
        raise ConstantColumn(", ".join(names[i] for i in flat))
    Z = (X - X.mean(axis=0)) / stds
    r = (Z.T @ Z) / X.shape[0]
    r = (r + r.T) / 2.0
    np.clip(r, -1.0, 1.0, out=r)
    np.fill_diagonal(r, 1.0)
    return names, r
