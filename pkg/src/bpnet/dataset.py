"""Episode ingestion, validation, normalization, fold splitting, synthesis.

The canonical on-disk form is the EPBN container (see ``store_episodes``):
little-endian throughout, 32-bit samples, with an optional trailing
normalization block so a trained model's denormalization is reproducible.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError, UsageError

__all__ = [
    "Episode",
    "ValidationRanges",
    "NormalizationSpec",
    "EpisodeSet",
    "load_episodes",
    "store_episodes",
    "validate_episode",
    "filter_valid",
    "fit_normalization",
    "normalize_episode",
    "denormalize",
    "split_folds",
    "synth_generate",
]

EPBN_MAGIC = b"EPBN"
EPBN_VERSION = 1
NORM_MAGIC = b"NRM1"


@dataclass
class Episode:
    """One paired PPG/ABP recording; canonically 10 s at 125 Hz (1250 samples)."""

    subject_id: str
    fs: int
    ppg: np.ndarray
    abp: np.ndarray

    def __post_init__(self) -> None:
        self.ppg = np.asarray(self.ppg, dtype=np.float64)
        self.abp = np.asarray(self.abp, dtype=np.float64)
        if self.ppg.ndim != 1 or self.abp.ndim != 1:
            raise UsageError("episode channels must be 1-D")
        if len(self.ppg) != len(self.abp):
            raise UsageError(
                f"ppg has {len(self.ppg)} samples but abp has {len(self.abp)}"
            )
        if self.fs <= 0:
            raise UsageError(f"sample rate must be positive, got {self.fs}")

    def __len__(self) -> int:
        return len(self.ppg)


@dataclass(frozen=True)
class ValidationRanges:
    """Exclusion bounds for implausible blood pressure, in mmHg."""

    sbp_min: float = 80.0
    sbp_max: float = 180.0
    dbp_min: float = 60.0
    dbp_max: float = 130.0

    def __post_init__(self) -> None:
        if not (self.sbp_min < self.sbp_max and self.dbp_min < self.dbp_max):
            raise UsageError("validation ranges must satisfy min < max")


@dataclass(frozen=True)
class NormalizationSpec:
    """Global affine normalization fitted on training data only."""

    ppg_mean: float
    ppg_std: float
    abp_mean: float
    abp_std: float

    def __post_init__(self) -> None:
        if self.ppg_std <= 0 or self.abp_std <= 0:
            raise DataError("normalization stds must be positive")


@dataclass
class EpisodeSet:
    episodes: list[Episode]
    provenance: str = ""
    norm: NormalizationSpec | None = None

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self):
        return iter(self.episodes)

    def subset(self, indices) -> "EpisodeSet":
        return EpisodeSet(
            [self.episodes[i] for i in indices], provenance=self.provenance, norm=self.norm
        )

    def subject_count(self) -> int:
        return len({e.subject_id for e in self.episodes})


# ---------------------------------------------------------------------------
# EPBN container
# ---------------------------------------------------------------------------


def store_episodes(path, episodes: EpisodeSet) -> None:
    """Write the EPBN container; samples are truncated to 32-bit floats."""
    fs_values = {e.fs for e in episodes.episodes}
    if len(fs_values) > 1:
        raise UsageError(f"mixed sample rates in one set: {sorted(fs_values)}")
    fs = fs_values.pop() if fs_values else 125
    buf = io.BytesIO()
    buf.write(EPBN_MAGIC)
    buf.write(struct.pack("<HHI", EPBN_VERSION, fs, len(episodes.episodes)))
    for e in episodes.episodes:
        sid = e.subject_id.encode("utf-8")
        buf.write(struct.pack("<H", len(sid)))
        buf.write(sid)
        buf.write(struct.pack("<I", len(e.ppg)))
        buf.write(e.ppg.astype("<f4").tobytes())
        buf.write(e.abp.astype("<f4").tobytes())
    if episodes.norm is not None:
        n = episodes.norm
        buf.write(NORM_MAGIC)
        buf.write(struct.pack("<dddd", n.ppg_mean, n.ppg_std, n.abp_mean, n.abp_std))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise OSError(f"truncated EPBN payload while reading {what}")
    return data


def load_episodes(path) -> EpisodeSet:
    """Parse an EPBN container back into an EpisodeSet (order preserved)."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EPBN_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {EPBN_MAGIC!r}")
        version, fs, count = struct.unpack("<HHI", _read_exact(fh, 8, "header"))
        if version != EPBN_VERSION:
            raise FormatError(f"unsupported EPBN version {version}")
        episodes = []
        for i in range(count):
            (sid_len,) = struct.unpack("<H", _read_exact(fh, 2, f"episode {i} id"))
            sid = _read_exact(fh, sid_len, f"episode {i} id").decode("utf-8")
            (n,) = struct.unpack("<I", _read_exact(fh, 4, f"episode {i} count"))
            ppg = np.frombuffer(_read_exact(fh, 4 * n, f"episode {i} ppg"), dtype="<f4")
            abp = np.frombuffer(_read_exact(fh, 4 * n, f"episode {i} abp"), dtype="<f4")
            episodes.append(Episode(sid, fs, ppg.astype(np.float64), abp.astype(np.float64)))
        norm = None
        trailer = fh.read(4)
        if trailer:
            if trailer != NORM_MAGIC:
                raise FormatError(f"unexpected trailer {trailer!r}")
            vals = struct.unpack("<dddd", _read_exact(fh, 32, "normalization block"))
            norm = NormalizationSpec(*vals)
            if fh.read(1):
                raise FormatError("trailing bytes after normalization block")
    return EpisodeSet(episodes, provenance=str(path), norm=norm)


# ---------------------------------------------------------------------------
# validation / normalization / folds
# ---------------------------------------------------------------------------


def validate_episode(e: Episode, r: ValidationRanges | None = None) -> str | None:
    """Return None to keep the episode, or a short exclusion reason."""
    r = r or ValidationRanges()
    if not np.all(np.isfinite(e.ppg)) or not np.all(np.isfinite(e.abp)):
        return "non-finite samples"
    sbp = float(e.abp.max())
    dbp = float(e.abp.min())
    if not r.sbp_min < sbp < r.sbp_max:
        return f"SBP {sbp:.1f} outside ({r.sbp_min:g}, {r.sbp_max:g})"
    if not r.dbp_min < dbp < r.dbp_max:
        return f"DBP {dbp:.1f} outside ({r.dbp_min:g}, {r.dbp_max:g})"
    return None


def filter_valid(
    episodes: EpisodeSet, r: ValidationRanges | None = None
) -> tuple[EpisodeSet, list[tuple[int, str]]]:
    """Split a set into kept episodes and (index, reason) exclusions."""
    kept, excluded = [], []
    for i, e in enumerate(episodes.episodes):
        reason = validate_episode(e, r)
        if reason is None:
            kept.append(e)
        else:
            excluded.append((i, reason))
    return EpisodeSet(kept, provenance=episodes.provenance, norm=episodes.norm), excluded


def fit_normalization(train: EpisodeSet) -> NormalizationSpec:
    """Global per-signal mean/std over every training sample."""
    if len(train) == 0:
        raise UsageError("cannot fit normalization on an empty set")
    ppg = np.concatenate([e.ppg for e in train.episodes])
    abp = np.concatenate([e.abp for e in train.episodes])
    spec_vals = {}
    for name, samples in (("ppg", ppg), ("abp", abp)):
        std = float(samples.std())
        if std == 0.0:
            raise DataError(f"{name} channel has zero variance; cannot normalize")
        spec_vals[f"{name}_mean"] = float(samples.mean())
        spec_vals[f"{name}_std"] = std
    return NormalizationSpec(**spec_vals)


def normalize_episode(e: Episode, spec: NormalizationSpec) -> Episode:
    if spec is None:
        raise UsageError("normalization spec is required")
    return Episode(
        e.subject_id,
        e.fs,
        (e.ppg - spec.ppg_mean) / spec.ppg_std,
        (e.abp - spec.abp_mean) / spec.abp_std,
    )


def denormalize(values: np.ndarray, spec: NormalizationSpec, which: str) -> np.ndarray:
    if spec is None:
        raise UsageError("normalization spec is required")
    if which == "ppg":
        return np.asarray(values) * spec.ppg_std + spec.ppg_mean
    if which == "abp":
        return np.asarray(values) * spec.abp_std + spec.abp_mean
    raise UsageError(f"which must be 'ppg' or 'abp', got {which!r}")


def split_folds(episodes: EpisodeSet, k: int) -> list[tuple[list[int], list[int]]]:
    """K contiguous test blocks (larger blocks first); remainder trains.

    Contiguity is deliberate: neighboring episodes tend to share subjects,
    so contiguous validation blocks reduce subject leakage.
    """
    n = len(episodes)
    if k < 2:
        raise UsageError(f"need at least 2 folds, got {k}")
    if k > n:
        raise UsageError(f"cannot split {n} episodes into {k} folds")
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        test = list(range(start, start + size))
        train = list(range(0, start)) + list(range(start + size, n))
        folds.append((train, test))
        start += size
    return folds


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------


def _pulse_train(t: np.ndarray, hr_hz: float, phase: float) -> np.ndarray:
    # two harmonics make an asymmetric, pulse-like beat
    return np.sin(2 * np.pi * hr_hz * t + phase) + 0.5 * np.sin(
        4 * np.pi * hr_hz * t + 2 * phase + 0.6
    )


def synth_generate(
    n: int, seed: int, fs: int = 125, duration_s: float = 10.0
) -> EpisodeSet:
    """Deterministic pulse-like PPG/ABP pairs for desk-scale experiments.

    PPG: two-harmonic pulse train (heart rate 0.8..2 Hz per episode) with
    slow amplitude jitter and additive noise. ABP: a nonlinearly sharpened,
    smoothed transform of the same pulse train, scaled to a per-episode
    SBP/DBP target inside the plausible range, so every episode passes
    validation. Four consecutive episodes share a synthetic subject.
    """
    if n < 1:
        raise UsageError(f"need n >= 1 episodes, got {n}")
    rng = np.random.default_rng(seed)
    samples = int(round(fs * duration_s))
    t = np.arange(samples) / fs
    episodes = []
    for i in range(n):
        hr = rng.uniform(0.8, 2.0)
        phase = rng.uniform(0, 2 * np.pi)
        pulse = _pulse_train(t, hr, phase)

        jitter = 1.0 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.05, 0.15) * t + rng.uniform(0, 6.28))
        ppg = pulse * jitter + 0.05 * rng.standard_normal(samples)

        # sharpened systolic upstroke, then a 5-tap smoothing pass
        shaped = pulse + 0.25 * pulse**2
        kernel = np.ones(5) / 5.0
        padded = np.pad(shaped, (2, 2), mode="edge")
        smooth = np.convolve(padded, kernel, mode="valid")

        dbp_target = rng.uniform(65.0, 90.0)
        sbp_target = dbp_target + rng.uniform(35.0, 70.0)
        lo, hi = smooth.min(), smooth.max()
        abp = dbp_target + (smooth - lo) * (sbp_target - dbp_target) / (hi - lo)

        episodes.append(Episode(f"S{i // 4:04d}", fs, ppg, abp))
    return EpisodeSet(episodes, provenance=f"synthetic(seed={seed})")
