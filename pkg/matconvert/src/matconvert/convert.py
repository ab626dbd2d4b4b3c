"""Slice archive records into validated fixed-length episodes.

Records are cut into non-overlapping windows (remainder dropped), the ECG
row is discarded, and each window is kept only if its blood-pressure range
is plausible: all samples finite, 80 < max(ABP) < 180, 60 < min(ABP) < 130.
Subject ids are synthesized from the record index; the archive has no
explicit subject keys, so downstream subject counts are approximate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archive import read_records
from .epbn import write_epbn

SAMPLE_RATE = 125

SBP_MIN, SBP_MAX = 80.0, 180.0
DBP_MIN, DBP_MAX = 60.0, 130.0


def exclusion_reason(abp: np.ndarray, ppg: np.ndarray) -> str | None:
    if not (np.all(np.isfinite(ppg)) and np.all(np.isfinite(abp))):
        return "non-finite"
    sbp = float(abp.max())
    dbp = float(abp.min())
    if not SBP_MIN < sbp < SBP_MAX:
        return "sbp-range"
    if not DBP_MIN < dbp < DBP_MAX:
        return "dbp-range"
    return None


@dataclass
class ConvertSummary:
    records: int = 0
    windows: int = 0
    kept: int = 0
    excluded: dict[str, int] = field(default_factory=dict)

    def lines(self) -> list[str]:
        out = [
            f"records: {self.records}",
            f"windows: {self.windows}",
            f"kept episodes: {self.kept}",
        ]
        for reason in sorted(self.excluded):
            out.append(f"excluded ({reason}): {self.excluded[reason]}")
        return out


def convert(in_path, out_path, episode_seconds: float = 10.0) -> ConvertSummary:
    """Read the archive, write validated EPBN episodes, return the tally."""
    window = int(round(SAMPLE_RATE * episode_seconds))
    if window < 1:
        raise ValueError(f"episode_seconds {episode_seconds} yields an empty window")
    summary = ConvertSummary()
    episodes: list[tuple[str, np.ndarray, np.ndarray]] = []
    for idx, record in enumerate(read_records(in_path)):
        summary.records += 1
        ppg_row, abp_row = record[0], record[1]  # further rows (ECG) dropped
        n_windows = len(ppg_row) // window
        for w in range(n_windows):
            summary.windows += 1
            sl = slice(w * window, (w + 1) * window)
            ppg, abp = ppg_row[sl], abp_row[sl]
            reason = exclusion_reason(abp, ppg)
            if reason is None:
                episodes.append((f"rec{idx:06d}", ppg, abp))
                summary.kept += 1
            else:
                summary.excluded[reason] = summary.excluded.get(reason, 0) + 1
    write_epbn(out_path, episodes, SAMPLE_RATE)
    return summary
