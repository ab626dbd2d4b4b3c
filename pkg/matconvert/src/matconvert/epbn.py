"""Minimal EPBN writer, implementing the container format directly.

Layout (little-endian): magic "EPBN" | version u16 = 1 | fs u16 |
episode count u32 | per episode: subject-id length u16 + UTF-8 bytes |
sample count u32 | PPG float32 samples | ABP float32 samples.
"""

from __future__ import annotations

import io
import struct

import numpy as np

MAGIC = b"EPBN"
VERSION = 1


def write_epbn(path, episodes: list[tuple[str, np.ndarray, np.ndarray]], fs: int) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<HHI", VERSION, fs, len(episodes)))
    for subject_id, ppg, abp in episodes:
        if len(ppg) != len(abp):
            raise ValueError("ppg/abp length mismatch")
        sid = subject_id.encode("utf-8")
        buf.write(struct.pack("<H", len(sid)))
        buf.write(sid)
        buf.write(struct.pack("<I", len(ppg)))
        buf.write(np.asarray(ppg).astype("<f4").tobytes())
        buf.write(np.asarray(abp).astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())
