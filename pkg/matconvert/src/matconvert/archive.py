"""Reading the source archive: MATLAB files holding cell arrays of records.

Each record is a channels x samples matrix (rows: PPG, ABP, ECG at 125 Hz).
Both storage generations are supported: v7.3 files are HDF5 (cell arrays
become object-reference datasets, matrices arrive transposed), older files
go through scipy.io.loadmat. Records are yielded in variable-name order,
then cell order, so a given archive always enumerates identically.
"""

from __future__ import annotations

import numpy as np


class ArchiveError(ValueError):
    """Unreadable or malformed source archive."""


def _orient(matrix: np.ndarray, where: str) -> np.ndarray:
    """Rows must be channels; HDF5 storage arrives transposed."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ArchiveError(f"{where}: expected a 2-D record, got shape {m.shape}")
    if m.shape[0] > m.shape[1]:
        m = m.T
    if m.shape[0] < 2:
        raise ArchiveError(
            f"{where}: record needs at least PPG and ABP rows, got {m.shape[0]}"
        )
    return m


def _read_hdf5(path) -> list[np.ndarray]:
    import h5py

    records: list[np.ndarray] = []
    with h5py.File(path, "r") as f:
        names = sorted(k for k in f.keys() if not k.startswith("#"))
        if not names:
            raise ArchiveError(f"{path}: no record variables found")
        for name in names:
            node = f[name]
            if not isinstance(node, h5py.Dataset):
                continue
            if node.dtype.kind == "O":  # cell array of references
                flat = node[()].ravel(order="F")
                for i, ref in enumerate(flat):
                    records.append(_orient(f[ref][()], f"{name}[{i}]"))
            else:
                records.append(_orient(node[()], name))
    if not records:
        raise ArchiveError(f"{path}: no usable records")
    return records


def _read_legacy(path) -> list[np.ndarray]:
    from scipy.io import loadmat

    data = loadmat(path)
    records: list[np.ndarray] = []
    for name in sorted(k for k in data.keys() if not k.startswith("__")):
        value = data[name]
        if not isinstance(value, np.ndarray):
            continue
        if value.dtype == object:
            for i, cell in enumerate(value.ravel(order="F")):
                records.append(_orient(cell, f"{name}[{i}]"))
        elif value.ndim == 2 and value.size:
            records.append(_orient(value, name))
    if not records:
        raise ArchiveError(f"{path}: no usable records")
    return records


def read_records(path) -> list[np.ndarray]:
    """All records in the archive, each oriented as [channels, samples]."""
    import h5py

    if h5py.is_hdf5(path):
        return _read_hdf5(path)
    try:
        return _read_legacy(path)
    except ArchiveError:
        raise
    except OSError:
        raise
    except Exception as exc:
        raise ArchiveError(f"{path}: cannot parse as a MATLAB archive: {exc}") from exc
