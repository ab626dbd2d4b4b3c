"""Acceptance: converter output interoperates with the primary toolkit."""

import numpy as np

import bpnet.dataset as ds

from matconvert.convert import convert
from test_convert import pulse_record, write_hdf5_archive, write_legacy_archive


def _ok(name):
    print(f"\nACCEPTANCE {name}: PASS")


def test_output_passes_primary_load_and_validate(tmp_path):
    records = [
        pulse_record(2500, seed=20),
        pulse_record(1250, sbp=150.0, dbp=70.0, seed=21),
        pulse_record(1250, sbp=185.0, seed=22),  # dropped by the converter
        pulse_record(3750, seed=23),
    ]
    path = tmp_path / "arch.mat"
    out = tmp_path / "converted.epbn"
    write_hdf5_archive(path, records)
    summary = convert(path, out)
    assert summary.kept == 6

    episodes = ds.load_episodes(out)  # primary-side parse, zero format errors
    assert len(episodes) == 6
    kept, excluded = ds.filter_valid(episodes)
    assert excluded == []
    assert len(kept) == 6
    assert all(len(e) == 1250 and e.fs == 125 for e in episodes.episodes)

    # sample values identical at 32-bit precision
    np.testing.assert_array_equal(
        episodes.episodes[0].ppg, records[0][0][:1250].astype(np.float32)
    )
    np.testing.assert_array_equal(
        episodes.episodes[0].abp, records[0][1][:1250].astype(np.float32)
    )
    _ok("converter output loads and validates in the primary toolkit")


def test_byte_identical_across_runs(tmp_path):
    records = [pulse_record(2500, seed=30), pulse_record(5000, seed=31)]
    for writer, tag in ((write_legacy_archive, "legacy"), (write_hdf5_archive, "hdf5")):
        path = tmp_path / f"arch-{tag}.mat"
        writer(path, records)
        a = tmp_path / f"a-{tag}.epbn"
        b = tmp_path / f"b-{tag}.epbn"
        convert(path, a)
        convert(path, b)
        assert a.read_bytes() == b.read_bytes()
    _ok("converter output byte-identical across runs")


def test_slicing_verified_on_synthetic_archive(tmp_path):
    lengths = [1250, 2499, 2500, 6251]
    path = tmp_path / "arch.mat"
    out = tmp_path / "out.epbn"
    write_legacy_archive(path, [pulse_record(n, seed=40 + n) for n in lengths])
    summary = convert(path, out)
    assert summary.windows == sum(n // 1250 for n in lengths)
    episodes = ds.load_episodes(out)
    assert len(episodes) == summary.kept
    _ok("slicing arithmetic on synthetic archives")
