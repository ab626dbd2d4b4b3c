#!/usr/bin/env python3
"""Desk-scale end-to-end run: synth -> denoise -> train -> infer -> evaluate -> bench.

Everything is seeded, so repeated runs produce byte-identical artifacts
(timings aside). Writes into ./toy_run/ by default.

Usage: python scripts/run_toy_pipeline.py [workdir]
"""

import pathlib
import sys

from bpnet.cli import main as bpnet_main


def run(*argv):
    code = bpnet_main(list(argv))
    if code != 0:
        print(f"step failed with exit code {code}: {argv}", file=sys.stderr)
        raise SystemExit(code)


def main() -> None:
    workdir = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "toy_run")
    workdir.mkdir(parents=True, exist_ok=True)
    raw = workdir / "episodes.epbn"
    clean = workdir / "denoised.epbn"
    weights = workdir / "model.bpnw"
    pred = workdir / "predicted.epbn"
    report = workdir / "report"

    print("== synth ==")
    run("synth", "--n", "16", "--seed", "7", "--out", str(raw))
    print("== denoise ==")
    run("denoise", "--data", str(raw), "--out", str(clean))
    print("== train (toy: depth 2, 2 folds, 20 epochs) ==")
    run(
        "train", "--data", str(clean), "--out", str(weights),
        "--folds", "2", "--epochs", "20", "--batch", "4",
        "--depth", "2", "--base-channels", "6", "--seed", "7",
        "--log", str(workdir / "train_log.tsv"),
    )
    print("== infer ==")
    run("infer", "--weights", str(weights), "--data", str(clean), "--out", str(pred))
    print("== evaluate ==")
    run("evaluate", "--weights", str(weights), "--data", str(clean), "--out", str(report))
    print("== bench ==")
    run("bench", "--weights", str(weights), "--data", str(clean), "--reps", "3")
    print(f"\nartifacts in {workdir}/")


if __name__ == "__main__":
    main()
