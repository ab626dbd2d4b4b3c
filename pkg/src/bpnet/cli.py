"""Command-line surface: synth, denoise, train, infer, evaluate, bench.

Exit codes: 0 success, 2 usage, 3 IO, 4 file format, 5 degenerate data.
Set BPNET_LOG=debug|info|warning to control verbosity. All output is UTF-8.
"""

from __future__ import annotations

import argparse
import logging
import os
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import evaluation as ev
from . import network as net
from . import training as tr
from . import wavelet as wv
from .errors import DataError, FormatError, UsageError

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_DATA = 5

# Published edge reference: a Raspberry Pi 4 deployment converted one second
# of signal in 4.25 ms. Printed for context only; never asserted.
EDGE_REFERENCE_MS_PER_S = 4.25

log = logging.getLogger("bpnet.cli")


def _setup_logging() -> None:
    level = os.environ.get("BPNET_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    if args.n < 1:
        raise UsageError(f"need at least one episode, got n={args.n}")
    episodes = ds.synth_generate(args.n, args.seed)
    ds.store_episodes(args.out, episodes)
    print(f"wrote {len(episodes)} synthetic episodes to {args.out}")
    return 0


def cmd_denoise(args: argparse.Namespace) -> int:
    episodes = ds.load_episodes(args.data)
    config = wv.DenoiseConfig(levels=args.levels)
    cleaned = [
        ds.Episode(e.subject_id, e.fs, wv.denoise(e.ppg, config), e.abp)
        for e in episodes.episodes
    ]
    ds.store_episodes(args.out, ds.EpisodeSet(cleaned, norm=episodes.norm))
    print(f"denoised PPG of {len(cleaned)} episodes -> {args.out}")
    return 0


def _network_config(args: argparse.Namespace, input_length: int) -> net.NetworkConfig:
    return net.NetworkConfig.for_input(
        input_length, depth=args.depth, base_channels=args.base_channels
    )


def cmd_train(args: argparse.Namespace) -> int:
    raw = ds.load_episodes(args.data)
    episodes, excluded = ds.filter_valid(raw)
    if excluded:
        log.info("excluded %d of %d episodes", len(excluded), len(raw))
    if len(episodes) < args.folds:
        raise UsageError(
            f"{len(episodes)} valid episodes cannot fill {args.folds} folds"
        )
    lengths = {len(e) for e in episodes.episodes}
    if len(lengths) != 1:
        raise FormatError(f"mixed episode lengths {sorted(lengths)}")
    config = _network_config(args, lengths.pop())
    plan = tr.TrainPlan(
        epochs=args.epochs,
        batch_size=args.batch,
        folds=args.folds,
        ssl=tr.SslPlan(
            pretrain_epochs=args.ssl_pretrain_epochs,
            freeze_epochs=args.ssl_freeze_epochs,
        ),
    )
    log_sink = None
    if args.log:
        log_sink = open(args.log, "w", encoding="utf-8")
    try:
        params, spec, reports = tr.train_kfold(
            episodes, config, plan, args.seed, ssl=args.ssl, log_sink=log_sink
        )
    finally:
        if log_sink:
            log_sink.close()
    net.save_weights(args.out, config, params, spec)
    best = min(reports, key=lambda r: (r.val_mae_norm, r.fold))
    for r in reports:
        marker = " *" if r.fold == best.fold else ""
        print(
            f"fold {r.fold}: train {r.final_train_loss:.4f}  "
            f"val {r.val_mae_norm:.4f} ({r.val_mae_mmhg:.2f} mmHg)  "
            f"{r.wall_time_s:.1f}s{marker}"
        )
    print(f"saved best fold ({best.fold}) to {args.out}")
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    config, params, spec = net.load_weights(args.weights)
    if spec is None:
        raise FormatError("weight file lacks a normalization block; retrain")
    episodes = ds.load_episodes(args.data)
    predicted = []
    rows = []
    for e in episodes.episodes:
        if len(e) != config.input_length:
            raise UsageError(
                f"episode length {len(e)} does not match model input "
                f"{config.input_length}"
            )
        x = (e.ppg - spec.ppg_mean) / spec.ppg_std
        abp_hat = ds.denormalize(net.bpnet_forward(params, config, x), spec, "abp")
        predicted.append(ds.Episode(e.subject_id, e.fs, e.ppg, abp_hat))
        bp = ev.extract_bp(abp_hat)
        rows.append((e.subject_id, bp))
    ds.store_episodes(args.out, ds.EpisodeSet(predicted, norm=spec))
    table = args.out + ".bp.tsv"
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("subject\tsbp\tmap\tdbp\n")
        for sid, bp in rows:
            fh.write(f"{sid}\t{bp.sbp:.3f}\t{bp.map:.3f}\t{bp.dbp:.3f}\n")
    print(f"wrote predicted waveforms to {args.out} and BP table to {table}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config, params, spec = net.load_weights(args.weights)
    if spec is None:
        raise FormatError("weight file lacks a normalization block; retrain")
    episodes = ds.load_episodes(args.data)
    report = ev.evaluate(params, config, episodes, spec, workers=args.parallel)
    text = ev.render_report(report)
    print(text, end="")
    if args.out:
        with open(args.out + ".txt", "w", encoding="utf-8") as fh:
            fh.write(text)
        with open(args.out + ".tsv", "w", encoding="utf-8") as fh:
            fh.write(ev.report_lines(report))
        print(f"report written to {args.out}.txt and {args.out}.tsv")
    return 0


@dataclass
class BenchReport:
    episodes: int
    reps: int
    mean_ms: float
    median_ms: float
    p95_ms: float
    ms_per_signal_second: float
    realtime_factor: float


def run_benchmark(
    params: net.ParameterSet,
    config: net.NetworkConfig,
    episodes: ds.EpisodeSet,
    spec: ds.NormalizationSpec,
    reps: int,
    warmup: int = 3,
) -> BenchReport:
    """Wall-clock the full PPG -> ABP transform (normalization included,
    file IO excluded). Warm-up runs are discarded."""
    if reps < 3:
        raise UsageError(f"need reps >= 3, got {reps}")
    if len(episodes) == 0:
        raise UsageError("no episodes to benchmark")

    def transform(e: ds.Episode) -> np.ndarray:
        x = (e.ppg - spec.ppg_mean) / spec.ppg_std
        return ds.denormalize(net.bpnet_forward(params, config, x), spec, "abp")

    for _ in range(warmup):
        transform(episodes.episodes[0])

    latencies_ms = []
    for _ in range(reps):
        for e in episodes.episodes:
            t0 = time.perf_counter()
            transform(e)
            latencies_ms.append((time.perf_counter() - t0) * 1000.0)

    duration_s = len(episodes.episodes[0]) / episodes.episodes[0].fs
    mean_ms = statistics.fmean(latencies_ms)
    return BenchReport(
        episodes=len(episodes),
        reps=reps,
        mean_ms=mean_ms,
        median_ms=statistics.median(latencies_ms),
        p95_ms=float(np.percentile(latencies_ms, 95)),
        ms_per_signal_second=mean_ms / duration_s,
        realtime_factor=mean_ms / (duration_s * 1000.0),
    )


def cmd_bench(args: argparse.Namespace) -> int:
    config, params, spec = net.load_weights(args.weights)
    if spec is None:
        raise FormatError("weight file lacks a normalization block; retrain")
    episodes = ds.load_episodes(args.data)
    report = run_benchmark(params, config, episodes, spec, args.reps)
    print(f"episodes: {report.episodes}   reps: {report.reps}")
    print(
        f"latency per episode: mean {report.mean_ms:.2f} ms, "
        f"median {report.median_ms:.2f} ms, p95 {report.p95_ms:.2f} ms"
    )
    print(f"ms per signal-second: {report.ms_per_signal_second:.3f}")
    print(f"real-time factor: {report.realtime_factor:.5f}")
    print(
        f"(edge reference: {EDGE_REFERENCE_MS_PER_S} ms per signal-second "
        "on a Raspberry Pi 4; context only)"
    )
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpnet",
        description="PPG-to-ABP translation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic episodes")
    p.add_argument("--n", type=int, required=True, help="episode count")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("denoise", help="wavelet-denoise the PPG channel")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", type=int, default=10)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("train", help="k-fold training")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--depth", type=int, default=5)
    p.add_argument("--base-channels", type=int, default=16)
    p.add_argument("--ssl", action="store_true", help="self-supervised pretraining")
    p.add_argument("--ssl-pretrain-epochs", type=int, default=50)
    p.add_argument("--ssl-freeze-epochs", type=int, default=25)
    p.add_argument("--log", default=None, help="per-epoch TSV log file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict ABP waveforms")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="grade predictions against standards")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None, help="report file prefix")
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="inference latency benchmark")
    p.add_argument("--weights", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--reps", type=int, default=10)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
