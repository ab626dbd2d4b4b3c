"""The PPG-to-ABP translation network: a 1-D U-Net built from an averaging
ensemble front end, contraction/expansion stacks with inception-residual
blocks, and a refinement head.

All structural choices live in :class:`NetworkConfig`; the parameter store
is a flat name -> tensor map so serialization, freezing and optimizer state
can address weights uniformly.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import RunningStats, Tensor
from .dataset import NormalizationSpec
from .errors import ConfigError, FormatError, ShapeError

__all__ = [
    "NetworkConfig",
    "ParameterSet",
    "StageShape",
    "Topology",
    "build_topology",
    "build_bpnet",
    "encoder_parameter_names",
    "avg_ensemble_forward",
    "ir_block_forward",
    "contraction_forward",
    "expansion_forward",
    "denoising_forward",
    "apply_network",
    "bpnet_forward",
    "parameter_count",
    "save_weights",
    "load_weights",
]

WEIGHTS_MAGIC = b"BPNW"
WEIGHTS_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    depth: int = 5
    base_channels: int = 16
    ensemble_channels: int = 8
    ir_kernel_sizes: tuple[int, ...] = (3, 5, 7)
    leaky_slope: float = 0.01
    input_length: int = 1250
    padded_length: int = 1280

    def __post_init__(self) -> None:
        object.__setattr__(self, "ir_kernel_sizes", tuple(self.ir_kernel_sizes))
        if self.depth < 1:
            raise ConfigError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < len(self.ir_kernel_sizes):
            raise ConfigError(
                f"base_channels {self.base_channels} smaller than the "
                f"{len(self.ir_kernel_sizes)} inception branches"
            )
        if self.ensemble_channels < 1:
            raise ConfigError("ensemble_channels must be >= 1")
        if any(k % 2 == 0 for k in self.ir_kernel_sizes):
            raise ConfigError(f"inception kernels must be odd, got {self.ir_kernel_sizes}")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigError(f"leaky_slope must be in (0, 1), got {self.leaky_slope}")
        if self.padded_length < self.input_length:
            raise ConfigError("padded_length must be >= input_length")
        if self.padded_length % (1 << self.depth) != 0:
            raise ConfigError(
                f"padded_length {self.padded_length} not divisible by 2^{self.depth}"
            )

    @classmethod
    def for_input(cls, input_length: int, **kwargs) -> "NetworkConfig":
        """Config with padded_length rounded up to the next 2^depth multiple."""
        depth = kwargs.get("depth", 5)
        step = 1 << depth
        padded = ((input_length + step - 1) // step) * step
        return cls(input_length=input_length, padded_length=padded, **kwargs)


@dataclass
class ParameterSet:
    """Named weights plus batch-norm running stats.

    ``params`` maps hierarchical names (e.g. ``cb3.ir.branch5.weight``) to
    trainable tensors; ``stats`` maps batch-norm prefixes (e.g. ``cb3.bn``)
    to their running moments. ``encoder_tags`` is populated by pretraining.
    """

    params: dict[str, Tensor]
    stats: dict[str, RunningStats]
    encoder_tags: frozenset[str] = frozenset()

    def copy(self) -> "ParameterSet":
        out = ParameterSet({}, {}, self.encoder_tags)
        for name, t in self.params.items():
            c = Tensor(t.data.copy(), requires_grad=t.requires_grad)
            out.params[name] = c
        for name, s in self.stats.items():
            out.stats[name] = s.copy()
        return out

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def trainable(self) -> dict[str, Tensor]:
        return {n: t for n, t in self.params.items() if t.requires_grad}


@dataclass(frozen=True)
class StageShape:
    channels: int
    length: int


@dataclass(frozen=True)
class Topology:
    """Structural description: per-stage shapes and skip wiring."""

    encoder: tuple[StageShape, ...]  # stage 0 = stem output, stage depth = bottleneck
    decoder: tuple[StageShape, ...]  # stage i = i-th expansion output
    skips: tuple[tuple[int, int], ...]  # (encoder stage, decoder stage) pairs


def build_topology(config: NetworkConfig) -> Topology:
    enc = tuple(
        StageShape(config.base_channels << j, config.padded_length >> j)
        for j in range(config.depth + 1)
    )
    dec = tuple(
        StageShape(
            config.base_channels << (config.depth - i),
            config.padded_length >> (config.depth - i),
        )
        for i in range(1, config.depth + 1)
    )
    skips = tuple((config.depth - i, i) for i in range(1, config.depth + 1))
    return Topology(encoder=enc, decoder=dec, skips=skips)


def _branch_widths(channels: int, n_branches: int) -> list[int]:
    # floor shares; the first branch absorbs the remainder
    base = channels // n_branches
    return [channels - base * (n_branches - 1)] + [base] * (n_branches - 1)


def encoder_parameter_names(config: NetworkConfig) -> frozenset[str]:
    """Ensemble, stem, and every contraction block (the frozen set for SSL)."""
    names = set()
    topo_params, _ = _parameter_specs(config)
    for name in topo_params:
        head = name.split(".", 1)[0]
        if head in ("ensemble", "stem") or head.startswith("cb"):
            names.add(name)
    return frozenset(names)


def _parameter_specs(config: NetworkConfig):
    """Ordered (name -> shape) for weights and list of batch-norm prefixes."""
    specs: dict[str, tuple[int, ...]] = {}
    bn_prefixes: list[tuple[str, int]] = []

    def conv(name: str, cout: int, cin: int, k: int) -> None:
        specs[f"{name}.weight"] = (cout, cin, k)
        specs[f"{name}.bias"] = (cout,)

    def tconv(name: str, cin: int, cout: int, k: int) -> None:
        specs[f"{name}.weight"] = (cin, cout, k)
        specs[f"{name}.bias"] = (cout,)

    def bn(name: str, c: int) -> None:
        specs[f"{name}.gamma"] = (c,)
        specs[f"{name}.beta"] = (c,)
        bn_prefixes.append((name, c))

    conv("ensemble.expand", config.ensemble_channels, 1, 7)
    conv("ensemble.average", 1, config.ensemble_channels, 1)
    conv("stem.conv", config.base_channels, 1, 3)

    def ir(prefix: str, c: int) -> None:
        for k, w in zip(config.ir_kernel_sizes, _branch_widths(c, len(config.ir_kernel_sizes))):
            conv(f"{prefix}.branch{k}", w, c, k)

    for i in range(1, config.depth + 1):
        c = config.base_channels << (i - 1)
        conv(f"cb{i}.widen", 2 * c, c, 3)
        bn(f"cb{i}.bn", 2 * c)
        conv(f"cb{i}.down", 2 * c, 2 * c, 4)
        ir(f"cb{i}.ir", 2 * c)

    for i in range(1, config.depth + 1):
        c = config.base_channels << (config.depth - i + 1)  # block input channels
        half = c // 2
        conv(f"eb{i}.narrow", half, c, 3)
        bn(f"eb{i}.bn", half)
        tconv(f"eb{i}.up", half, half, 4)
        ir(f"eb{i}.ir", half)
        conv(f"eb{i}.merge", half, 2 * half, 1)

    conv("head.refine1", config.base_channels, config.base_channels, 3)
    conv("head.refine2", config.base_channels, config.base_channels, 3)
    conv("head.project", 1, config.base_channels, 1)
    return specs, bn_prefixes


def build_bpnet(config: NetworkConfig, seed: int) -> tuple[Topology, ParameterSet]:
    """Deterministic initialization: fan-in-scaled uniform conv weights,
    zero biases, identity batch-norm affine, unit running variance."""
    rng = np.random.default_rng(seed)
    specs, bn_prefixes = _parameter_specs(config)
    params: dict[str, Tensor] = {}
    for name, shape in specs.items():
        if name.endswith(".weight"):
            if name.startswith("eb") and ".up." in name:
                cin, _, k = shape  # transposed layout [Cin, Cout, K]
            else:
                _, cin, k = shape
            bound = 1.0 / np.sqrt(cin * k)
            data = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            data = np.ones(shape)
        else:  # biases and betas
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True)
    stats = {name: RunningStats(c) for name, c in bn_prefixes}
    return build_topology(config), ParameterSet(params=params, stats=stats)


# ---------------------------------------------------------------------------
# block forwards
# ---------------------------------------------------------------------------


def _conv(p: ParameterSet, name: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return ad.conv1d(x, p.params[f"{name}.weight"], p.params[f"{name}.bias"], stride, padding)


def _tconv(p: ParameterSet, name: str, x: Tensor, stride: int, padding: int) -> Tensor:
    return ad.conv1d_transpose(
        x, p.params[f"{name}.weight"], p.params[f"{name}.bias"], stride, padding
    )


def _bn(p: ParameterSet, name: str, x: Tensor, train: bool) -> Tensor:
    return ad.batchnorm1d(
        x, p.params[f"{name}.gamma"], p.params[f"{name}.beta"], p.stats[name], train=train
    )


def avg_ensemble_forward(p: ParameterSet, config: NetworkConfig, x: Tensor) -> Tensor:
    """Spread a single-channel signal into jittered variants, then average
    them back with a 1x1 convolution across channels. Length preserved."""
    if x.shape[1] != 1:
        raise ShapeError(f"ensemble front end expects 1 channel, got {x.shape[1]}")
    variants = _conv(p, "ensemble.expand", x, padding=3)
    return _conv(p, "ensemble.average", variants)


def ir_block_forward(p: ParameterSet, config: NetworkConfig, prefix: str, x: Tensor) -> Tensor:
    """Parallel convolutions of different kernel sizes, concatenated back to
    the input width, plus a residual connection and leaky ReLU."""
    c = x.shape[1]
    widths = _branch_widths(c, len(config.ir_kernel_sizes))
    branches = [
        _conv(p, f"{prefix}.branch{k}", x, padding=k // 2)
        for k, _ in zip(config.ir_kernel_sizes, widths)
    ]
    merged = branches[0]
    for b in branches[1:]:
        merged = ad.concat_channels(merged, b)
    return ad.leaky_relu(ad.add(merged, x), config.leaky_slope)


def contraction_forward(
    p: ParameterSet, config: NetworkConfig, prefix: str, x: Tensor, train: bool
) -> Tensor:
    """Double the channels, halve the length: padded conv, batch norm,
    leaky ReLU, strided conv, inception-residual block."""
    if x.shape[2] % 2 != 0:
        raise ShapeError(f"contraction needs an even length, got {x.shape[2]}")
    h = _conv(p, f"{prefix}.widen", x, padding=1)
    h = _bn(p, f"{prefix}.bn", h, train)
    h = ad.leaky_relu(h, config.leaky_slope)
    h = _conv(p, f"{prefix}.down", h, stride=2, padding=1)
    return ir_block_forward(p, config, f"{prefix}.ir", h)


def expansion_forward(
    p: ParameterSet, config: NetworkConfig, prefix: str, x: Tensor, skip: Tensor, train: bool
) -> Tensor:
    """Halve the channels, double the length, then fold in the skip feature
    map from the matching contraction stage via a 1x1 merge."""
    half = x.shape[1] // 2
    if skip.shape[1] != half or skip.shape[2] != 2 * x.shape[2]:
        raise ShapeError(
            f"skip shape {skip.shape} does not match expansion of {x.shape}"
        )
    h = _conv(p, f"{prefix}.narrow", x, padding=1)
    h = _bn(p, f"{prefix}.bn", h, train)
    h = ad.leaky_relu(h, config.leaky_slope)
    h = _tconv(p, f"{prefix}.up", h, stride=2, padding=1)
    h = ir_block_forward(p, config, f"{prefix}.ir", h)
    h = ad.concat_channels(h, skip)
    return _conv(p, f"{prefix}.merge", h)


def denoising_forward(p: ParameterSet, config: NetworkConfig, x: Tensor) -> Tensor:
    """Refine the full-length feature map and project it to one channel."""
    h = _conv(p, "head.refine1", x, padding=1)
    h = ad.leaky_relu(h, config.leaky_slope)
    h = _conv(p, "head.refine2", h, padding=1)
    return _conv(p, "head.project", h)


def apply_network(
    p: ParameterSet,
    config: NetworkConfig,
    x: Tensor,
    train: bool = False,
    encoder_eval: bool = False,
) -> Tensor:
    """Run the whole network on a [B, 1, input_length] batch.

    ``encoder_eval`` keeps encoder batch-norm layers on their running stats
    (used while the encoder is frozen during fine-tuning).
    """
    if x.data.ndim != 3 or x.shape[1] != 1 or x.shape[2] != config.input_length:
        raise ShapeError(
            f"expected [B, 1, {config.input_length}] input, got {x.shape}"
        )
    pad = config.padded_length - config.input_length
    left, right = pad // 2, pad - pad // 2
    h = ad.pad1d(x, left, right) if pad else x

    enc_train = train and not encoder_eval
    h = avg_ensemble_forward(p, config, h)
    h = ad.leaky_relu(_conv(p, "stem.conv", h, padding=1), config.leaky_slope)
    skips = [h]
    for i in range(1, config.depth + 1):
        h = contraction_forward(p, config, f"cb{i}", h, enc_train)
        skips.append(h)
    for i in range(1, config.depth + 1):
        h = expansion_forward(p, config, f"eb{i}", h, skips[config.depth - i], train)
    h = denoising_forward(p, config, h)
    return ad.crop1d(h, left, right) if pad else h


def bpnet_forward(p: ParameterSet, config: NetworkConfig, ppg: np.ndarray) -> np.ndarray:
    """Single-episode inference: normalized PPG vector in, ABP vector out."""
    v = np.asarray(ppg, dtype=np.float64)
    if v.ndim != 1 or len(v) != config.input_length:
        raise ShapeError(f"expected a vector of {config.input_length} samples, got {v.shape}")
    out = apply_network(p, config, Tensor(v[None, None, :]), train=False)
    return out.data[0, 0].copy()


def parameter_count(config: NetworkConfig) -> int:
    """Trainable scalar count; a pure function of the configuration."""
    specs, _ = _parameter_specs(config)
    return int(np.sum([np.prod(s) for s in specs.values()]))


# ---------------------------------------------------------------------------
# weight file
# ---------------------------------------------------------------------------


def _config_text(config: NetworkConfig, norm: NormalizationSpec | None) -> str:
    lines = []
    for f in fields(config):
        v = getattr(config, f.name)
        if f.name == "ir_kernel_sizes":
            v = ",".join(str(k) for k in v)
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name}={v}")
    if norm is not None:
        for key in ("ppg_mean", "ppg_std", "abp_mean", "abp_std"):
            lines.append(f"norm.{key}={getattr(norm, key)!r}")
    return "\n".join(lines) + "\n"


def _parse_config_text(text: str) -> tuple[NetworkConfig, NormalizationSpec | None]:
    kv: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise FormatError(f"bad config line {line!r}")
        key, _, value = line.partition("=")
        kv[key] = value
    try:
        config = NetworkConfig(
            depth=int(kv["depth"]),
            base_channels=int(kv["base_channels"]),
            ensemble_channels=int(kv["ensemble_channels"]),
            ir_kernel_sizes=tuple(int(k) for k in kv["ir_kernel_sizes"].split(",")),
            leaky_slope=float(kv["leaky_slope"]),
            input_length=int(kv["input_length"]),
            padded_length=int(kv["padded_length"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid config block: {exc}") from exc
    norm = None
    if "norm.ppg_mean" in kv:
        try:
            norm = NormalizationSpec(
                ppg_mean=float(kv["norm.ppg_mean"]),
                ppg_std=float(kv["norm.ppg_std"]),
                abp_mean=float(kv["norm.abp_mean"]),
                abp_std=float(kv["norm.abp_std"]),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"invalid normalization block: {exc}") from exc
    return config, norm


def _entries(p: ParameterSet):
    for name, t in p.params.items():
        yield name, t.data
    for name, s in p.stats.items():
        yield f"{name}.running_mean", s.mean
        yield f"{name}.running_var", s.var


def save_weights(
    path, config: NetworkConfig, p: ParameterSet, norm: NormalizationSpec | None = None
) -> None:
    """Write the BPNW container (32-bit values, little-endian)."""
    buf = io.BytesIO()
    buf.write(WEIGHTS_MAGIC)
    buf.write(struct.pack("<H", WEIGHTS_VERSION))
    cfg = _config_text(config, norm).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    entries = list(_entries(p))
    buf.write(struct.pack("<I", len(entries)))
    for name, arr in entries:
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<B", arr.ndim))
        for extent in arr.shape:
            buf.write(struct.pack("<I", extent))
        buf.write(arr.astype("<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_weights(path) -> tuple[NetworkConfig, ParameterSet, NormalizationSpec | None]:
    """Read a BPNW container and check it against its own configuration."""

    def read(fh, n: int, what: str) -> bytes:
        data = fh.read(n)
        if len(data) != n:
            raise OSError(f"truncated weight file while reading {what}")
        return data

    with open(path, "rb") as fh:
        if fh.read(4) != WEIGHTS_MAGIC:
            raise FormatError(f"not a BPNW weight file: {path}")
        (version,) = struct.unpack("<H", read(fh, 2, "version"))
        if version != WEIGHTS_VERSION:
            raise FormatError(f"unsupported weight file version {version}")
        (cfg_len,) = struct.unpack("<I", read(fh, 4, "config length"))
        config, norm = _parse_config_text(read(fh, cfg_len, "config").decode("utf-8"))
        (count,) = struct.unpack("<I", read(fh, 4, "parameter count"))
        raw: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", read(fh, 2, "parameter name"))
            name = read(fh, name_len, "parameter name").decode("utf-8")
            (rank,) = struct.unpack("<B", read(fh, 1, "rank"))
            shape = struct.unpack("<" + "I" * rank, read(fh, 4 * rank, "extents"))
            n = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(read(fh, 4 * n, name), dtype="<f4").reshape(shape)
            if name in raw:
                raise FormatError(f"duplicate parameter {name!r}")
            raw[name] = data.astype(np.float64)
        if fh.read(1):
            raise FormatError("trailing bytes after parameter payload")

    specs, bn_prefixes = _parameter_specs(config)
    params: dict[str, Tensor] = {}
    for name, shape in specs.items():
        if name not in raw:
            raise FormatError(f"weight file missing parameter {name!r}")
        if raw[name].shape != shape:
            raise FormatError(
                f"parameter {name!r} has shape {raw[name].shape}, expected {shape}"
            )
        params[name] = Tensor(raw.pop(name), requires_grad=True)
    stats: dict[str, RunningStats] = {}
    for prefix, c in bn_prefixes:
        s = RunningStats(c)
        for attr, suffix in (("mean", "running_mean"), ("var", "running_var")):
            key = f"{prefix}.{suffix}"
            if key not in raw:
                raise FormatError(f"weight file missing {key!r}")
            if raw[key].shape != (c,):
                raise FormatError(f"{key!r} has shape {raw[key].shape}, expected ({c},)")
            setattr(s, attr, raw.pop(key))
        stats[prefix] = s
    if raw:
        raise FormatError(f"unexpected parameters in weight file: {sorted(raw)}")
    return config, ParameterSet(params=params, stats=stats), norm
