"""Full forecaster: boundary RevIN -> DWT -> branches -> IDWT -> denorm."""
from __future__ import annotations

import dataclasses
import struct
import warnings
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from . import numerics as nx
from .branch import Branch, PatchConfig
from .kan import KanLayer, SplineGrid
from .normalization import revin_denorm, revin_norm
from .numerics import ShapeError, Tensor, as_tensor
from .wavelet import (CoefficientSet, coefficient_lengths, dwt_multilevel,
                      get_wavelet, idwt_multilevel)

ABLATIONS = {
    "full_kan": ("kan", "kan"),
    "temporal_kan_only": ("kan", "mlp"),
    "feature_kan_only": ("mlp", "kan"),
    "mlp_only": ("mlp", "mlp"),
}

# search spaces used only for warnings; keys are ModelConfig fields
TABLE_RANGES = {
    "crypto": {
        "lookback": {96}, "horizon": {24, 48, 96, 168}, "wavelet": {"db4"},
        "level": {1, 2}, "patch": {8, 16}, "stride": {4, 8}, "d_model": {64, 128, 256},
        "tfactor": range(2, 7), "dfactor": range(2, 7), "dropout": (0.05, 0.3),
        "grid_size": {5}, "spline_order": {3},
    },
    "ett": {
        "lookback": {512}, "horizon": {96, 192, 336, 720}, "wavelet": {"db2", "db4"},
        "level": {1, 2, 3}, "patch": {16, 48}, "stride": {8, 24}, "d_model": {64, 128},
        "tfactor": range(2, 7), "dfactor": range(2, 9), "dropout": (0.0, 0.4),
        "grid_size": {5}, "spline_order": {3},
    },
}


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 96
    horizon: int = 24
    channels: int = 1
    wavelet: str = "db4"
    level: int = 1
    patch: int = 16
    stride: int = 8
    d_model: int = 64
    tfactor: int = 2
    dfactor: int = 2
    dropout: float = 0.1
    grid_size: int = 5
    spline_order: int = 3
    ablation: str = "full_kan"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation mode {self.ablation!r}; choose from {sorted(ABLATIONS)}")
        for name in ("lookback", "horizon", "channels", "level", "d_model", "tfactor", "dfactor"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        get_wavelet(self.wavelet)
        PatchConfig(self.patch, self.stride)

    def range_warnings(self, family: str = "crypto") -> list[str]:
        """Fields outside the tuned search space of ``family`` (crypto or ett)."""
        out = []
        for name, allowed in TABLE_RANGES[family].items():
            v = getattr(self, name)
            if isinstance(allowed, tuple):
                ok = allowed[0] <= v <= allowed[1]
            else:
                ok = v in allowed
            if not ok:
                out.append(f"{name}={v} outside {family} search space")
        return out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in fields:
                raise KeyError(f"unknown model config field {k!r}")
            default = getattr(cls, k)
            kwargs[k] = type(default)(v)
        return cls(**kwargs)


def branch_names(level: int) -> list[str]:
    if level == 1:
        return ["Approximation", "Detail"]
    return ["Approximation"] + [f"Detail {k}" for k in range(level, 0, -1)]


class DecoKan:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.bank = get_wavelet(config.wavelet)
        self.grid = SplineGrid(config.grid_size, config.spline_order)
        self.training = False
        init_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
        rng = np.random.default_rng(init_ss)
        self.dropout_rng = np.random.default_rng(drop_ss)

        in_lens = coefficient_lengths(config.lookback, self.bank, config.level)
        if min(in_lens) < self.bank.filter_len:
            raise ValueError(
                f"lookback {config.lookback} too short for {config.level} levels of {config.wavelet}")
        out_lens = coefficient_lengths(config.horizon, self.bank, config.level)
        # approx, detail_m, ..., detail_1
        ins = [in_lens[-1]] + in_lens[::-1]
        outs = [out_lens[-1]] + out_lens[::-1]
        temporal_kind, feature_kind = ABLATIONS[config.ablation]
        patch = PatchConfig(config.patch, config.stride)
        self.branches = [
            Branch.create(li, ti, patch, config.d_model, config.tfactor, config.dfactor,
                          config.dropout, self.grid, temporal_kind, feature_kind, rng)
            for li, ti in zip(ins, outs)
        ]
        self.branch_names = branch_names(config.level)

    def train(self, mode: bool = True) -> "DecoKan":
        self.training = mode
        return self

    def eval(self) -> "DecoKan":
        return self.train(False)

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def forward(self, x) -> Tensor:
        """(L, C) -> (T, C), or batched (B, L, C) -> (B, T, C)."""
        x = as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = nx.reshape(x, (1,) + x.shape)
        cfg = self.config
        if x.ndim != 3 or x.shape[1:] != (cfg.lookback, cfg.channels):
            raise ShapeError(f"expected input (B, {cfg.lookback}, {cfg.channels}), got {x.shape}")
        xn, state = revin_norm(x, axis=-2)
        coeffs = dwt_multilevel(nx.permute(xn, (0, 2, 1)), self.bank, cfg.level)
        rng = self.dropout_rng if self.training else None
        preds = [branch(s, self.training, rng)[0]
                 for branch, s in zip(self.branches, coeffs.series())]
        y = idwt_multilevel(CoefficientSet(preds[0], preds[1:]), self.bank, cfg.horizon)
        out = revin_denorm(nx.permute(y, (0, 2, 1)), state)
        if squeeze:
            out = nx.reshape(out, out.shape[1:])
        return out

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for k, branch in enumerate(self.branches):
            for name, p in branch.parameters():
                yield f"branch{k}.{name}", p

    def num_parameters(self) -> int:
        return int(sum(p.size for _, p in self.parameters()))

    def kan_layers(self) -> list[tuple[str, str, str, int, KanLayer]]:
        """``(branch, mixer, stack, layer index, layer)`` over the whole model."""
        return [(bname, *entry)
                for bname, branch in zip(self.branch_names, self.branches)
                for entry in branch.kan_layers()]

    def regularization(self, l1: float = 1.0, entropy: float = 1.0) -> Tensor:
        total = Tensor(0.0)
        for *_, layer in self.kan_layers():
            total = total + layer.regularization(l1, entropy)
        return total

    def clear_masks(self) -> None:
        for *_, layer in self.kan_layers():
            layer.mask = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = dict(self.parameters())
        if set(params) != set(arrays):
            missing = sorted(set(params) ^ set(arrays))[:5]
            raise KeyError(f"parameter sets differ, e.g. {missing}")
        for name, p in params.items():
            a = np.asarray(arrays[name], dtype=np.float64)
            if a.shape != p.shape:
                raise ShapeError(f"{name}: shape {a.shape} != {p.shape}")
            p.data = a.copy()


def forward(model: DecoKan, x) -> Tensor:
    return model.forward(x)


def build_ablation(config: ModelConfig, seed: int = 0) -> DecoKan:
    """Model with KAN stacks swapped for SiLU MLPs per ``config.ablation``."""
    return DecoKan(config, seed)


def mse(pred, truth) -> Tensor:
    pred, truth = as_tensor(pred), as_tensor(truth)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {truth.shape}")
    return nx.mean(nx.square(pred - truth))


def total_loss(pred, truth, model: DecoKan | None = None, gamma: float = 1e-5) -> Tensor:
    """MSE plus ``gamma`` times the summed KAN regularizer of ``model``."""
    loss = mse(pred, truth)
    if gamma == 0.0 or model is None:
        return loss
    return loss + gamma * model.regularization()


# ---------------------------------------------------------------------------
# checkpoints
#
# layout: MAGIC | u32 version | u32 header bytes | header (utf-8 key=value lines)
#         | float64 little-endian blocks in header order | u32 crc32(header+blocks)

MAGIC = b"DECOKAN\x00"
VERSION = 1


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    pass


def save_checkpoint(model: DecoKan, path, seed: int = 0, meta: dict[str, str] | None = None,
                    arrays: dict[str, np.ndarray] | None = None) -> None:
    """Write parameters, config and optional metadata/extra arrays to ``path``."""
    lines = [f"seed={seed}"]
    lines += [f"config.{k}={v}" for k, v in model.config.to_dict().items()]
    for k, v in (meta or {}).items():
        if "\n" in str(v):
            raise ValueError(f"metadata value for {k!r} contains a newline")
        lines.append(f"meta.{k}={v}")
    blocks = []
    for kind, items in (("param", model.state_arrays().items()), ("array", (arrays or {}).items())):
        for name, a in items:
            a = np.ascontiguousarray(a, dtype="<f8")
            lines.append(f"{kind}.{name}={','.join(map(str, a.shape))}")
            blocks.append(a.tobytes())
    header = ("\n".join(lines) + "\n").encode("utf-8")
    body = header + b"".join(blocks)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(body)
        fh.write(struct.pack("<I", zlib.crc32(body)))


@dataclass
class Checkpoint:
    model: DecoKan
    seed: int
    meta: dict[str, str]
    arrays: dict[str, np.ndarray]


def read_checkpoint(path) -> tuple[dict[str, str], dict[str, np.ndarray], dict[str, np.ndarray]]:
    """Parse a checkpoint into (header fields, parameter arrays, extra arrays)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 12 or raw[:len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a DecoKAN checkpoint")
    version, hlen = struct.unpack_from("<II", raw, len(MAGIC))
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {VERSION}")
    body = raw[len(MAGIC) + 8:-4]
    (crc,) = struct.unpack("<I", raw[-4:])
    if len(body) < hlen or zlib.crc32(body) != crc:
        raise CorruptCheckpointError(f"{path}: truncated or corrupt (checksum mismatch)")
    fields: dict[str, str] = {}
    params: dict[str, np.ndarray] = {}
    extras: dict[str, np.ndarray] = {}
    offset = hlen
    for line in body[:hlen].decode("utf-8").splitlines():
        key, _, value = line.partition("=")
        kind, _, name = key.partition(".")
        if kind in ("param", "array"):
            shape = tuple(int(s) for s in value.split(",") if s)
            n = int(np.prod(shape)) if shape else 1
            a = np.frombuffer(body, dtype="<f8", count=n, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * n
            (params if kind == "param" else extras)[name] = a
        else:
            fields[key] = value
    if offset != len(body):
        raise CorruptCheckpointError(f"{path}: payload size does not match header")
    return fields, params, extras


def load_checkpoint(path, expected: ModelConfig | None = None) -> Checkpoint:
    fields, params, extras = read_checkpoint(path)
    cfg_dict = {k[len("config."):]: v for k, v in fields.items() if k.startswith("config.")}
    config = ModelConfig.from_dict(cfg_dict)
    if expected is not None and expected != config:
        diff = [f"{f}: checkpoint={getattr(config, f)!r} expected={getattr(expected, f)!r}"
                for f in config.to_dict() if getattr(config, f) != getattr(expected, f)]
        raise ConfigMismatchError("checkpoint config mismatch: " + "; ".join(diff))
    seed = int(fields.get("seed", 0))
    model = DecoKan(config, seed)
    try:
        model.load_state_arrays(params)
    except (KeyError, ShapeError) as exc:
        raise CorruptCheckpointError(f"{path}: {exc}") from None
    meta = {k[len("meta."):]: v for k, v in fields.items() if k.startswith("meta.")}
    return Checkpoint(model, seed, meta, extras)


def warn_ranges(config: ModelConfig, family: str = "crypto") -> list[str]:
    msgs = config.range_warnings(family)
    for m in msgs:
        warnings.warn(m, stacklevel=2)
    return msgs
