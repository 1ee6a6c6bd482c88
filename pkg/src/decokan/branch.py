"""One resolution branch: norm, patch + embed, two mixers, residual, head."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import numerics as nx
from .kan import KanLayer, KanStack, SplineGrid
from .normalization import RevinState, mixer_norm, revin_denorm, revin_norm
from .numerics import ShapeError, Tensor, as_tensor


class PatchingError(ValueError):
    pass


@dataclass(frozen=True)
class PatchConfig:
    patch: int
    stride: int

    def __post_init__(self):
        if not 1 <= self.stride <= self.patch:
            raise PatchingError(f"need 1 <= stride <= patch, got P={self.patch}, S={self.stride}")

    def num_patches(self, length: int) -> int:
        if length + self.stride < self.patch:
            raise PatchingError(
                f"series of length {length} padded by {self.stride} is shorter than patch {self.patch}")
        return (length - self.patch) // self.stride + 2


def patch_index(length: int, cfg: PatchConfig) -> np.ndarray:
    """(N, P) gather indices into the series padded by last-value replication."""
    n = cfg.num_patches(length)
    starts = np.arange(n) * cfg.stride
    idx = starts[:, None] + np.arange(cfg.patch)[None, :]
    return np.minimum(idx, length - 1)


class Linear:
    def __init__(self, weight, bias):
        self.weight = Tensor(np.asarray(weight, dtype=np.float64), requires_grad=True, name="weight")
        self.bias = Tensor(np.asarray(bias, dtype=np.float64), requires_grad=True, name="bias")

    @classmethod
    def create(cls, n_in: int, n_out: int, rng: np.random.Generator) -> "Linear":
        bound = 1.0 / np.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_in, n_out)), rng.uniform(-bound, bound, n_out))

    def __call__(self, x) -> Tensor:
        return nx.matmul(as_tensor(x), self.weight) + self.bias

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "weight", self.weight
        yield "bias", self.bias


class MlpStack:
    """Linear -> SiLU -> Linear; the drop-in replacement for a KAN stack."""

    def __init__(self, first: Linear, second: Linear):
        self.first, self.second = first, second

    @classmethod
    def create(cls, widths: list[int], rng: np.random.Generator) -> "MlpStack":
        n_in, hidden, n_out = widths
        return cls(Linear.create(n_in, hidden, rng), Linear.create(hidden, n_out, rng))

    def __call__(self, x) -> Tensor:
        return self.second(nx.silu(self.first(x)))

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, p in self.first.parameters():
            yield f"first.{name}", p
        for name, p in self.second.parameters():
            yield f"second.{name}", p

    def kan_layers(self) -> list[KanLayer]:
        return []


def make_stack(kind: str, widths: list[int], grid: SplineGrid, rng: np.random.Generator):
    if kind == "kan":
        return KanStack.create(widths, grid, rng)
    if kind == "mlp":
        return MlpStack.create(widths, rng)
    raise ValueError(f"unknown stack kind {kind!r}")


def patch_and_embed(x, cfg: PatchConfig, embed: Linear) -> Tensor:
    """(..., C, L_i) -> (..., C, N_i, d)."""
    x = as_tensor(x)
    idx = patch_index(x.shape[-1], cfg)
    return embed(nx.take(x, idx))


class Mixer:
    """Temporal stack over the patch axis, then feature stack over d, each residual."""

    def __init__(self, temporal, feature, dropout: float = 0.0):
        self.temporal = temporal
        self.feature = feature
        self.dropout = dropout

    def __call__(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        x = as_tensor(x)
        ndim = x.ndim
        swap = list(range(ndim - 2)) + [ndim - 1, ndim - 2]
        y = nx.permute(self.temporal(nx.permute(mixer_norm(x), swap)), swap)
        x2 = x + nx.dropout(y, self.dropout, rng, training)
        y2 = self.feature(mixer_norm(x2))
        return x2 + nx.dropout(y2, self.dropout, rng, training)

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, p in self.temporal.parameters():
            yield f"temporal.{name}", p
        for name, p in self.feature.parameters():
            yield f"feature.{name}", p


def mixer_forward(x, p: Mixer, training: bool = False, rng=None) -> Tensor:
    return p(x, training, rng)


class Branch:
    """Maps one coefficient series (..., C, L_i) to predicted coefficients (..., C, T_i)."""

    def __init__(self, input_len: int, horizon: int, patch: PatchConfig, embed: Linear,
                 mixers: list[Mixer], head: Linear):
        self.input_len = input_len
        self.horizon = horizon
        self.patch = patch
        self.num_patches = patch.num_patches(input_len)
        self.embed = embed
        self.mixers = mixers
        self.head = head
        d = embed.weight.shape[1]
        if head.weight.shape != (self.num_patches * d, horizon):
            raise ShapeError(
                f"head maps {head.weight.shape}, expected ({self.num_patches * d}, {horizon})")

    @classmethod
    def create(cls, input_len: int, horizon: int, patch: PatchConfig, d_model: int,
               tfactor: int, dfactor: int, dropout: float, grid: SplineGrid,
               temporal_kind: str, feature_kind: str, rng: np.random.Generator) -> "Branch":
        n = patch.num_patches(input_len)
        embed = Linear.create(patch.patch, d_model, rng)
        mixers = [
            Mixer(make_stack(temporal_kind, [n, tfactor * n, n], grid, rng),
                  make_stack(feature_kind, [d_model, dfactor * d_model, d_model], grid, rng),
                  dropout)
            for _ in range(2)
        ]
        head = Linear.create(n * d_model, horizon, rng)
        return cls(input_len, horizon, patch, embed, mixers, head)

    def __call__(self, x, training: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[Tensor, RevinState]:
        x = as_tensor(x)
        if x.shape[-1] != self.input_len:
            raise ShapeError(f"branch expects length {self.input_len}, got {x.shape}")
        xn, state = revin_norm(x, axis=-1)
        xd = patch_and_embed(xn, self.patch, self.embed)
        h = xd
        for mixer in self.mixers:
            h = mixer(h, training, rng)
        y = xd + h
        flat = nx.reshape(y, y.shape[:-2] + (y.shape[-2] * y.shape[-1],))
        return revin_denorm(self.head(flat), state), state

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, p in self.embed.parameters():
            yield f"embed.{name}", p
        for k, mixer in enumerate(self.mixers):
            for name, p in mixer.parameters():
                yield f"mixer{k + 1}.{name}", p
        for name, p in self.head.parameters():
            yield f"head.{name}", p

    def kan_layers(self) -> list[tuple[str, str, int, KanLayer]]:
        """``(mixer name, stack name, layer index, layer)`` for every KAN layer."""
        out = []
        for k, mixer in enumerate(self.mixers):
            for stack_name in ("temporal", "feature"):
                for j, layer in enumerate(getattr(mixer, stack_name).kan_layers()):
                    out.append((f"KAN Mixer {k + 1}", stack_name, j, layer))
        return out


def branch_forward(x, p: Branch, training: bool = False, rng=None):
    return p(x, training, rng)
