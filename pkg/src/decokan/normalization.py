"""Reversible instance normalization and the parameter-free mixer norm."""
from __future__ import annotations

from dataclasses import dataclass

from . import numerics as nx
from .numerics import Tensor, as_tensor

REVIN_EPS = 1e-6
REVIN_MIN_STD = 1e-4
MIXER_EPS = 1e-5


class RevinStateError(ValueError):
    pass


@dataclass
class RevinState:
    """Per-(sample, channel) statistics kept for the inverse map.

    ``mean`` and ``std`` keep a singleton on the reduced axis so they broadcast
    straight back against the series.
    """

    mean: Tensor
    std: Tensor
    axis: int

    @property
    def channel_axis(self) -> int:
        return -1 if self.axis == -2 else -2

    @property
    def channels(self) -> int:
        return self.mean.shape[self.channel_axis]


def revin_norm(x, axis: int = -2) -> tuple[Tensor, RevinState]:
    """Standardize each channel over ``axis`` (time).

    The default ``axis=-2`` suits time-major ``(..., L, C)`` input; pass
    ``axis=-1`` for channel-first ``(..., C, L)`` series.
    """
    if axis not in (-1, -2):
        raise ValueError("revin_norm reduces over axis -1 or -2")
    x = as_tensor(x)
    mu = nx.mean(x, axis=axis, keepdims=True)
    centered = x - mu
    var = nx.mean(nx.square(centered), axis=axis, keepdims=True)
    std = nx.maximum(nx.sqrt(var + REVIN_EPS), REVIN_MIN_STD)
    return centered / std, RevinState(mu, std, axis)


def revin_denorm(y, state: RevinState) -> Tensor:
    y = as_tensor(y)
    ax = state.channel_axis
    if y.ndim < 2 or y.shape[ax] != state.mean.shape[ax]:
        raise RevinStateError(
            f"state holds {state.mean.shape[ax]} channels, input shape is {y.shape}")
    return y * state.std + state.mean


def mixer_norm(x) -> Tensor:
    """Layer-statistic normalization over the last axis, no gain or bias."""
    return nx.layer_norm(x, MIXER_EPS)
