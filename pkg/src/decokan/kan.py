"""KAN linear layers: per-edge ``w_b * silu(x) + w_s * sum_j c_j B_j(x)``.

The knot grid is fixed and uniform on ``[lo, hi]`` with ``order`` extension
knots on each side, so a layer has ``grid_size + order`` basis functions per
edge. Inputs beyond the extended span see all-zero bases.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import numerics as nx
from .numerics import ShapeError, Tensor, as_tensor

__all__ = [
    "SplineGrid", "KanLayer", "KanLayerParams", "KanStack", "bspline_basis",
    "bspline_basis_array", "kan_linear_forward", "edge_activation",
    "regularization_loss", "init_kan_layer",
]


@dataclass(frozen=True)
class SplineGrid:
    grid_size: int = 5
    order: int = 3
    lo: float = -1.0
    hi: float = 1.0

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.order

    @property
    def spacing(self) -> float:
        return (self.hi - self.lo) / self.grid_size

    @property
    def knots(self) -> np.ndarray:
        k = np.arange(-self.order, self.grid_size + self.order + 1, dtype=np.float64)
        return self.lo + k * self.spacing


def bspline_basis_array(x: np.ndarray, grid: SplineGrid) -> tuple[np.ndarray, np.ndarray]:
    """Cox-de Boor values and x-derivatives, each of shape ``x.shape + (n_basis,)``."""
    # uniform knots: work in knot units u = (x - t_0) / h, where the
    # recursion reads B_{j,k} = (u - j)/k B_{j,k-1} + (j + k + 1 - u)/k B_{j+1,k-1}
    t = grid.knots
    h = grid.spacing
    u = ((np.asarray(x, dtype=np.float64) - t[0]) / h)[..., None]
    j = np.arange(len(t) - 1, dtype=np.float64)
    b = ((u >= j) & (u < j + 1)).astype(np.float64)
    prev = b
    for k in range(1, grid.order + 1):
        prev = b
        jk = j[:-k]
        b = ((u - jk) * b[..., :-1] + (jk + k + 1 - u) * b[..., 1:]) * (1.0 / k)
    if grid.order == 0:
        return b, np.zeros_like(b)
    # d/dx B_{j,k} = (B_{j,k-1} - B_{j+1,k-1}) / h on a uniform grid
    return b, (prev[..., :-1] - prev[..., 1:]) * (1.0 / h)


def bspline_basis(x, grid: SplineGrid) -> Tensor:
    x = as_tensor(x)
    vals, deriv = bspline_basis_array(x.data, grid)
    return nx.apply(vals, (x,), (lambda g: (g * deriv).sum(axis=-1),))


class KanLayer:
    """One KANLinear layer. ``mask`` (out x in, bool) zeroes pruned edges."""

    def __init__(self, base_weight, spline_scale, spline_coeffs, grid: SplineGrid):
        self.base_weight = _param(base_weight, "base_weight")
        self.spline_scale = _param(spline_scale, "spline_scale")
        self.spline_coeffs = _param(spline_coeffs, "spline_coeffs")
        self.grid = grid
        self.mask: np.ndarray | None = None
        out_dim, in_dim = self.base_weight.shape
        if self.spline_scale.shape != (out_dim, in_dim) or \
                self.spline_coeffs.shape != (out_dim, in_dim, grid.n_basis):
            raise ShapeError("inconsistent KAN parameter shapes")

    @property
    def in_dim(self) -> int:
        return self.base_weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.base_weight.shape[0]

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        yield "base_weight", self.base_weight
        yield "spline_scale", self.spline_scale
        yield "spline_coeffs", self.spline_coeffs

    def __call__(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"KAN layer expects trailing dim {self.in_dim}, got {x.shape}")
        wb, ws = self.base_weight, self.spline_scale
        if self.mask is not None:
            m = self.mask.astype(np.float64)
            wb, ws = wb * m, ws * m
        nb = self.grid.n_basis
        w_spline = (nx.reshape(ws, ws.shape + (1,)) * self.spline_coeffs)
        w_spline = nx.reshape(w_spline, (self.out_dim, self.in_dim * nb))
        base = nx.matmul(nx.silu(x), nx.permute(wb, (1, 0)))
        basis = bspline_basis(x, self.grid)
        basis = nx.reshape(basis, x.shape[:-1] + (self.in_dim * nb,))
        return base + nx.matmul(basis, nx.permute(w_spline, (1, 0)))

    def edge_activations(self, xs: np.ndarray, masked: bool = True) -> np.ndarray:
        """All edge curves on the sample points ``xs``: shape (out, in, n).

        ``masked=False`` ignores any pruning mask and returns the raw curves.
        """
        xs = np.asarray(xs, dtype=np.float64)
        silu = nx.silu(xs).data
        basis, _ = bspline_basis_array(xs, self.grid)
        spline = np.einsum("oij,nj->oin", self.spline_coeffs.data, basis)
        phi = (self.base_weight.data[..., None] * silu
               + self.spline_scale.data[..., None] * spline)
        if masked and self.mask is not None:
            phi = phi * self.mask[..., None]
        return phi

    def edge_activation(self, o: int, i: int, xs) -> np.ndarray:
        if not (0 <= o < self.out_dim and 0 <= i < self.in_dim):
            raise IndexError(f"edge ({o}, {i}) outside {self.out_dim}x{self.in_dim} layer")
        xs = np.asarray(xs, dtype=np.float64)
        if self.mask is not None and not self.mask[o, i]:
            return np.zeros_like(xs)
        basis, _ = bspline_basis_array(xs, self.grid)
        return (self.base_weight.data[o, i] * nx.silu(xs).data
                + self.spline_scale.data[o, i] * (basis @ self.spline_coeffs.data[o, i]))

    def regularization(self, l1: float = 1.0, entropy: float = 1.0) -> Tensor:
        """``l1 * sum_edges mean_j |c_j| + entropy * sum_edges H(|c| / sum |c|)``."""
        mag = nx.abs(self.spline_coeffs)
        avg = nx.mean(mag, axis=-1)
        total = nx.sum(mag, axis=-1, keepdims=True)
        p = mag / nx.maximum(total, 1e-300)
        ent = -nx.sum(nx.xlogx(p), axis=-1)
        return l1 * nx.sum(avg) + entropy * nx.sum(ent)


KanLayerParams = KanLayer


def _param(value, name: str) -> Tensor:
    if isinstance(value, Tensor):
        value.requires_grad = True
        value.name = name
        return value
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def init_kan_layer(in_dim: int, out_dim: int, grid: SplineGrid | None = None, seed=None) -> KanLayer:
    """Fan-in uniform base weights, unit spline scales, small Gaussian coefficients."""
    if in_dim < 1 or out_dim < 1:
        raise ValueError("KAN layer dims must be >= 1")
    grid = grid or SplineGrid()
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(in_dim)
    wb = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    ws = np.ones((out_dim, in_dim))
    c = rng.normal(0.0, 0.1 / np.sqrt(grid.n_basis), size=(out_dim, in_dim, grid.n_basis))
    return KanLayer(wb, ws, c, grid)


class KanStack:
    """KAN layers chained ``in -> hidden -> ... -> out``."""

    def __init__(self, layers: list[KanLayer]):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(f"layer widths do not chain: {a.out_dim} -> {b.in_dim}")
        self.layers = layers

    @classmethod
    def create(cls, widths: list[int], grid: SplineGrid, rng: np.random.Generator) -> "KanStack":
        return cls([init_kan_layer(a, b, grid, rng) for a, b in zip(widths, widths[1:])])

    def __call__(self, x) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def parameters(self) -> Iterator[tuple[str, Tensor]]:
        for k, layer in enumerate(self.layers):
            for name, p in layer.parameters():
                yield f"layers.{k}.{name}", p

    def kan_layers(self) -> list[KanLayer]:
        return list(self.layers)


# functional aliases mirroring the layer methods

def kan_linear_forward(x, p: KanLayer) -> Tensor:
    return p(x)


def edge_activation(p: KanLayer, o: int, i: int, xs) -> np.ndarray:
    return p.edge_activation(o, i, xs)


def regularization_loss(p: KanLayer, l1: float = 1.0, entropy: float = 1.0) -> Tensor:
    return p.regularization(l1, entropy)
