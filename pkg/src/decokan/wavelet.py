"""Multi-level Daubechies DWT / IDWT with half-point symmetric extension.

Analysis and synthesis are linear in the signal, so each level is applied as
a (cached) matrix product on the last axis; the tape then gets exact adjoints
for free. The matrices are built from the direct filter-bank routines
:func:`analysis_step` and :func:`synthesis_step`, which are also usable on
plain arrays.

Lengths follow the usual symmetric-mode convention: one analysis level maps
``n`` samples to ``(n + F - 1) // 2`` coefficients and one synthesis level
maps ``n`` coefficient pairs to ``2 n - F + 2`` samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .numerics import Tensor, as_tensor, matmul, take

__all__ = [
    "WaveletFilterBank", "CoefficientSet", "DecompositionDepthError",
    "ReconstructionError", "get_wavelet", "coefficient_length",
    "coefficient_lengths", "analysis_step", "synthesis_step",
    "dwt_multilevel", "idwt_multilevel",
]


class DecompositionDepthError(ValueError):
    pass


class ReconstructionError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletFilterBank:
    name: str
    dec_lo: tuple[float, ...]
    dec_hi: tuple[float, ...]
    rec_lo: tuple[float, ...]
    rec_hi: tuple[float, ...]

    @property
    def filter_len(self) -> int:
        return len(self.dec_lo)

    @classmethod
    def from_lowpass(cls, name: str, dec_lo) -> "WaveletFilterBank":
        lo = tuple(float(v) for v in dec_lo)
        n = len(lo)
        hi = tuple((-1) ** k * lo[n - 1 - k] for k in range(n))
        return cls(name, lo, hi, lo[::-1], hi[::-1])


_S3 = math.sqrt(3.0)
_DB2_REC = [(1 + _S3), (3 + _S3), (3 - _S3), (1 - _S3)]
_DB2_DEC_LO = [v / (4 * math.sqrt(2.0)) for v in reversed(_DB2_REC)]

_DB4_DEC_LO = [
    -0.010597401785069032, 0.0328830116668852, 0.030841381835560764,
    -0.18703481171909309, -0.027983769416859854, 0.6308807679298589,
    0.7148465705529157, 0.2303778133088965,
]

_BANKS = {
    "db2": WaveletFilterBank.from_lowpass("db2", _DB2_DEC_LO),
    "db4": WaveletFilterBank.from_lowpass("db4", _DB4_DEC_LO),
}


def get_wavelet(name: str) -> WaveletFilterBank:
    try:
        return _BANKS[name]
    except KeyError:
        raise ValueError(f"unsupported wavelet {name!r}; choose from {sorted(_BANKS)}") from None


def coefficient_length(input_len: int, bank: WaveletFilterBank) -> int:
    return (input_len + bank.filter_len - 1) // 2


def coefficient_lengths(input_len: int, bank: WaveletFilterBank, level: int) -> list[int]:
    """Lengths ``[L_1, ..., L_m]`` of successive analysis levels."""
    out, n = [], input_len
    for _ in range(level):
        n = coefficient_length(n, bank)
        out.append(n)
    return out


# ---------------------------------------------------------------------------
# direct filter-bank routines on arrays (last axis)


def analysis_step(x: np.ndarray, bank: WaveletFilterBank) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    F = bank.filter_len
    pad = [(0, 0)] * (x.ndim - 1) + [(F - 1, F - 1)]
    xp = np.pad(x, pad, mode="symmetric")
    lead = x.shape[:-1]
    flat = xp.reshape(-1, xp.shape[-1])
    lo = np.stack([np.convolve(r, bank.dec_lo, mode="valid")[1::2] for r in flat])
    hi = np.stack([np.convolve(r, bank.dec_hi, mode="valid")[1::2] for r in flat])
    n = lo.shape[-1]
    return lo.reshape(lead + (n,)), hi.reshape(lead + (n,))


def synthesis_step(approx: np.ndarray, detail: np.ndarray, bank: WaveletFilterBank) -> np.ndarray:
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    if approx.shape != detail.shape:
        raise ReconstructionError(f"approx/detail shapes differ: {approx.shape} vs {detail.shape}")
    F = bank.filter_len
    n = approx.shape[-1]
    out_len = 2 * n - F + 2
    if out_len < 1:
        raise ReconstructionError(f"{n} coefficients are too few for filter length {F}")
    lead = approx.shape[:-1]
    a2 = approx.reshape(-1, n)
    d2 = detail.reshape(-1, n)
    rows = []
    for a, d in zip(a2, d2):
        ua = np.zeros(2 * n)
        ud = np.zeros(2 * n)
        ua[::2] = a
        ud[::2] = d
        full = np.convolve(ua, bank.rec_lo) + np.convolve(ud, bank.rec_hi)
        rows.append(full[F - 2:F - 2 + out_len])
    return np.stack(rows).reshape(lead + (out_len,))


@lru_cache(maxsize=256)
def _analysis_matrices(name: str, n: int) -> tuple[np.ndarray, np.ndarray]:
    bank = get_wavelet(name)
    lo, hi = analysis_step(np.eye(n), bank)
    # row j is the response to a unit impulse at sample j: shape (in, out)
    lo.setflags(write=False)
    hi.setflags(write=False)
    return lo, hi


@lru_cache(maxsize=256)
def _synthesis_matrices(name: str, n: int, out_len: int) -> tuple[np.ndarray, np.ndarray]:
    bank = get_wavelet(name)
    eye, zero = np.eye(n), np.zeros((n, n))
    ra = synthesis_step(eye, zero, bank)[:, :out_len]
    rd = synthesis_step(zero, eye, bank)[:, :out_len]
    ra.setflags(write=False)
    rd.setflags(write=False)
    return ra, rd


# ---------------------------------------------------------------------------
# multi-level transforms on tensors


@dataclass
class CoefficientSet:
    """Approximation at the coarsest level plus details ordered coarse-to-fine."""

    approx: Tensor
    details: list[Tensor] = field(default_factory=list)

    @property
    def level(self) -> int:
        return len(self.details)

    def series(self) -> list[Tensor]:
        return [self.approx, *self.details]

    def lengths(self) -> list[int]:
        return [s.shape[-1] for s in self.series()]


def dwt_multilevel(x, bank: WaveletFilterBank, level: int) -> CoefficientSet:
    """Decompose along the last axis into ``level + 1`` coefficient series."""
    if level < 1:
        raise DecompositionDepthError("decomposition level must be >= 1")
    x = as_tensor(x)
    n = x.shape[-1]
    lengths = coefficient_lengths(n, bank, level)
    if min(lengths) < bank.filter_len:
        raise DecompositionDepthError(
            f"length {n} supports fewer than {level} levels of {bank.name}: "
            f"coefficient lengths {lengths} drop below filter length {bank.filter_len}")
    details = []
    cur = x
    for _ in range(level):
        lo, hi = _analysis_matrices(bank.name, cur.shape[-1])
        details.append(matmul(cur, hi))
        cur = matmul(cur, lo)
    return CoefficientSet(cur, details[::-1])


def idwt_multilevel(coeffs: CoefficientSet, bank: WaveletFilterBank, target_len: int) -> Tensor:
    """Invert :func:`dwt_multilevel`, returning exactly ``target_len`` samples."""
    cur = as_tensor(coeffs.approx)
    details = [as_tensor(d) for d in coeffs.details]
    if not details:
        raise ReconstructionError("coefficient set has no detail series")
    for k, d in enumerate(details):
        n = d.shape[-1]
        if cur.shape[-1] not in (n, n + 1):
            raise ReconstructionError(
                f"approximation length {cur.shape[-1]} inconsistent with detail length {n}")
        if cur.shape[-1] == n + 1:
            cur = take(cur, np.arange(n))
        full = 2 * n - bank.filter_len + 2
        want = details[k + 1].shape[-1] if k + 1 < len(details) else target_len
        if full < want:
            raise ReconstructionError(
                f"level with {n} coefficients yields {full} samples, fewer than {want}")
        ra, rd = _synthesis_matrices(bank.name, n, want)
        cur = matmul(cur, ra) + matmul(d, rd)
    return cur
