"""Post-training pruning of KAN edges and symbolic fitting of the survivors.

Edge strength is the RMS of the edge curve phi over a fixed sample grid, so
the threshold tau is in activation units. Symbolic fits use the even grid
points for fitting and report R^2 on the odd (held-out) points.
"""
from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .kan import KanLayer

DEFAULT_TAU = 0.05
DEFAULT_TOP_K = 10
TIE_R2 = 1e-3
DEGENERATE_SS = 1e-12


def default_sample_grid(n: int = 512, lo: float = -1.5, hi: float = 1.5) -> np.ndarray:
    return np.linspace(lo, hi, n)


# ---------------------------------------------------------------------------
# pruning

@dataclass
class LayerMask:
    branch: str
    mixer: str
    stack: str
    layer_index: int
    norms: np.ndarray
    kept: np.ndarray

    @property
    def total(self) -> int:
        return int(self.kept.size)

    @property
    def preserved(self) -> int:
        return int(self.kept.sum())


@dataclass(frozen=True)
class PruneStats:
    total: int
    pruned: int

    @property
    def preserved(self) -> int:
        return self.total - self.pruned

    @property
    def ratio(self) -> float:
        return self.pruned / self.total if self.total else 0.0

    @property
    def ratio_text(self) -> str:
        return format_ratio(self.pruned, self.total)


def format_ratio(pruned: int, total: int) -> str:
    return f"{100.0 * pruned / total:.2f}%" if total else "0.00%"


@dataclass
class PruneMask:
    tau: float
    layers: list[LayerMask]

    def branch_stats(self) -> dict[str, PruneStats]:
        out: dict[str, list[int]] = {}
        for lm in self.layers:
            tot = out.setdefault(lm.branch, [0, 0])
            tot[0] += lm.total
            tot[1] += lm.total - lm.preserved
        return {name: PruneStats(t, p) for name, (t, p) in out.items()}

    def overall(self) -> PruneStats:
        stats = self.branch_stats().values()
        return PruneStats(sum(s.total for s in stats), sum(s.pruned for s in stats))

    def kept_edges(self) -> set[tuple[str, str, str, int, int, int]]:
        """``(branch, mixer, stack, layer, j_out, i_in)`` for every kept edge."""
        return {(lm.branch, lm.mixer, lm.stack, lm.layer_index, int(o), int(i))
                for lm in self.layers for o, i in zip(*np.nonzero(lm.kept))}

    def table_rows(self) -> list[list[str]]:
        rows = [[name, f"{s.total:,}", f"{s.pruned:,}", f"{s.preserved:,}", s.ratio_text]
                for name, s in self.branch_stats().items()]
        o = self.overall()
        rows.append(["Overall Model", f"{o.total:,}", f"{o.pruned:,}", f"{o.preserved:,}", o.ratio_text])
        return rows


PRUNE_HEADER = ["Branch", "Total", "Pruned", "Preserved", "Prune Ratio"]


def edge_norms(layer: KanLayer, sample_grid: np.ndarray) -> np.ndarray:
    """RMS of every unmasked edge curve over the grid: shape (out, in)."""
    phi = layer.edge_activations(sample_grid, masked=False)
    return np.sqrt(np.mean(phi * phi, axis=-1))


def prune(model, tau: float = DEFAULT_TAU, sample_grid: np.ndarray | None = None,
          apply: bool = True) -> PruneMask:
    """Mask every KAN edge whose RMS activation is below ``tau``.

    With ``apply`` the masks are installed on the layers, so later forwards
    see pruned edges as exact zeros.
    """
    if tau < 0:
        raise ValueError("tau must be >= 0")
    grid = default_sample_grid() if sample_grid is None else np.asarray(sample_grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("sample grid is empty")
    layers = []
    for branch, mixer, stack, j, layer in model.kan_layers():
        norms = edge_norms(layer, grid)
        kept = norms >= tau
        layers.append(LayerMask(branch, mixer, stack, j, norms, kept))
        if apply:
            layer.mask = kept
    return PruneMask(tau, layers)


# ---------------------------------------------------------------------------
# candidate library

FREQ_STARTS = np.linspace(0.25, 4.0, 16)
FREQ_BOUNDS = (1e-6, 8.0)


def _fmt(v: float) -> str:
    return repr(float(v))


def _join(terms: list[tuple[float, str]], precise: bool) -> str:
    """Render ``sum coef * term``; ``term`` of '' is the constant."""
    out = ""
    for coef, term in terms:
        s = _fmt(abs(coef)) if precise else f"{abs(coef):.3f}"
        body = s if not term else (f"{s}*{term}" if precise else f"{s}{term}")
        if not out:
            out = ("-" if coef < 0 else "") + body
        else:
            out += (" - " if coef < 0 else " + ") + body
    return out or "0"


def _lin(v: float, precise: bool, var: str = "x", shift: float | None = None) -> str:
    """``v*x + shift`` inside a function argument."""
    s = _join([(v, var)] + ([(shift, "")] if shift is not None else []), precise)
    return s


def _pow_term(k: int, precise: bool) -> str:
    if k == 0:
        return ""
    if k == 1:
        return "x"
    return f"x**{k}" if precise else f"x^{k}"


@dataclass(frozen=True)
class Family:
    name: str
    n_params: int
    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    fit: Callable[[np.ndarray, np.ndarray], np.ndarray]
    render: Callable[[np.ndarray, bool], str]
    lower: tuple[float, ...] = ()
    upper: tuple[float, ...] = ()


def _poly_family(deg: int, name: str) -> Family:
    # params are highest degree first, as written in formulas
    def evaluate(p, x):
        return np.polyval(p, x)

    def fit(x, y):
        return np.linalg.lstsq(np.vander(x, deg + 1), y, rcond=None)[0]

    def render(p, precise):
        return _join([(c, _pow_term(deg - k, precise)) for k, c in enumerate(p)], precise)

    return Family(name, deg + 1, evaluate, fit, render)


def _lstsq_batch(cols: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least squares for a stack of designs ``cols`` (S, n, q); returns (coef, sse)."""
    coef = np.einsum("sqn,n->sq", np.linalg.pinv(cols), y)
    resid = y - np.einsum("snq,sq->sn", cols, coef)
    return coef, np.einsum("sn,sn->s", resid, resid)


def _refine(evaluate, jac, x, y, starts: list[np.ndarray], lower, upper) -> np.ndarray:
    best, best_cost = None, math.inf
    for p0 in starts:
        p0 = np.clip(p0, np.asarray(lower) + 1e-12, np.asarray(upper) - 1e-12)
        try:
            res = least_squares(lambda p: evaluate(p, x) - y, p0, jac=lambda p: jac(p, x),
                                bounds=(lower, upper), method="trf", x_scale="jac",
                                max_nfev=MAX_NFEV)
        except (ValueError, FloatingPointError):
            continue
        cost = float(np.sum((evaluate(res.x, x) - y) ** 2))
        if math.isfinite(cost) and cost < best_cost:
            best, best_cost = res.x, cost
    if best is None:
        return starts[0]
    return best


MAX_NFEV = 100


def _top(sse: np.ndarray, k: int = 3) -> np.ndarray:
    return np.argsort(sse, kind="stable")[:k]


# a*sin(b*x + c)
def _sin_eval(p, x):
    return p[0] * np.sin(p[1] * x + p[2])


def _sin_jac(p, x):
    u = p[1] * x + p[2]
    c = np.cos(u)
    return np.stack([np.sin(u), p[0] * x * c, p[0] * c], axis=-1)


def _sin_fit(x, y):
    b = FREQ_STARTS
    cols = np.stack([np.sin(np.outer(b, x)), np.cos(np.outer(b, x))], axis=-1)
    coef, sse = _lstsq_batch(cols, y)
    starts = [np.array([math.hypot(*coef[s]), b[s], math.atan2(coef[s, 1], coef[s, 0])])
              for s in _top(sse)]
    return _canonical_phase(_refine(_sin_eval, _sin_jac, x, y, starts, *SIN_BOUNDS))


# a*cos(b*x + c)
def _cos_eval(p, x):
    return p[0] * np.cos(p[1] * x + p[2])


def _cos_jac(p, x):
    u = p[1] * x + p[2]
    s = np.sin(u)
    return np.stack([np.cos(u), -p[0] * x * s, -p[0] * s], axis=-1)


def _cos_fit(x, y):
    b = FREQ_STARTS
    cols = np.stack([np.cos(np.outer(b, x)), np.sin(np.outer(b, x))], axis=-1)
    coef, sse = _lstsq_batch(cols, y)
    starts = [np.array([math.hypot(*coef[s]), b[s], math.atan2(-coef[s, 1], coef[s, 0])])
              for s in _top(sse)]
    return _canonical_phase(_refine(_cos_eval, _cos_jac, x, y, starts, *SIN_BOUNDS))


SIN_BOUNDS = ((-np.inf, FREQ_BOUNDS[0], -np.inf), (np.inf, FREQ_BOUNDS[1], np.inf))


def _canonical_phase(p: np.ndarray) -> np.ndarray:
    """Move the phase (p[2]) into [-pi/2, pi/2] by flipping the amplitude sign."""
    p = np.array(p, dtype=np.float64)
    c = math.remainder(p[2], 2 * math.pi)
    if abs(c) > math.pi / 2:
        c -= math.copysign(math.pi, c)
        p[0] = -p[0]
    p[2] = c
    return p


# a*sin(b*x + c) + d*cos(e*x)
def _sincos_eval(p, x):
    return p[0] * np.sin(p[1] * x + p[2]) + p[3] * np.cos(p[4] * x)


def _sincos_jac(p, x):
    u = p[1] * x + p[2]
    cu = np.cos(u)
    v = p[4] * x
    return np.stack([np.sin(u), p[0] * x * cu, p[0] * cu, np.cos(v), -p[3] * x * np.sin(v)], axis=-1)


def _sincos_fit(x, y):
    bb, ee = np.meshgrid(FREQ_STARTS, FREQ_STARTS, indexing="ij")
    bb, ee = bb.ravel(), ee.ravel()
    cols = np.stack([np.sin(np.outer(bb, x)), np.cos(np.outer(bb, x)),
                     np.cos(np.outer(ee, x))], axis=-1)
    coef, sse = _lstsq_batch(cols, y)
    starts = [np.array([math.hypot(coef[s, 0], coef[s, 1]), bb[s],
                        math.atan2(coef[s, 1], coef[s, 0]), coef[s, 2], ee[s]])
              for s in _top(sse, 4)]
    lo = (-np.inf, FREQ_BOUNDS[0], -np.inf, -np.inf, FREQ_BOUNDS[0])
    hi = (np.inf, FREQ_BOUNDS[1], np.inf, np.inf, FREQ_BOUNDS[1])
    return _canonical_phase(_refine(_sincos_eval, _sincos_jac, x, y, starts, lo, hi))


# a*tanh(b*x + c)
def _tanh_eval(p, x):
    return p[0] * np.tanh(p[1] * x + p[2])


TANH_SHIFTS = np.linspace(-2.0, 2.0, 9)


def _tanh_jac(p, x):
    t = np.tanh(p[1] * x + p[2])
    sech2 = 1.0 - t * t
    return np.stack([t, p[0] * x * sech2, p[0] * sech2], axis=-1)


def _tanh_fit(x, y):
    bb, cc = np.meshgrid(FREQ_STARTS, TANH_SHIFTS, indexing="ij")
    bb, cc = bb.ravel(), cc.ravel()
    cols = np.tanh(np.outer(bb, x) + cc[:, None])[..., None]
    coef, sse = _lstsq_batch(cols, y)
    starts = [np.array([coef[s, 0], bb[s], cc[s]]) for s in _top(sse)]
    lo = (-np.inf, FREQ_BOUNDS[0], -10.0)
    hi = (np.inf, FREQ_BOUNDS[1], 10.0)
    return _refine(_tanh_eval, _tanh_jac, x, y, starts, lo, hi)


# a*exp(b*x) + c
def _exp_eval(p, x):
    return p[0] * np.exp(p[1] * x) + p[2]


def _exp_jac(p, x):
    e = np.exp(p[1] * x)
    return np.stack([e, p[0] * x * e, np.ones_like(x)], axis=-1)


def _exp_fit(x, y):
    b = np.concatenate([-FREQ_STARTS[::-1], FREQ_STARTS])
    cols = np.stack([np.exp(np.outer(b, x)), np.ones((len(b), len(x)))], axis=-1)
    coef, sse = _lstsq_batch(cols, y)
    starts = [np.array([coef[s, 0], b[s], coef[s, 1]]) for s in _top(sse)]
    return _refine(_exp_eval, _exp_jac, x, y, starts, (-np.inf, -8.0, -np.inf), (np.inf, 8.0, np.inf))


# a*log(x - b) + c, with b kept below every sample so the log is defined
def _log_eval(p, x):
    return p[0] * np.log(np.maximum(x - p[1], 1e-300)) + p[2]


def _log_jac(p, x):
    d = np.maximum(x - p[1], 1e-300)
    return np.stack([np.log(d), -p[0] / d, np.ones_like(x)], axis=-1)


def _log_fit(x, y):
    xmin = float(np.min(x))
    b = xmin - np.logspace(-3, 1, 12)
    cols = np.stack([np.log(x[None, :] - b[:, None]), np.ones((len(b), len(x)))], axis=-1)
    coef, sse = _lstsq_batch(cols, y)
    starts = [np.array([coef[s, 0], b[s], coef[s, 1]]) for s in _top(sse)]
    lo = (-np.inf, xmin - 1e3, -np.inf)
    hi = (np.inf, xmin - 1e-6, np.inf)
    return _refine(_log_eval, _log_jac, x, y, starts, lo, hi)


def _render_sin(p, precise, fn="sin"):
    return _join([(p[0], f"{fn}({_lin(p[1], precise, shift=p[2])})")], precise)


def _render_sincos(p, precise):
    return _join([(p[0], f"sin({_lin(p[1], precise, shift=p[2])})"),
                  (p[3], f"cos({_lin(p[4], precise)})")], precise)


def _render_tanh(p, precise):
    return _join([(p[0], f"tanh({_lin(p[1], precise, shift=p[2])})")], precise)


def _render_exp(p, precise):
    return _join([(p[0], f"exp({_lin(p[1], precise)})"), (p[2], "")], precise)


def _render_log(p, precise):
    shift = _fmt(abs(p[1])) if precise else f"{abs(p[1]):.3f}"
    arg = f"x {'-' if p[1] >= 0 else '+'} {shift}"
    return _join([(p[0], f"log({arg})"), (p[2], "")], precise)


LIBRARY: tuple[Family, ...] = (
    _poly_family(0, "constant"),
    _poly_family(1, "affine"),
    _poly_family(2, "poly2"),
    _poly_family(3, "poly3"),
    _poly_family(4, "poly4"),
    Family("sin", 3, _sin_eval, _sin_fit, _render_sin),
    Family("cos", 3, _cos_eval, _cos_fit, lambda p, pr: _render_sin(p, pr, "cos")),
    Family("sincos", 5, _sincos_eval, _sincos_fit, _render_sincos),
    Family("tanh", 3, _tanh_eval, _tanh_fit, _render_tanh),
    Family("exp", 3, _exp_eval, _exp_fit, _render_exp),
    Family("log", 3, _log_eval, _log_fit, _render_log),
)
FAMILIES = {f.name: f for f in LIBRARY}


# ---------------------------------------------------------------------------
# symbolic fitting

def r2_score(y: np.ndarray, yhat: np.ndarray) -> float:
    """Coefficient of determination clamped to [0, 1].

    A constant target fitted exactly (both sums of squares below 1e-12) has
    R^2 = 1.
    """
    y, yhat = np.asarray(y, dtype=np.float64), np.asarray(yhat, dtype=np.float64)
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if not math.isfinite(ss_res):
        return 0.0
    if ss_tot < DEGENERATE_SS:
        return 1.0 if ss_res < DEGENERATE_SS else 0.0
    return float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))


@dataclass(frozen=True)
class CurveFit:
    family: str
    params: tuple[float, ...]
    formula: str
    r2: float

    @property
    def pretty(self) -> str:
        return FAMILIES[self.family].render(np.asarray(self.params), False)

    def __call__(self, x) -> np.ndarray:
        return FAMILIES[self.family].evaluate(np.asarray(self.params), np.asarray(x, dtype=np.float64))


def split_grid(xs: np.ndarray, ys: np.ndarray):
    """Even-index points for fitting, odd-index points for scoring."""
    return xs[0::2], ys[0::2], xs[1::2], ys[1::2]


def fit_family(family: Family, xs: np.ndarray, ys: np.ndarray) -> CurveFit:
    xf, yf, xh, yh = split_grid(np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64))
    with np.errstate(all="ignore"):
        p = np.asarray(family.fit(xf, yf), dtype=np.float64)
        r2 = r2_score(yh, family.evaluate(p, xh))
    return CurveFit(family.name, tuple(float(v) for v in p), family.render(p, True), r2)


def select(fits: Sequence[CurveFit]) -> CurveFit:
    """Best R^2, preferring fewer parameters among fits within ``TIE_R2`` of it."""
    best = max(f.r2 for f in fits)
    close = [f for f in fits if best - f.r2 < TIE_R2]
    fewest = min(FAMILIES[f.family].n_params for f in close)
    close = [f for f in close if FAMILIES[f.family].n_params == fewest]
    return max(close, key=lambda f: f.r2)  # max keeps the first of equal scores


def fit_curve(xs: np.ndarray, ys: np.ndarray,
              library: Sequence[Family] = LIBRARY) -> CurveFit:
    """Fit every library family to one sampled curve and pick the winner.

    A family is skipped once an earlier family with no more parameters scores
    R^2 = 1 exactly: it could at best tie, and ties go to the earlier family.
    """
    fits: list[CurveFit] = []
    for fam in library:
        if any(f.r2 == 1.0 and FAMILIES[f.family].n_params <= fam.n_params for f in fits):
            continue
        fits.append(fit_family(fam, xs, ys))
    return select(fits)


@dataclass(frozen=True)
class SymbolicFit:
    branch: str
    mixer: str
    stack: str
    layer_index: int
    i: int
    j: int
    family: str
    params: tuple[float, ...]
    formula: str
    r2: float

    @property
    def pretty(self) -> str:
        return FAMILIES[self.family].render(np.asarray(self.params), False)

    def __call__(self, x) -> np.ndarray:
        return FAMILIES[self.family].evaluate(np.asarray(self.params), np.asarray(x, dtype=np.float64))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DECOKAN_THREADS", "1")))
    except ValueError:
        return 1


def symbolify(model, mask: PruneMask, library: Sequence[Family] = LIBRARY,
              sample_grid: np.ndarray | None = None, max_edges: int | None = None) -> list[SymbolicFit]:
    """Fit every kept edge and return the fits ranked by descending R^2.

    ``max_edges`` limits fitting to the strongest kept edges by RMS norm, which
    keeps large models tractable; ``None`` fits all of them.
    """
    grid = default_sample_grid() if sample_grid is None else np.asarray(sample_grid, dtype=np.float64)
    layers = {(b, mx, st, j): layer for b, mx, st, j, layer in model.kan_layers()}
    jobs = []
    for lm in mask.layers:
        layer = layers[(lm.branch, lm.mixer, lm.stack, lm.layer_index)]
        phi = layer.edge_activations(grid, masked=False)
        for o, i in zip(*np.nonzero(lm.kept)):
            jobs.append((float(lm.norms[o, i]), lm, int(o), int(i), phi[o, i]))
    if max_edges is not None:
        order = sorted(range(len(jobs)), key=lambda k: -jobs[k][0])[:max_edges]
        jobs = [jobs[k] for k in sorted(order)]

    def run(job):
        _, lm, o, i, ys = job
        fit = fit_curve(grid, ys, library)
        return SymbolicFit(lm.branch, lm.mixer, lm.stack, lm.layer_index, i, o,
                           fit.family, fit.params, fit.formula, fit.r2)

    workers = min(_threads(), max(1, len(jobs)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            fits = list(pool.map(run, jobs))
    else:
        fits = [run(job) for job in jobs]
    return rank(fits)


def rank(fits: Sequence[SymbolicFit]) -> list[SymbolicFit]:
    return sorted(fits, key=lambda f: -f.r2)


# ---------------------------------------------------------------------------
# reports

SYMBOLIC_HEADER = ["Branch", "KAN Mixer", "Layer i", "Layer j", "Symbolic Formula", "R²"]
CSV_HEADER = ["branch", "mixer", "stack", "stack_layer", "layer_i", "layer_j", "family",
              "formula", "r2"]


@dataclass
class SymbolicReport:
    prune_rows: list[list[str]]
    fits: list[SymbolicFit]
    top_k: int
    tau: float = DEFAULT_TAU
    extra: dict = field(default_factory=dict)

    def top(self) -> list[SymbolicFit]:
        return self.fits[:self.top_k]

    def symbolic_rows(self) -> list[list[str]]:
        return [[f"{f.branch} Branch", f.mixer, str(f.i), str(f.j), f.pretty, f"{f.r2:.4f}"]
                for f in self.top()]

    def symbolic_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for f in self.top():
            w.writerow([f.branch, f.mixer, f.stack, f.layer_index, f.i, f.j, f.family,
                        f.formula, repr(f.r2)])
        return buf.getvalue()

    def prune_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(PRUNE_HEADER)
        w.writerows([[r[0], r[1].replace(",", ""), r[2].replace(",", ""),
                      r[3].replace(",", ""), r[4]] for r in self.prune_rows])
        return buf.getvalue()

    def text(self) -> str:
        parts = [f"Pruning statistics (tau = {self.tau:g})",
                 render_table(PRUNE_HEADER, self.prune_rows), "",
                 "Top symbolic formulas (ranked by R²)",
                 render_table(SYMBOLIC_HEADER, self.symbolic_rows())]
        return "\n".join(parts) + "\n"


def emit_report(mask: PruneMask, fits: Sequence[SymbolicFit],
                top_k: int = DEFAULT_TOP_K) -> SymbolicReport:
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    return SymbolicReport(mask.table_rows(), rank(fits), top_k, mask.tau)


def render_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max([len(h)] + [len(r[k]) for r in rows]) for k, h in enumerate(header)]

    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    rule = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([line(header), rule] + [line(r) for r in rows])
