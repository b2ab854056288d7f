"""Derandomized construction of a warp with controlled partial-sum response.

The random object is an increasing self-map of [0, 1] drawn by midpoint
recursion with per-point budgets from the Haar profile of the target
function (see randhomeo and haar). Conditioning proceeds rank by rank: at
rank n every dyadic midpoint of the pinned rank-(n-1) grid owns a window
inside its image cell, the window is halved a few times, each halving
keeping the half that lowers the discrete Dirichlet responses of the
conditional expectation, and the point is then pinned at the window
midpoint before the next rank opens.

Two expectation engines back this up and are deliberately kept separate.

* Window comparisons and the averaging identity use a closed-form engine.
  Every rank strictly below the active one is frozen at its conditional
  center, which makes the conditional map affine in the one live
  coordinate; the integral of f along a window then reduces to exact
  rational-quadratic panels, and the identity
  (upper + lower) / 2 = whole window holds by additivity up to roundoff.
* Deviation records and diagnostics use an honest quadrature engine that
  integrates several untouched ranks per point with Gauss-Legendre nodes
  before freezing the rest. A seeded Monte-Carlo sampler with exact grid
  marginals guards it; disagreement raises NumericalAlarm.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .fourier import partial_sum_values
from .grid import PLHomeo, ResolutionError, SampledFunction, _readonly
from .haar import ConfinementMap, confinement_map, normalize_sup
from .rng import tagged_generator
from .signs import SignMatrix, solve_hierarchical

__all__ = [
    "NumericalAlarm",
    "DeviationRecord",
    "DerandConfig",
    "DerandState",
    "RunResult",
    "default_degrees",
    "assemble_v_matrix",
    "expected_composition",
    "mc_cross_check",
    "choose_halves",
    "advance",
    "run",
    "write_deviation_table",
    "record_shape_check",
]


class NumericalAlarm(RuntimeError):
    """An internal cross-check failed; context carries the numbers."""

    def __init__(self, message: str, **context):
        detail = ", ".join(f"{k}={v}" for k, v in context.items())
        super().__init__(f"{message} ({detail})" if detail else message)
        self.context = dict(context)


@dataclass(frozen=True)
class DeviationRecord:
    """Sup norm of S_r applied to the change of the conditional expectation
    produced by one window halving at (rank n, halving step ell)."""

    n: int
    ell: int
    r: int
    sup_dev: float


def write_deviation_table(records, path) -> str:
    """CSV emission at 12 significant digits, stable byte-for-byte."""
    lines = ["n,ell,r,sup_dev"]
    for rec in records:
        lines.append(f"{rec.n},{rec.ell},{rec.r},{rec.sup_dev:.12g}")
    text = "\n".join(lines) + "\n"
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text


def record_shape_check(records) -> dict:
    """Decay-of-influence diagnostic over a run's deviation records.

    Within each (n, ell) group the degrees are binned by the integer
    distance round(|n - log2 r|) and each bin keeps its largest sup_dev.
    A halving at rank n should disturb degrees near 2**n the most, so the
    bin maxima ought to fall off with distance; the report counts how many
    adjacent bin pairs are nonincreasing across all groups. Groups whose
    deviations sit below fp noise are skipped rather than counted as flat.
    """
    groups: dict[tuple, dict] = {}
    for rec in records:
        b = int(round(abs(rec.n - math.log2(rec.r))))
        g = groups.setdefault((rec.n, rec.ell), {})
        g[b] = max(g.get(b, 0.0), rec.sup_dev)
    pairs = 0
    good = 0
    for g in groups.values():
        if max(g.values(), default=0.0) < 1e-13:
            continue
        bins = sorted(g)
        for a, b in zip(bins, bins[1:]):
            pairs += 1
            if g[b] <= g[a] * (1.0 + 1e-12):
                good += 1
    frac = good / pairs if pairs else 1.0
    return {"pairs": pairs, "nonincreasing": good, "fraction": frac, "passed": frac >= 0.9}


def default_degrees(n_max: int, m: int) -> tuple[int, ...]:
    """Dyadic ladder 1 .. 2**(n_max+2) plus three rounded quarter-octave
    stops per octave, all strictly below the degree limit 2**(m-1)."""
    cap = 1 << (m - 1)
    top = n_max + 2
    out = set()
    for p in range(top + 1):
        if (1 << p) < cap:
            out.add(1 << p)
        if p < top:
            for frac in (0.25, 0.5, 0.75):
                r = round(2.0 ** (p + frac))
                if 1 <= r < cap:
                    out.add(r)
    return tuple(sorted(out))


def _resolve_degrees(degrees, m: int, n_hint: int) -> tuple[int, ...]:
    if degrees is None:
        degrees = default_degrees(n_hint, m)
    out = sorted(set(int(r) for r in degrees))
    if not out or out[0] < 1:
        raise ValueError("degrees must be positive integers")
    if out[-1] >= (1 << (m - 1)):
        raise ResolutionError(f"degree {out[-1]} too large for a 2**{m} grid")
    return tuple(out)


@dataclass(frozen=True)
class DerandConfig:
    """Knobs for the halving loop and both expectation engines.

    ell_max and j_tol stop the halving loop: a rank is pinned after ell_max
    halvings or once every window is below j_tol times its image cell.
    degrees=None tracks the default ladder. Rows of the functional matrix
    whose largest entry is below row_tol are dropped before the sign
    search; columns whose largest kept entry is below null_tol carry no
    signal and shrink to their concentric middle half instead of obeying a
    sign. The value-engine tuples give Gauss-Legendre node counts for the
    live window (panels x nodes) and for each untouched rank below the
    active one; ranks past the tuple are frozen at conditional centers."""

    ell_max: int = 6
    j_tol: float = 2.0**-20
    degrees: tuple | None = None
    row_tol: float = 1e-6
    null_tol: float = 1e-12
    identity_tol: float = 1e-6
    solver_block: int = 8
    solver_retries: int = 64
    solver_seed: int = 0
    solver_lam: float = 0.5
    q_floor_exponent: float = 0.25
    mc_check: bool = True
    mc_samples: int = 10000
    mc_seed: int = 2718
    mc_floor: float = 1e-4
    mc_exceed_frac: float = 0.10
    shallow_rank_max: int = 3
    y_panels_shallow: int = 16
    y_panels_deep: int = 4
    y_nodes: int = 4
    level_nodes_shallow: tuple = (8, 4, 2, 2)
    level_nodes_deep: tuple = (8, 2)

    def __post_init__(self):
        if not (isinstance(self.ell_max, int) and self.ell_max >= 0):
            raise ValueError("ell_max must be a nonnegative integer")
        if not (0.0 < self.j_tol < 1.0):
            raise ValueError("j_tol must lie in (0, 1)")
        for name in ("row_tol", "null_tol", "identity_tol", "mc_floor"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not (0.0 <= self.mc_exceed_frac <= 1.0):
            raise ValueError("mc_exceed_frac must lie in [0, 1]")
        for name in ("y_panels_shallow", "y_panels_deep", "y_nodes", "mc_samples"):
            if not (isinstance(getattr(self, name), int) and getattr(self, name) >= 1):
                raise ValueError(f"{name} must be a positive integer")
        for name in ("level_nodes_shallow", "level_nodes_deep"):
            tup = tuple(getattr(self, name))
            if any((not isinstance(k, int)) or k < 1 for k in tup):
                raise ValueError(f"{name} must hold positive integers")
            object.__setattr__(self, name, tup)
        if self.degrees is not None:
            object.__setattr__(self, "degrees", tuple(int(r) for r in self.degrees))

    def value_plan(self, rank: int) -> tuple[int, int, tuple]:
        if rank <= self.shallow_rank_max:
            return self.y_panels_shallow, self.y_nodes, self.level_nodes_shallow
        return self.y_panels_deep, self.y_nodes, self.level_nodes_deep


@dataclass(frozen=True)
class DerandState:
    """Partially pinned midpoint recursion.

    fixed_y holds the images of the rank-(n_active - 1) grid including both
    endpoints; j_lo/j_hi bound the live rank-n_active midpoints, one window
    per cell, nested inside the cell image. phase flips to "final" once
    every tracked rank is pinned, after which homeo() is available."""

    f: SampledFunction
    q: ConfinementMap
    n_active: int
    ell: int
    fixed_y: np.ndarray
    j_lo: np.ndarray
    j_hi: np.ndarray
    phase: str = "active"

    def __post_init__(self):
        if not isinstance(self.f, SampledFunction):
            raise TypeError("f must be a SampledFunction")
        if not isinstance(self.q, ConfinementMap):
            raise TypeError("q must be a ConfinementMap")
        if self.q.floor_exponent is None and self.q.depth < self.f.m:
            raise ValueError("budget map must carry a floor or reach the grid depth")
        if not (isinstance(self.n_active, int) and 1 <= self.n_active <= self.f.m):
            raise ValueError(f"active rank out of range: {self.n_active}")
        if not (isinstance(self.ell, int) and self.ell >= 0):
            raise ValueError("ell must be a nonnegative integer")
        if self.phase not in ("active", "final"):
            raise ValueError(f"unknown phase {self.phase!r}")
        y = _readonly(self.fixed_y)
        lo = _readonly(self.j_lo)
        hi = _readonly(self.j_hi)
        cells = 1 << (self.n_active - 1)
        if y.shape != (cells + 1,):
            raise ValueError(f"expected {cells + 1} pinned images, got {y.shape}")
        if y[0] != 0.0 or y[-1] != 1.0 or not np.all(np.diff(y) > 0.0):
            raise ValueError("pinned images must increase strictly from 0 to 1")
        if self.phase == "final":
            if lo.size or hi.size:
                raise ValueError("final states carry no windows")
        else:
            if lo.shape != (cells,) or hi.shape != (cells,):
                raise ValueError(f"expected {cells} windows, got {lo.shape}/{hi.shape}")
            if not np.all(lo < hi):
                raise ValueError("windows must have positive length")
            if not (np.all(lo >= y[:-1]) and np.all(hi <= y[1:])):
                raise ValueError("windows must nest inside their image cells")
        object.__setattr__(self, "fixed_y", y)
        object.__setattr__(self, "j_lo", lo)
        object.__setattr__(self, "j_hi", hi)

    @classmethod
    def initial(cls, f: SampledFunction, q: ConfinementMap) -> "DerandState":
        """Rank 1 opened: one window around 1/2, concentric in [0, 1]."""
        q1 = q.value(1, 1)
        return cls(
            f,
            q,
            1,
            0,
            np.array([0.0, 1.0]),
            np.array([max(0.5 - 0.5 * q1, 0.0)]),
            np.array([min(0.5 + 0.5 * q1, 1.0)]),
        )

    def homeo(self) -> PLHomeo:
        if self.phase != "final":
            raise ValueError("map not fully pinned yet")
        x = np.arange(self.fixed_y.size) / (self.fixed_y.size - 1)
        return PLHomeo(x, self.fixed_y)


# --- shared lookup tables ----------------------------------------------------


class _PLTable:
    """Piecewise-linear interpolant of the samples plus its antiderivative.

    Piece p covers [p, p+1] / 2**m; F is the exact integral of the
    interpolant from 0, so window means of f are quotients of F values."""

    __slots__ = ("m", "size", "values", "slopes", "cum")

    def __init__(self, f: SampledFunction):
        self.m = f.m
        self.size = 1 << f.m
        v = np.asarray(f.values, dtype=float)
        nxt = np.roll(v, -1)
        self.values = v
        self.slopes = (nxt - v) * self.size
        self.cum = np.concatenate([[0.0], np.cumsum((v + nxt) * (0.5 / self.size))])

    def piece(self, u):
        return np.clip((np.asarray(u) * self.size).astype(np.int64), 0, self.size - 1)

    def f_at(self, u, p=None):
        if p is None:
            p = self.piece(u)
        return self.values[p] + self.slopes[p] * (u - p / self.size)

    def F_at(self, u, p=None):
        if p is None:
            p = self.piece(u)
        du = u - p / self.size
        return self.cum[p] + (self.values[p] + 0.5 * self.slopes[p] * du) * du

    def mean_F(self, ulo, uhi):
        """Mean of f over [ulo, uhi]; pointwise value when the window is
        too short for the quotient to be trustworthy."""
        ulo = np.asarray(ulo, dtype=float)
        uhi = np.asarray(uhi, dtype=float)
        w = uhi - ulo
        tiny = w <= 1e-13
        out = (self.F_at(uhi) - self.F_at(ulo)) / np.where(tiny, 1.0, w)
        if np.any(tiny):
            out = np.where(tiny, self.f_at(0.5 * (ulo + uhi)), out)
        return out


def _q_table(q: ConfinementMap, m: int) -> np.ndarray:
    """Budget at every grid index 1 .. 2**m - 1, indexed by position."""
    out = np.zeros((1 << m) + 1)
    for rank in range(1, m + 1):
        step = 1 << (m - rank)
        out[step :: 2 * step] = q.rank_values(rank)
    return out


def _rank_table(m: int) -> np.ndarray:
    out = np.zeros((1 << m) + 1, dtype=np.int64)
    for rank in range(1, m + 1):
        step = 1 << (m - rank)
        out[step :: 2 * step] = rank
    return out


# --- closed-form window engine -----------------------------------------------
#
# For a grid point t strictly inside the active cell, freezing every deeper
# rank at its conditional center makes the image of t's own rank window a
# pair of lines u(z) = origin + c * z in the live coordinate z, and the
# conditional value of f at t is (F(u_hi) - F(u_lo)) / (u_hi - u_lo). Its
# integral over a window in z splits into panels at the f-node crossings of
# either line; on each panel the numerator is one quadratic, expanded at the
# panel's left edge so nothing cancels, and the integral is elementary.


def _ranges(counts: np.ndarray) -> np.ndarray:
    total = int(counts.sum())
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return np.arange(total) - np.repeat(starts, counts)


def _crossing_counts(size, origin, c, z1, z2):
    ua = origin + c * z1
    ub = origin + c * z2
    lo = np.minimum(ua, ub)
    hi = np.maximum(ua, ub)
    first = np.floor(lo * size).astype(np.int64) + 1
    last = np.ceil(hi * size).astype(np.int64) - 1
    cnt = np.where(c != 0.0, np.maximum(last - first + 1, 0), 0)
    return cnt, first


def _integrate_block(table, origin, c_hi, c_lo, z1, z2):
    size = table.size
    T = origin.size
    cnt1, first1 = _crossing_counts(size, origin, c_hi, z1, z2)
    cnt2, first2 = _crossing_counts(size, origin, c_lo, z1, z2)
    counts = 2 + cnt1 + cnt2
    cum = np.concatenate([[0], np.cumsum(counts)])
    z_flat = np.empty(int(cum[-1]))
    pos0 = cum[:-1]
    z_flat[pos0] = z1
    z_flat[pos0 + 1] = z2
    for cnt, first, c, base in ((cnt1, first1, c_hi, 2), (cnt2, first2, c_lo, None)):
        if base is None:
            offs = pos0 + 2 + cnt1
        else:
            offs = pos0 + base
        rr = _ranges(cnt)
        nodes = np.repeat(first, cnt) + rr
        zc = (nodes / size - np.repeat(origin, cnt)) / np.repeat(c, cnt)
        zc = np.clip(zc, np.repeat(z1, cnt), np.repeat(z2, cnt))
        z_flat[np.repeat(offs, cnt) + rr] = zc
    t_id = np.repeat(np.arange(T), counts)
    order = np.lexsort((z_flat, t_id))
    zs = z_flat[order]
    ts = t_id[order]
    W = zs[1:] - zs[:-1]
    keep = (ts[:-1] == ts[1:]) & (W > 0.0)
    pt = ts[:-1][keep]
    zA = zs[:-1][keep]
    W = W[keep]

    O = origin[pt]
    ch = c_hi[pt]
    cl = c_lo[pt]
    zm = zA + 0.5 * W
    p1 = table.piece(O + ch * zm)
    p2 = table.piece(O + cl * zm)
    u1 = O + ch * zA
    u2 = O + cl * zA
    n0 = table.F_at(u1, p1) - table.F_at(u2, p2)
    n1 = table.f_at(u1, p1) * ch - table.f_at(u2, p2) * cl
    n2 = 0.5 * (table.slopes[p1] * ch * ch - table.slopes[p2] * cl * cl)
    panel = W * (n1 - n2 * zA + 0.5 * n2 * W)
    inner = zA > 0.0
    if np.any(inner):
        # at zA == 0 both lines start at the origin, so the log coefficient
        # n0 - n1 zA + n2 zA**2 vanishes identically and the term drops
        K = n0[inner] - zA[inner] * (n1[inner] - zA[inner] * n2[inner])
        panel[inner] += K * np.log1p(W[inner] / zA[inner])
    return np.bincount(pt, weights=panel, minlength=T) / (c_hi - c_lo)


def _half_window_integrals(table, origin, c_hi, c_lo, z1, z2, max_edges=1_500_000):
    """Per-point integral over [z1, z2] of the window mean of f along the
    line pair (origin, c_hi), (origin, c_lo), chunked to bound memory."""
    T = origin.size
    out = np.zeros(T)
    if T == 0:
        return out
    cnt1, _ = _crossing_counts(table.size, origin, c_hi, z1, z2)
    cnt2, _ = _crossing_counts(table.size, origin, c_lo, z1, z2)
    cum = np.concatenate([[0], np.cumsum(2 + cnt1 + cnt2)])
    start = 0
    while start < T:
        stop = int(np.searchsorted(cum, cum[start] + max_edges, side="right")) - 1
        stop = min(max(stop, start + 1), T)
        sl = slice(start, stop)
        out[sl] = _integrate_block(table, origin[sl], c_hi[sl], c_lo[sl], z1[sl], z2[sl])
        start = stop
    return out


def _window_profile(table, qtab, ranktab, n, gl, gd, gr, a, b, y1, y2):
    """Conditional expectation of f(warp(t)) for grid t inside one cell,
    the live midpoint image averaged over [y1, y2], everything deeper
    frozen at conditional centers (each point keeps its own window mean)."""
    span = y2 - y1
    out = np.empty(gr - gl - 1)
    mid_pos = gd - gl - 1
    out[mid_pos] = table.mean_F(np.array([y1]), np.array([y2]))[0]
    left = np.arange(gl + 1, gd)
    if left.size:
        s = (left - gl) / (gd - gl)
        width = qtab[left] * np.exp2(n - ranktab[left]).astype(float)
        out[:mid_pos] = (
            _half_window_integrals(
                table,
                np.full(left.size, a),
                s + width,
                s - width,
                np.full(left.size, y1 - a),
                np.full(left.size, y2 - a),
            )
            / span
        )
    right = np.arange(gd + 1, gr)
    if right.size:
        s = (gr - right) / (gr - gd)
        width = qtab[right] * np.exp2(n - ranktab[right]).astype(float)
        out[mid_pos + 1 :] = (
            _half_window_integrals(
                table,
                np.full(right.size, b),
                width - s,
                -(s + width),
                np.full(right.size, b - y2),
                np.full(right.size, b - y1),
            )
            / span
        )
    return out


def _fold_degrees(profile: np.ndarray, degrees, pts: int) -> np.ndarray:
    """Discrete partial sums of a full-grid profile at the pts evenly spaced
    sample points, one row per degree. Degrees must be sorted ascending; the
    spectrum folds incrementally so the sweep costs one pass."""
    M = profile.size
    c = np.fft.fft(profile) / M
    ks = (np.arange(M) + M // 2) % M - M // 2
    order = np.argsort(np.abs(ks), kind="stable")
    sorted_abs = np.abs(ks)[order]
    folded = np.zeros(pts, dtype=complex)
    out = np.empty((len(degrees), pts))
    prev = 0
    for row, r in enumerate(degrees):
        hi = int(np.searchsorted(sorted_abs, r, side="right"))
        if hi > prev:
            sel = order[prev:hi]
            np.add.at(folded, ks[sel] % pts, c[sel])
            prev = hi
        out[row] = (np.fft.ifft(folded) * pts).real
    return out


def _assemble(state: DerandState, degrees, cfg: DerandConfig):
    """Functional matrix of one halving step plus the averaging-identity
    residual, measured on the same folded entries the matrix is made of."""
    f = state.f
    m = f.m
    n = state.n_active
    table = _PLTable(f)
    qtab = _q_table(state.q, m)
    ranktab = _rank_table(m)
    M = 1 << m
    pts = 1 << n
    cells = 1 << (n - 1)
    vals = np.empty((len(degrees) * pts, cells))
    ident = 0.0
    buf = np.zeros(M)
    for i in range(cells):
        gl = i << (m - n + 1)
        gr = gl + (1 << (m - n + 1))
        gd = (gl + gr) >> 1
        a = float(state.fixed_y[i])
        b = float(state.fixed_y[i + 1])
        y1 = float(state.j_lo[i])
        y2 = float(state.j_hi[i])
        ym = 0.5 * (y1 + y2)
        g_full = _window_profile(table, qtab, ranktab, n, gl, gd, gr, a, b, y1, y2)
        g_up = _window_profile(table, qtab, ranktab, n, gl, gd, gr, a, b, ym, y2)
        g_dn = _window_profile(table, qtab, ranktab, n, gl, gd, gr, a, b, y1, ym)
        buf[gl + 1 : gr] = 0.5 * (g_up - g_dn)
        vals[:, i] = _fold_degrees(buf, degrees, pts).ravel()
        buf[gl + 1 : gr] = 0.5 * (g_up + g_dn) - g_full
        ident = max(ident, float(np.max(np.abs(_fold_degrees(buf, degrees, pts)))))
        buf[gl + 1 : gr] = 0.0
    row_ids = tuple((r, j) for r in degrees for j in range(pts))
    return vals, row_ids, ident


def assemble_v_matrix(state: DerandState, degrees=None, config: DerandConfig | None = None) -> SignMatrix:
    """Rows are (degree, sample point) functionals, columns the live
    midpoints; entry = the response gained by conditioning the midpoint
    into its upper window half rather than the lower one. Rows whose best
    entry is below row_tol are dropped."""
    cfg = config if config is not None else DerandConfig()
    if state.phase != "active":
        raise ValueError("no live windows to compare in a final state")
    degrees = _resolve_degrees(degrees if degrees is not None else cfg.degrees, state.f.m, state.n_active)
    vals, row_ids, ident = _assemble(state, degrees, cfg)
    if ident > cfg.identity_tol:
        raise NumericalAlarm(
            "averaging identity residual too large",
            n=state.n_active,
            ell=state.ell,
            residual=ident,
            tol=cfg.identity_tol,
        )
    keep = np.max(np.abs(vals), axis=1) >= cfg.row_tol
    kept_ids = tuple(rid for rid, flag in zip(row_ids, keep) if flag)
    return SignMatrix(vals[keep], kept_ids, dist="circular")


# --- quadrature value engine ---------------------------------------------------

_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_nodes(k: int):
    if k not in _GL_CACHE:
        _GL_CACHE[k] = np.polynomial.legendre.leggauss(k)
    return _GL_CACHE[k]


_UNIT_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _composite_unit(budget: int):
    """Composite two-point Gauss rule on [-1, 1] with about `budget` nodes.
    Piecewise-linear integrands keep kinks at every scale, so spreading a
    fixed budget over panels beats one high-order rule on the whole window;
    weights sum to 2 to match the plain rule's normalization."""
    if budget not in _UNIT_CACHE:
        panels = max(1, (budget + 1) // 2)
        nodes, wts = _gl_nodes(2) if budget > 1 else _gl_nodes(1)
        edges = -1.0 + 2.0 * np.arange(panels + 1) / panels
        mids = 0.5 * (edges[:-1] + edges[1:])
        half = 1.0 / panels
        xs = (mids[:, None] + half * nodes[None, :]).ravel()
        ws = np.tile(wts * half, panels)
        _UNIT_CACHE[budget] = (xs, ws)
    return _UNIT_CACHE[budget]


def _composite_gl(y1, y2, panels, k):
    nodes, wts = _gl_nodes(k)
    edges = y1 + (y2 - y1) * np.arange(panels + 1) / panels
    mids = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * (edges[1:] - edges[:-1])
    ys = (mids[:, None] + half[:, None] * nodes[None, :]).ravel()
    ws = np.tile(wts * 0.5, panels) / panels
    return ys, ws


_FREEZE_CHUNK = 2_000_000


_PATH_CHUNK = 600_000


def _cell_expectation(E, table, qtab, state, i, plan):
    m = table.m
    n = state.n_active
    y_panels, y_nodes, level_nodes = plan
    gl = i << (m - n + 1)
    gr = gl + (1 << (m - n + 1))
    gd = (gl + gr) >> 1
    E[gd] = table.mean_F(np.array([state.j_lo[i]]), np.array([state.j_hi[i]]))[0]

    ys, ws = _composite_gl(float(state.j_lo[i]), float(state.j_hi[i]), y_panels, y_nodes)
    # the tree below is independent per live-coordinate node, so chunking
    # the nodes bounds peak memory no matter how rich the node tuples are
    growth = 1
    for k in level_nodes:
        growth *= 2 * _composite_unit(k)[0].size
    step = max(1, _PATH_CHUNK // max(growth, 1))
    for start in range(0, ys.size, step):
        _cell_subtree(
            E, table, qtab, state, i, level_nodes, ys[start : start + step], ws[start : start + step]
        )


def _cell_subtree(E, table, qtab, state, i, level_nodes, ys, ws):
    m = table.m
    n = state.n_active
    a = float(state.fixed_y[i])
    b = float(state.fixed_y[i + 1])
    gl = i << (m - n + 1)
    gr = gl + (1 << (m - n + 1))
    gd = (gl + gr) >> 1
    lo = np.concatenate([np.full(ys.size, a), ys])
    hi = np.concatenate([ys, np.full(ys.size, b)])
    w = np.concatenate([ws, ws])
    xl = np.concatenate(
        [np.full(ys.size, gl, dtype=np.int64), np.full(ys.size, gd, dtype=np.int64)]
    )
    seg = 1 << (m - n)  # segment width in grid units
    levels = min(len(level_nodes), m - n)
    for j in range(levels):
        half = seg >> 1
        mid_x = xl + half
        centers = 0.5 * (lo + hi)
        hw = 0.5 * qtab[mid_x] * (hi - lo)
        np.add.at(E, mid_x, w * table.mean_F(centers - hw, centers + hw))
        if j == levels - 1 and half <= 1:
            return  # nothing deeper than the emitted midpoints
        nodes, wts = _composite_unit(level_nodes[j])
        k = nodes.size
        u = (centers[:, None] + hw[:, None] * nodes[None, :]).ravel()
        cw = (w[:, None] * (wts[None, :] * 0.5)).ravel()
        lo = np.concatenate([np.repeat(lo, k), u])
        hi = np.concatenate([u, np.repeat(hi, k)])
        w = np.concatenate([cw, cw])
        xl = np.concatenate([np.repeat(xl, k), np.repeat(mid_x, k)])
        seg = half
    if seg < 2 or lo.size == 0:
        return
    # ranks past the quadrature tuple: ancestors frozen at conditional
    # centers, each point still integrated exactly over its own window
    deltas = np.arange(1, seg)
    lowbit = deltas & -deltas
    frac = deltas / seg
    sc = lowbit / seg
    rows = max(1, _FREEZE_CHUNK // seg)
    for start in range(0, lo.size, rows):
        sl = slice(start, min(start + rows, lo.size))
        span = (hi[sl] - lo[sl])[:, None]
        g = xl[sl][:, None] + deltas[None, :]
        pos = lo[sl][:, None] + span * frac[None, :]
        hw = qtab[g] * span * sc[None, :]
        vals = table.mean_F(pos - hw, pos + hw)
        np.add.at(E, g.ravel(), (w[sl][:, None] * vals).ravel())


def _value_profile(state: DerandState, cfg: DerandConfig) -> np.ndarray:
    f = state.f
    m = f.m
    n = state.n_active
    table = _PLTable(f)
    qtab = _q_table(state.q, m)
    E = np.zeros(1 << m)
    coarse = np.arange(state.fixed_y.size - 1) << (m - n + 1)
    E[coarse] = table.f_at(state.fixed_y[:-1])
    plan = cfg.value_plan(n)
    for i in range(state.fixed_y.size - 1):
        _cell_expectation(E, table, qtab, state, i, plan)
    return E


def expected_composition(
    state: DerandState, m_out: int | None = None, config: DerandConfig | None = None
) -> SampledFunction:
    """Pointwise conditional expectation of f(warp(t)) on the output grid.

    Final states compose exactly; active states run the quadrature engine
    at the sample resolution of f and subsample if a coarser grid is asked
    for. Output above the resolution of f is refused while windows are
    still live."""
    cfg = config if config is not None else DerandConfig()
    m_out = state.f.m if m_out is None else int(m_out)
    if state.phase == "final":
        from .grid import compose

        return compose(state.f, state.homeo(), m_out)
    if m_out > state.f.m:
        raise ResolutionError("cannot refine past the sample grid of f while windows are live")
    profile = _value_profile(state, cfg)
    if m_out < state.f.m:
        profile = profile[:: 1 << (state.f.m - m_out)]
    return SampledFunction(m_out, profile)


# --- Monte-Carlo guard ---------------------------------------------------------


def _mc_profile(state: DerandState, n_samples: int, seed: int, batch: int = 512):
    """Seeded sampler of the conditioned law; grid marginals are exact, so
    this is the reference the quadrature engine must match."""
    f = state.f
    m = f.m
    size = 1 << m
    n = state.n_active
    table = _PLTable(f)
    qtab = _q_table(state.q, m)
    gen = tagged_generator(seed, 0xEC, n)
    coarse = np.arange(state.fixed_y.size) << (m - n + 1)
    d_idx = coarse[:-1] + (1 << (m - n))
    acc = np.zeros(size)
    acc2 = np.zeros(size)
    done = 0
    while done < n_samples:
        bsz = min(batch, n_samples - done)
        Y = np.empty((bsz, size + 1))
        Y[:, coarse] = state.fixed_y[None, :]
        u = gen.random((bsz, d_idx.size))
        Y[:, d_idx] = state.j_lo[None, :] + (state.j_hi - state.j_lo)[None, :] * u
        for rank in range(n + 1, m + 1):
            step = 1 << (m - rank)
            mids = np.arange(step, size, 2 * step)
            qv = qtab[mids][None, :]
            lo = Y[:, mids - step]
            hi = Y[:, mids + step]
            u = gen.random((bsz, mids.size))
            Y[:, mids] = lo + (hi - lo) * (0.5 * (1.0 - qv) + qv * u)
        vals = table.f_at(Y[:, :size].ravel()).reshape(bsz, size)
        acc += vals.sum(axis=0)
        acc2 += (vals * vals).sum(axis=0)
        done += bsz
    mean = acc / n_samples
    var = np.maximum(acc2 / n_samples - mean * mean, 0.0)
    se = np.sqrt(var / max(n_samples - 1, 1))
    return mean, se


def mc_cross_check(
    state: DerandState, config: DerandConfig | None = None, seed: int | None = None
) -> dict:
    """Quadrature profile against the seeded sampler.

    Two gates. The grid-mean discrepancy must sit within three standard
    errors (plus a small relative floor). Pointwise, each value gets six
    standard errors; inputs with kinks or jumps legitimately overrun that
    in thin bands around their images, so the gate bounds the fraction of
    offending points rather than the worst one. A genuine indexing or
    window bug shifts whole cells and trips both immediately."""
    cfg = config if config is not None else DerandConfig()
    quad = _value_profile(state, cfg)
    mean, se = _mc_profile(state, cfg.mc_samples, cfg.mc_seed if seed is None else seed)
    diff = np.abs(quad - mean)
    floor = cfg.mc_floor * max(state.f.sup_norm(), 1e-30)
    mean_gap = float(np.mean(diff))
    mean_gate = 3.0 * float(np.mean(se)) + floor
    exceed_frac = float(np.mean(diff > 6.0 * se + floor))
    report = {
        "n": state.n_active,
        "ell": state.ell,
        "samples": cfg.mc_samples,
        "mean_abs_diff": mean_gap,
        "mean_gate": mean_gate,
        "max_abs_diff": float(np.max(diff)),
        "exceed_frac": exceed_frac,
        "floor": floor,
    }
    if mean_gap > mean_gate or exceed_frac > cfg.mc_exceed_frac:
        raise NumericalAlarm("quadrature and Monte-Carlo disagree", **report)
    return report


# --- the halving loop ----------------------------------------------------------


def _choose_step(state, cfg, degrees, prof_old):
    vals, row_ids, ident = _assemble(state, degrees, cfg)
    if ident > cfg.identity_tol:
        raise NumericalAlarm(
            "averaging identity residual too large",
            n=state.n_active,
            ell=state.ell,
            residual=ident,
            tol=cfg.identity_tol,
        )
    cells = vals.shape[1]
    keep = np.max(np.abs(vals), axis=1) >= cfg.row_tol
    kept = vals[keep]
    if kept.shape[0]:
        null_cols = np.max(np.abs(kept), axis=0) < cfg.null_tol
    else:
        null_cols = np.ones(cells, dtype=bool)
    eps = np.ones(cells, dtype=np.int8)
    if kept.shape[0] and not null_cols.all():
        matrix = SignMatrix(kept, tuple(rid for rid, fl in zip(row_ids, keep) if fl))
        eps = solve_hierarchical(
            matrix,
            block=cfg.solver_block,
            retries=cfg.solver_retries,
            seed=cfg.solver_seed + 131071 * state.n_active + 127 * state.ell,
            lam=cfg.solver_lam,
        ).eps
    lo = state.j_lo
    hi = state.j_hi
    mid = 0.5 * (lo + hi)
    quarter = 0.25 * (hi - lo)
    # +1 conditions into the upper half; columns without signal shrink
    # concentrically so that silence never biases the midpoint
    new_lo = np.where(null_cols, mid - quarter, np.where(eps > 0, mid, lo))
    new_hi = np.where(null_cols, mid + quarter, np.where(eps > 0, hi, mid))
    new_state = dataclasses.replace(state, ell=state.ell + 1, j_lo=new_lo, j_hi=new_hi)
    prof_new = _value_profile(new_state, cfg)
    spec = np.fft.fft(prof_new - prof_old)
    records = [
        DeviationRecord(
            state.n_active, state.ell, r, float(np.max(np.abs(partial_sum_values(spec, r))))
        )
        for r in degrees
    ]
    return new_state, prof_new, records, ident


def choose_halves(
    state: DerandState, config: DerandConfig | None = None, degrees=None
) -> tuple[DerandState, list[DeviationRecord], float]:
    """One halving of every live window, signs picked jointly from the
    functional matrix. Returns the new state, one deviation record per
    tracked degree, and the averaging-identity residual of the step."""
    cfg = config if config is not None else DerandConfig()
    if state.phase != "active":
        raise ValueError("no live windows to halve in a final state")
    degrees = _resolve_degrees(degrees if degrees is not None else cfg.degrees, state.f.m, state.n_active)
    prof_old = _value_profile(state, cfg)
    new_state, _, records, ident = _choose_step(state, cfg, degrees, prof_old)
    return new_state, records, ident


def _windows_converged(state: DerandState, cfg: DerandConfig) -> bool:
    widths = state.j_hi - state.j_lo
    return bool(np.all(widths < cfg.j_tol * np.diff(state.fixed_y)))


def _fix_and_promote(state: DerandState) -> DerandState:
    if state.n_active + 1 > state.f.m:
        raise ResolutionError("next rank would outrun the sample grid of f")
    mids = 0.5 * (state.j_lo + state.j_hi)
    y = np.empty(2 * state.fixed_y.size - 1)
    y[0::2] = state.fixed_y
    y[1::2] = mids
    n_new = state.n_active + 1
    qv = state.q.rank_values(n_new)
    centers = 0.5 * (y[:-1] + y[1:])
    half = 0.5 * qv * np.diff(y)
    j_lo = np.maximum(centers - half, y[:-1])
    j_hi = np.minimum(centers + half, y[1:])
    return dataclasses.replace(
        state, n_active=n_new, ell=0, fixed_y=y, j_lo=j_lo, j_hi=j_hi
    )


def advance(
    state: DerandState, config: DerandConfig | None = None, degrees=None
) -> tuple[DerandState, list[DeviationRecord], float]:
    """Halve until ell_max or until every window is negligibly short, pin
    the live midpoints at their window centers, open the next rank."""
    cfg = config if config is not None else DerandConfig()
    if state.phase != "active":
        raise ValueError("cannot advance a final state")
    degrees = _resolve_degrees(degrees if degrees is not None else cfg.degrees, state.f.m, state.n_active)
    records: list[DeviationRecord] = []
    ident_max = 0.0
    prof = _value_profile(state, cfg)
    while state.ell < cfg.ell_max and not _windows_converged(state, cfg):
        state, prof, recs, ident = _choose_step(state, cfg, degrees, prof)
        records.extend(recs)
        ident_max = max(ident_max, ident)
    return _fix_and_promote(state), records, ident_max


@dataclass(frozen=True)
class RunResult:
    homeo: PLHomeo
    records: tuple
    identity_max: float
    manifest: dict


def run(
    f: SampledFunction,
    n_max: int,
    config: DerandConfig | None = None,
    label: str | None = None,
) -> RunResult:
    """Full pipeline: normalize f if needed, derive its budget map with a
    floor, then pin ranks 1 .. n_max with the halving loop. Ranks past
    n_max stay affine, which is exactly what dropping their concentric
    windows leaves behind."""
    cfg = config if config is not None else DerandConfig()
    if not (isinstance(n_max, int) and n_max >= 1):
        raise ValueError("n_max must be a positive integer")
    if n_max > f.m - 2:
        raise ResolutionError(f"n_max={n_max} too deep for a 2**{f.m} grid")
    f_use = normalize_sup(f) if f.sup_norm() > 1.0 + 1e-12 else f
    q = confinement_map(f_use, depth=f_use.m).with_floor(cfg.q_floor_exponent)
    degrees = _resolve_degrees(cfg.degrees, f.m, n_max)
    state = DerandState.initial(f_use, q)
    records: list[DeviationRecord] = []
    ident_max = 0.0
    mc_reports = []
    for rank in range(1, n_max + 1):
        if cfg.mc_check:
            mc_reports.append(mc_cross_check(state, cfg, seed=cfg.mc_seed + 7919 * rank))
        state, recs, ident = advance(state, cfg, degrees)
        records.extend(recs)
        ident_max = max(ident_max, ident)
    final = dataclasses.replace(state, phase="final", j_lo=np.empty(0), j_hi=np.empty(0))
    h = final.homeo()
    manifest = {
        "label": label,
        "m": f.m,
        "n_max": n_max,
        "normalized": f_use is not f,
        "sup_before": f.sup_norm(),
        "identity_max": ident_max,
        "degrees": list(degrees),
        "config": dataclasses.asdict(cfg),
        "mc_reports": mc_reports,
        "breakpoints": int(h.x.size),
    }
    return RunResult(h, tuple(records), ident_max, manifest)
