"""Dense-tableau simplex and the mean-based revenue linear programs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ValueDistribution

FEAS_TOL = 1e-9
# consecutive degenerate pivots before switching from Dantzig pricing to Bland
STALL_LIMIT = 50
REFACTOR_EVERY = 400


class LPError(RuntimeError):
    pass


class IterationLimitError(LPError):
    pass


@dataclass
class LinearProgram:
    """``c @ x`` optimized subject to ``A[k] @ x (sense[k]) b[k]`` and variable bounds.

    ``bounds`` defaults to ``(0, inf)`` for every variable; use ``-inf`` /
    ``inf`` for free directions.
    """

    c: np.ndarray
    A: np.ndarray
    senses: list[str]
    b: np.ndarray
    bounds: Optional[list[tuple[float, float]]] = None
    maximize: bool = True

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.senses = list(self.senses)
        if len(self.senses) != self.A.shape[0] or len(self.b) != self.A.shape[0]:
            raise ValueError("constraint dimensions disagree")
        if any(s not in ("<=", ">=", "=") for s in self.senses):
            raise ValueError("senses must be '<=', '>=' or '='")
        if self.bounds is None:
            self.bounds = [(0.0, math.inf)] * n
        if len(self.bounds) != n:
            raise ValueError("one bound pair per variable")
        for lo, hi in self.bounds:
            if lo > hi:
                raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return len(self.c)


@dataclass
class LPResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float = math.nan
    x: Optional[np.ndarray] = None
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def _pivot(tab: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    colv = tab[:, col].copy()
    colv[row] = 0.0
    nz = np.flatnonzero(np.abs(colv) > 0)
    if len(nz):
        tab[nz] -= np.outer(colv[nz], tab[row])


def _run_simplex(tab, basis, n_cols, max_iter, counter):
    """Minimize the objective held in the last row.

    Dantzig pricing, switching to Bland's rule once a run of degenerate pivots
    suggests cycling.
    """
    obj = tab[-1]
    stall = 0
    while True:
        if counter[0] >= max_iter:
            raise IterationLimitError(f"simplex exceeded {max_iter} pivots")
        reduced = obj[:n_cols]
        entering = np.flatnonzero(reduced < -FEAS_TOL)
        if len(entering) == 0:
            return "optimal"
        if stall < STALL_LIMIT:
            col = int(entering[np.argmin(reduced[entering])])
        else:
            col = int(entering[0])
        colv = tab[:-1, col]
        pos = np.flatnonzero(colv > FEAS_TOL)
        if len(pos) == 0:
            return "unbounded"
        ratios = tab[pos, -1] / colv[pos]
        best = ratios.min()
        ties = pos[ratios <= best + FEAS_TOL * max(1.0, abs(best))]
        row = int(min(ties, key=lambda r: basis[r]))
        stall = stall + 1 if best <= FEAS_TOL else 0
        _pivot(tab, row, col)
        basis[row] = col
        counter[0] += 1


def simplex_solve(lp: LinearProgram, max_iter: int = 50_000) -> LPResult:
    """Two-phase primal simplex on a dense tableau."""
    n = lp.n
    # map original variables onto non-negative ones: x = offset + M @ z
    cols = []  # (original index, sign)
    offset = np.zeros(n)
    extra_rows = []  # (coefficients over z, rhs) for finite upper bounds
    for j, (lo, hi) in enumerate(lp.bounds):
        if math.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if math.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif math.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    nz = len(cols)
    Mz = np.zeros((n, nz))
    for k, (j, s) in enumerate(cols):
        Mz[j, k] = s

    A = lp.A @ Mz
    b = lp.b - lp.A @ offset
    senses = list(lp.senses)
    if extra_rows:
        E = np.zeros((len(extra_rows), nz))
        for r, (k, ub) in enumerate(extra_rows):
            E[r, k] = 1.0
        A = np.vstack([A, E])
        b = np.concatenate([b, [ub for _, ub in extra_rows]])
        senses += ["<="] * len(extra_rows)

    rows = A.shape[0]
    # normalise to b >= 0, preferring slack rows when b == 0
    for r in range(rows):
        if b[r] < 0 or (b[r] == 0 and senses[r] == ">="):
            A[r] = -A[r]
            b[r] = -b[r]
            senses[r] = {"<=": ">=", ">=": "<=", "=": "="}[senses[r]]

    n_slack = sum(s != "=" for s in senses)
    n_art = sum(s != "<=" for s in senses)
    width = nz + n_slack + n_art
    tab = np.zeros((rows + 1, width + 1))
    tab[:rows, :nz] = A
    tab[:rows, -1] = b
    basis = [0] * rows
    si, ai = nz, nz + n_slack
    art_cols = []
    for r, s in enumerate(senses):
        if s == "<=":
            tab[r, si] = 1.0
            basis[r] = si
            si += 1
        elif s == ">=":
            tab[r, si] = -1.0
            si += 1
            tab[r, ai] = 1.0
            basis[r] = ai
            art_cols.append(ai)
            ai += 1
        else:
            tab[r, ai] = 1.0
            basis[r] = ai
            art_cols.append(ai)
            ai += 1

    counter = [0]
    if art_cols:
        tab[-1, :] = 0.0
        for r in range(rows):
            if basis[r] >= nz + n_slack:
                tab[-1] -= tab[r]
        tab[-1, art_cols] = 0.0
        _run_simplex(tab, basis, width, max_iter, counter)
        if -tab[-1, -1] > 1e-7 * max(1.0, np.abs(b).max(initial=0.0)):
            return LPResult("infeasible", iterations=counter[0])
        # drive remaining artificials out of the basis
        for r in range(rows):
            if basis[r] >= nz + n_slack:
                cand = np.flatnonzero(np.abs(tab[r, : nz + n_slack]) > FEAS_TOL)
                if len(cand):
                    _pivot(tab, r, int(cand[0]))
                    basis[r] = int(cand[0])
        art_set = set(art_cols)
        keep = [r for r in range(rows) if basis[r] not in art_set]
        tab = np.vstack([tab[keep], tab[-1:]])
        basis = [basis[r] for r in keep]
        tab = np.delete(tab, art_cols, axis=1)
        rows = len(keep)
    width = nz + n_slack

    cz = (lp.c @ Mz) * (-1.0 if lp.maximize else 1.0)
    tab[-1, :] = 0.0
    tab[-1, :nz] = cz
    for r in range(rows):
        if basis[r] < nz and cz[basis[r]] != 0:
            tab[-1] -= cz[basis[r]] * tab[r]
    status = _run_simplex(tab, basis, width, max_iter, counter)
    if status == "unbounded":
        return LPResult("unbounded", iterations=counter[0])
    z = np.zeros(width)
    for r in range(rows):
        z[basis[r]] = tab[r, -1]
    x = offset + Mz @ z[:nz]
    return LPResult("optimal", float(lp.c @ x), x, counter[0])


# -- mean-based revenue LP ---------------------------------------------------


@dataclass
class MbLpSolution:
    x: np.ndarray
    u: np.ndarray
    objective: float
    raw_objective: float = field(default=math.nan, repr=False)


def _mbrev_lp(v, q, pairs) -> LinearProgram:
    """Figure-1 LP over variables (x_1..x_m, u_1..u_m) restricted to the given (i, j) rows."""
    m = len(v)
    c = np.concatenate([q * v, -q])
    A = np.zeros((len(pairs), 2 * m))
    for r, (i, j) in enumerate(pairs):
        A[r, j] = v[i] - v[j]
        A[r, m + i] = -1.0
    bounds = [(0.0, 1.0)] * m + [(0.0, math.inf)] * m
    return LinearProgram(c, A, ["<="] * len(pairs), np.zeros(len(pairs)), bounds)


def mbrev_objective(dist: ValueDistribution, x) -> float:
    """Revenue of allocation vector ``x`` with utilities set to their tight lower bounds."""
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    x = np.asarray(x, dtype=float)
    u = _tight_u(v, x)
    return float(q @ (v * x - u))


def _tight_u(v, x):
    m = len(v)
    u = np.zeros(m)
    for i in range(1, m):
        u[i] = max(0.0, float(np.max((v[i] - v[:i]) * x[:i])))
    return u


def revised_simplex(c, rows, cols, vals, b, basis, max_iter: int = 100_000):
    """Primal revised simplex for ``min c @ z, A z = b, z >= 0`` from a feasible basis.

    ``A`` is given as coordinate triples so wide programs with few rows are
    cheap to price.  The basis inverse is kept explicitly and refactorised
    periodically.  Pricing is Dantzig's rule, falling back to Bland's rule
    after a run of degenerate pivots.  Returns ``(status, z, y, iterations)``
    where ``y`` are the simplex multipliers (the dual solution).
    """
    c = np.asarray(c, dtype=float)
    b = np.asarray(b, dtype=float)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=float)
    n_rows, n = len(b), len(c)
    order = np.argsort(cols, kind="stable")
    rows, cols, vals = rows[order], cols[order], vals[order]
    ptr = np.searchsorted(cols, np.arange(n + 1))

    def column(k):
        out = np.zeros(n_rows)
        s, e = ptr[k], ptr[k + 1]
        out[rows[s:e]] = vals[s:e]
        return out

    colnorm = np.sqrt(np.bincount(cols, weights=vals**2, minlength=n)) + 1e-12
    basis = np.array(basis, dtype=np.int64)
    if len(basis) != n_rows:
        raise ValueError("basis size must equal the number of rows")

    def refactor():
        B = np.column_stack([column(k) for k in basis])
        Binv = np.linalg.inv(B)
        xB = Binv @ b
        xB[np.abs(xB) < 1e-13] = 0.0
        return Binv, xB

    Binv, xB = refactor()
    if np.any(xB < -1e-9):
        raise LPError("starting basis is not primal feasible")
    y = c[basis] @ Binv
    stall = 0
    it = 0
    while True:
        if it >= max_iter:
            raise IterationLimitError(f"simplex exceeded {max_iter} pivots")
        d = c - np.bincount(cols, weights=vals * y[rows], minlength=n)
        d[basis] = 0.0
        cand = np.flatnonzero(d < -FEAS_TOL)
        if len(cand) == 0:
            z = np.zeros(n)
            z[basis] = xB
            return "optimal", z, y, it
        if stall < STALL_LIMIT:
            k = int(cand[np.argmin(d[cand] / colnorm[cand])])
        else:
            k = int(cand[0])
        s, e = ptr[k], ptr[k + 1]
        w = Binv[:, rows[s:e]] @ vals[s:e]
        pos = np.flatnonzero(w > FEAS_TOL)
        if len(pos) == 0:
            return "unbounded", None, y, it
        ratios = np.maximum(xB[pos], 0.0) / w[pos]
        theta = ratios.min()
        ties = pos[ratios <= theta + FEAS_TOL * max(1.0, theta)]
        r = int(ties[np.argmin(basis[ties])])
        theta = max(xB[r], 0.0) / w[r]
        stall = stall + 1 if theta <= FEAS_TOL else 0
        xB -= theta * w
        xB[r] = theta
        pivot_row = Binv[r] / w[r]
        nz = np.flatnonzero(w)
        Binv[nz] -= w[nz, None] * pivot_row
        Binv[r] = pivot_row
        y += d[k] * pivot_row
        basis[r] = k
        it += 1
        if it % REFACTOR_EVERY == 0:
            Binv, xB = refactor()
            y = c[basis] @ Binv


def _mbrev_dual(v, q):
    """Dual of the revenue LP in standard form, with its obvious feasible basis.

    Columns: lambda_ij (i > j), mu_j, surplus s_j, slack t_i.  Rows: one
    covering row per x_j, one budget row per u_i.  Basis {mu, t} is feasible.
    """
    m = len(v)
    I, J = np.tril_indices(m, -1)
    nl = len(I)
    lam = np.arange(nl)
    mu = nl + np.arange(m)
    s = nl + m + np.arange(m)
    t = nl + 2 * m + np.arange(m)
    rows = np.concatenate([J, m + I, np.arange(m), np.arange(m), m + np.arange(m)])
    cols = np.concatenate([lam, lam, mu, s, t])
    vals = np.concatenate([v[I] - v[J], np.ones(nl), np.ones(m), -np.ones(m), np.ones(m)])
    c = np.zeros(nl + 3 * m)
    c[mu] = 1.0
    b = np.concatenate([q * v, q])
    basis = np.concatenate([mu, t])
    return c, rows, cols, vals, b, basis


def solve_mbrev(dist: ValueDistribution) -> MbLpSolution:
    """Solve the mean-based revenue LP and return a monotone optimal allocation.

    The program has m^2/2 incentive rows but only 2m variables, so its dual
    (2m rows) is solved instead; x and u are read off the dual's simplex
    multipliers.
    """
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    m = len(v)
    if m == 1:
        return MbLpSolution(np.ones(1), np.zeros(1), float(q[0] * v[0]), float(q[0] * v[0]))
    status, z, y, _ = revised_simplex(*_mbrev_dual(v, q))
    if status != "optimal":
        raise LPError(f"mean-based revenue LP returned {status}")
    raw = float(np.sum(z[len(z) - 3 * m: len(z) - 2 * m]))
    x = np.clip(y[:m], 0.0, 1.0)
    x = np.maximum.accumulate(x)
    u = _tight_u(v, x)
    obj = float(q @ (v * x - u))
    return MbLpSolution(x, u, obj, raw)


def full_mbrev_lp(dist: ValueDistribution) -> LinearProgram:
    """The revenue LP with every incentive row, for the dense tableau solver."""
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    pairs = [(i, j) for i in range(len(v)) for j in range(i)]
    return _mbrev_lp(v, q, pairs)


def brute_force_mbrev(dist: ValueDistribution) -> float:
    """Mean-based revenue by exhaustive vertex enumeration (no simplex).

    With utilities eliminated, the objective is a concave piecewise-linear
    function of x on [0, 1]^m whose pieces change on the hyperplanes
    ``x_k = 0``, ``x_k = 1`` and ``(v_i - v_j) x_j = (v_i - v_k) x_k``.  Its
    maximum sits at an intersection of m of them, so all such points are
    enumerated and evaluated.
    """
    m = dist.m
    if m > 6:
        raise ValueError("brute force is limited to m <= 6")
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    planes = []  # (normal, rhs)
    for k in range(m):
        e = np.zeros(m)
        e[k] = 1.0
        planes.append((e, 0.0))
        planes.append((e, 1.0))
    for i in range(m):
        for j, k in itertools.combinations(range(i), 2):
            w = np.zeros(m)
            w[j] = v[i] - v[j]
            w[k] = -(v[i] - v[k])
            planes.append((w, 0.0))
    N = np.array([p[0] for p in planes])
    rhs = np.array([p[1] for p in planes])
    best = -math.inf
    combos = itertools.combinations(range(len(planes)), m)
    while True:
        chunk = np.array(list(itertools.islice(combos, 50_000)), dtype=np.int64)
        if len(chunk) == 0:
            break
        mats = N[chunk]
        dets = np.linalg.det(mats)
        ok = np.abs(dets) > 1e-12
        if not ok.any():
            continue
        xs = np.linalg.solve(mats[ok], rhs[chunk[ok]][..., None])[..., 0]
        inside = np.all((xs >= -1e-9) & (xs <= 1 + 1e-9), axis=1)
        for x in np.clip(xs[inside], 0.0, 1.0):
            u = np.zeros(m)
            for i in range(1, m):
                u[i] = max(0.0, float(np.max((v[i] - v[:i]) * x[:i])))
            best = max(best, float(q @ (v * x - u)))
    return best


def solve_lp_prime(dist: ValueDistribution, bids: Sequence[float], slack: float = 0.0) -> float:
    """Optimal value of LP': the revenue bound for a monotone schedule with these bid labels.

    ``slack`` is the buyer's regret per round (delta / T).  The null arm is
    always present, so every utility is at least ``-slack``; a value below the
    smallest bid never receives the item.
    """
    bids = np.asarray(bids, dtype=float)
    if np.any(np.diff(bids) < 0) or np.any(bids < 0) or np.any(bids > dist.scale):
        raise ValueError("bids must be sorted and inside the value range")
    if slack < 0:
        raise ValueError("slack must be non-negative")
    v = np.asarray(dist.values)
    q = np.asarray(dist.probs)
    m, K = len(v), len(bids)
    # variables: u (m), y (K), pbar (K)
    nv = m + 2 * K
    c = np.zeros(nv)
    c[:m] = -q
    for i in range(m):
        elig = np.flatnonzero(bids <= v[i] + 1e-12)
        if len(elig):
            c[m + int(elig[-1])] += q[i] * v[i]
    rows, rhs = [], []
    for i in range(m):
        for j in np.flatnonzero(bids <= v[i] + 1e-12):
            row = np.zeros(nv)
            row[i] = -1.0
            row[m + j] = v[i]
            row[m + K + j] = -1.0
            rows.append(row)
            rhs.append(slack)
    for j in range(K):
        row = np.zeros(nv)
        row[m + K + j] = 1.0
        row[m + j] = -bids[j]
        rows.append(row)
        rhs.append(0.0)
    bounds = [(-slack, math.inf)] * m + [(0.0, 1.0)] * K + [(0.0, math.inf)] * K
    lp = LinearProgram(c, np.array(rows), ["<="] * len(rows), np.array(rhs), bounds)
    res = simplex_solve(lp)
    if not res.ok:
        raise LPError(f"LP' returned {res.status}")
    return res.value
