"""Dirichlet-improvability testing: direct inequality solving, profiles over
(eps, N) ladders, fractal scans, and the lattice-orbit crosscheck."""

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import BudgetExceeded, InvalidInput
from .exterior import Lattice
from .dynamics import ExcursionSpec, orbit_heights
from .exponents import dimension_bound
from .ifs import KNOWN_ALPHAS, cylinder_cloud
from .util import parallel_map


@dataclass(frozen=True)
class DirichletQuery:
    """One instance of the improvable-Dirichlet inequalities."""

    x: np.ndarray
    eps: float
    N: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        if not 0 < self.eps <= 1:
            raise InvalidInput("eps must lie in (0, 1]")
        if self.N < 1:
            raise InvalidInput("N must be at least 1")
        if int(self.N ** (1.0 / self.x.shape[0])) < 1:
            raise InvalidInput("enumeration bound floor(N^(1/d)) must be >= 1")


def _q_iter(d, qmax):
    """Nonzero integer q with sup-norm <= qmax: by shell, lexicographic inside."""
    for shell in range(1, qmax + 1):
        for q in itertools.product(range(-shell, shell + 1), repeat=d):
            if max(abs(c) for c in q) == shell:
                yield q


def dirichlet_test(query):
    """Search for (p, q) with |q.x + p| <= eps/N and 0 < sup-norm(q) <= N^(1/d).

    p is the nearest integer to -q.x (optimal for fixed q); the witness is the
    first hit in the fixed shell-then-lexicographic enumeration order.
    """
    x = query.x
    d = x.shape[0]
    qmax = int(math.floor(query.N ** (1.0 / d) + 1e-9))
    bound = query.eps / query.N
    for q in _q_iter(d, qmax):
        val = float(np.dot(q, x))
        p = -round(val)
        if abs(val + p) <= bound:
            return True, (int(p), tuple(int(c) for c in q))
    return False, None


def _solvable_fast(x, eps, n_val):
    """Vectorized yes/no Dirichlet check (no witness ordering)."""
    d = x.shape[0]
    qmax = int(math.floor(n_val ** (1.0 / d) + 1e-9))
    axes = [np.arange(-qmax, qmax + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    grid = grid[np.any(grid != 0, axis=1)]
    vals = grid @ x
    frac = np.abs(vals - np.round(vals))
    return bool(np.min(frac) <= eps / n_val)


@dataclass
class ImprovabilityProfile:
    x: np.ndarray
    eps_ladder: list
    n_ladder: list
    solvable: np.ndarray  # (len(eps), len(N)) boolean
    first_failure: list  # per-eps smallest failing N, or None
    score: float  # smallest always-solvable eps in the ladder, or inf


def improvability_profile(x, eps_ladder, n_ladder):
    """Solvability matrix over the (eps, N) grid with failure bookkeeping."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    eps_ladder = sorted(float(e) for e in eps_ladder)
    n_ladder = sorted(float(n) for n in n_ladder)
    if not eps_ladder or not n_ladder:
        raise InvalidInput("ladders must be non-empty")
    d = x.shape[0]
    qmax_seen = {}
    frac_min = {}
    # reuse minima: for each N the relevant quantity is min over the q-box
    for n_val in n_ladder:
        qmax = int(math.floor(n_val ** (1.0 / d) + 1e-9))
        if qmax not in frac_min:
            axes = [np.arange(-qmax, qmax + 1)] * d
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
            grid = grid[np.any(grid != 0, axis=1)]
            vals = grid @ x
            frac_min[qmax] = float(np.min(np.abs(vals - np.round(vals))))
        qmax_seen[n_val] = qmax
    solvable = np.zeros((len(eps_ladder), len(n_ladder)), dtype=bool)
    for i, eps in enumerate(eps_ladder):
        for j, n_val in enumerate(n_ladder):
            solvable[i, j] = frac_min[qmax_seen[n_val]] <= eps / n_val
    first_failure = []
    for i in range(len(eps_ladder)):
        fails = [n_ladder[j] for j in range(len(n_ladder)) if not solvable[i, j]]
        first_failure.append(fails[0] if fails else None)
    always = [eps_ladder[i] for i in range(len(eps_ladder)) if first_failure[i] is None]
    score = min(always) if always else math.inf
    return ImprovabilityProfile(
        x=x,
        eps_ladder=eps_ladder,
        n_ladder=n_ladder,
        solvable=solvable,
        first_failure=first_failure,
        score=score,
    )


def fractal_scan(ifs_sys, depth, eps_ladder, n_ladder, gamma, alphas=None,
                 budget=200000, threads=1):
    """Classify every depth-cylinder representative by its improvability profile.

    Reports per-eps flagged fractions, the cover sum over flagged cylinders,
    and (when exponents are known) the comparison dimension bound.
    """
    from .ifs import code_points

    if ifs_sys.nmaps**depth > budget:
        raise BudgetExceeded(f"cylinder count {ifs_sys.nmaps**depth} exceeds budget {budget}")
    if depth < 1:
        # degenerate scan: one profile at the root representative
        words = np.zeros((1, 1), dtype=np.int64)
    else:
        cloud = cylinder_cloud(ifs_sys, depth=depth)
        words = np.asarray(cloud.words)
    reps = code_points(ifs_sys, words)
    profiles = parallel_map(
        lambda r: improvability_profile(r, eps_ladder, n_ladder), list(reps), threads
    )
    eps_sorted = profiles[0].eps_ladder
    diam_pow = (ifs_sys.diam_K * np.prod(ifs_sys.ratios[words], axis=1)) ** (
        ifs_sys.sim_dim - gamma
    )
    rows = []
    for i, eps in enumerate(eps_sorted):
        flagged = np.array([p.first_failure[i] is None for p in profiles])
        rows.append({
            "eps": eps,
            "flagged_fraction": float(np.mean(flagged)),
            "flagged_count": int(np.sum(flagged)),
            "cover_sum": float(np.sum(diam_pow[flagged])),
        })
    out = {
        "depth": int(depth),
        "gamma": float(gamma),
        "rows": rows,
        "full_sum": float(np.sum(diam_pow)),
        "profiles": profiles,
        "words": [tuple(int(s) for s in w) for w in words],
    }
    if alphas is None:
        alphas = _default_alphas(ifs_sys)
    if alphas is not None:
        db = dimension_bound(ifs_sys.sim_dim, ifs_sys.dim, alphas)
        out["dimension_bound"] = db.bound
        out["varpi"] = db.varpi
    return out


def _default_alphas(ifs_sys):
    for name, alphas in KNOWN_ALPHAS.items():
        if len(alphas) == ifs_sys.dim:
            from .ifs import preset

            ref = preset(name)
            same = ref.nmaps == ifs_sys.nmaps and np.allclose(ref.ratios, ifs_sys.ratios)
            if same and all(
                np.allclose(a.translation, b.translation) and np.allclose(a.rotation, b.rotation)
                for a, b in zip(ref.maps, ifs_sys.maps)
            ):
                return alphas
    if ifs_sys.sim_dim > ifs_sys.dim - 1:
        from .exponents import small_codim_bound

        return small_codim_bound(ifs_sys.sim_dim, ifs_sys.dim)
    return None


def dani_crosscheck(ifs_sys, panel, x0, params, spec, eps_ladder, n_ladder,
                    radius=3, threads=1):
    """Improvability profiles vs orbit cusp depth over a labeled panel.

    panel entries: dicts with 'x' (point) and optional 'label'. For each point
    the profile score and the minimal level-1 short-vector norm along the
    orbit (1/max phi_1) are compared by rank correlation: more improvable
    points should flow deeper into the cusp.
    """
    def one(entry):
        x = np.atleast_1d(np.asarray(entry["x"], dtype=float))
        prof = improvability_profile(x, eps_ladder, n_ladder)
        trace = orbit_heights(ifs_sys, x, x0, params, spec, radius=radius)
        min_sv = min(1.0 / phis[0] for el, _, _, phis in trace.epochs if el >= 1)
        return {
            "x": [float(v) for v in x],
            "label": entry.get("label"),
            "score": prof.score,
            "min_shortest_vector": float(min_sv),
            "max_height": max(f for el, _, f, _ in trace.epochs if el >= 1),
            "first_failure": prof.first_failure,
        }

    rows = parallel_map(one, list(panel), threads)
    finite_scores = [r["score"] if math.isfinite(r["score"]) else max(e for e in eps_ladder) * 2
                     for r in rows]
    svs = [r["min_shortest_vector"] for r in rows]
    corr = stats.spearmanr(finite_scores, svs)
    return {
        "rows": rows,
        "rank_correlation": float(corr.statistic),
        "p_value": float(corr.pvalue),
        "panel_size": len(rows),
    }
