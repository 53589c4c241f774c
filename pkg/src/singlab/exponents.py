"""Subspace-concentration exponents and the headline dimension-bound formula.

Masses of neighborhoods of affine subspaces are bracketed by summing natural
measure over a complete prefix set of cylinders: cylinders whose enclosure
lies inside the neighborhood give a lower bound, cylinders whose enclosure
meets it give an upper bound. Exponents are least-squares slopes of the
bracket against the neighborhood width on a geometric ladder.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import InvalidInput
from .ifs import cylinder_cloud
from .util import parallel_map


@dataclass(frozen=True)
class AffineSubspace:
    """Affine subspace of codimension codim given by orthonormal normals and a point."""

    ambient_dim: int
    codim: int
    normals: np.ndarray  # (codim, ambient_dim), orthonormal rows
    offset: np.ndarray

    def __post_init__(self):
        n = np.atleast_2d(np.asarray(self.normals, dtype=float))
        off = np.atleast_1d(np.asarray(self.offset, dtype=float))
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "offset", off)
        if n.shape != (self.codim, self.ambient_dim) or off.shape != (self.ambient_dim,):
            raise InvalidInput("normals/offset shapes inconsistent with declared dimensions")
        if np.max(np.abs(n @ n.T - np.eye(self.codim))) > 1e-10:
            raise InvalidInput("normals must be orthonormal within 1e-10")

    def distance(self, pts):
        """Euclidean distance from point(s) to the subspace."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        res = (pts - self.offset) @ self.normals.T
        out = np.linalg.norm(res, axis=1)
        return out if out.size > 1 else float(out[0])


@dataclass
class ScalingFit:
    """Log-log slope fit of measured masses against neighborhood widths."""

    eps_ladder: list
    values: list  # (lower, upper) mass brackets per ladder point
    slope: float
    residual: float  # max |two-point slope - fitted slope|
    slope_lower: float = None  # fit against the lower bracket, where positive
    uncertainty: float = None


@dataclass(frozen=True)
class SearchBudget:
    """Deterministic search resolution for the Grassmannian sweep."""

    directions: int = 360
    depth_scale: float = 1.0  # cylinder resolution depth_eps = depth_scale * eps
    max_cylinders: int = 400000


@dataclass
class MassBracket:
    lower: float
    upper: float
    normals: np.ndarray = None
    offset: np.ndarray = None


def _restrict_cloud(ifs, eps, budget):
    """Cloud at scale depth_eps, coarsened if it would blow the cylinder cap."""
    ratios = ifs.ratios
    depth_eps = max(budget.depth_scale * eps, 1e-300)
    if np.allclose(ratios, ratios[0]):
        rho = float(ratios[0])
        depth = max(1, int(math.ceil(math.log(depth_eps) / math.log(rho) - 1e-12)))
        cap = max(1, int(math.log(budget.max_cylinders) / math.log(ifs.nmaps)))
        return cylinder_cloud(ifs, depth=min(depth, cap))
    # ragged prefix sets: grow eps until the count fits
    while True:
        cloud = cylinder_cloud(ifs, eps=depth_eps)
        if len(cloud) <= budget.max_cylinders:
            return cloud
        depth_eps *= 2.0


def _slab_profile(cloud, normal):
    """Projected centers and half-widths of the cylinder enclosures on a normal."""
    p = cloud.centers @ normal
    if cloud.box_lo is not None:
        hw = 0.5 * (cloud.box_hi - cloud.box_lo)
        w = hw @ np.abs(normal)
    else:
        w = cloud.radii
    return p, w


def _slab_sweep(masses, p, w, eps):
    """Best offset of a width-2*eps window: max covered mass and the argmax offset."""
    starts = p - (eps + w)
    ends = p + (eps + w)
    coords = np.concatenate([starts, ends])
    kinds = np.concatenate([np.zeros(len(p)), np.ones(len(p))])  # starts first at ties
    deltas = np.concatenate([masses, -masses])
    order = np.lexsort((kinds, coords))
    running = np.cumsum(deltas[order])
    best = int(np.argmax(running))
    upper = float(running[best])
    t_star = float(coords[order][best])
    lower = float(np.sum(masses[(np.abs(p - t_star) + w) < eps]))
    return lower, upper, t_star


def line_mass(ifs, subspace, eps, depth_eps):
    """Bracket the natural measure of the open eps-neighborhood of a subspace."""
    if eps <= 0:
        raise InvalidInput("eps must be positive")
    if not 0 < depth_eps <= eps:
        raise InvalidInput("depth_eps must lie in (0, eps]")
    cloud = cylinder_cloud(ifs, eps=depth_eps)
    if subspace.codim == 1 and cloud.box_lo is not None:
        nvec = subspace.normals[0]
        p, w = _slab_profile(cloud, nvec)
        t = float(nvec @ subspace.offset)
        inside = (np.abs(p - t) + w) < eps
        meets = (np.abs(p - t) - w) < eps
    else:
        dist = subspace.distance(cloud.centers)
        dist = np.atleast_1d(dist)
        inside = (dist + cloud.radii) < eps
        meets = (dist - cloud.radii) < eps
    return float(cloud.masses[inside].sum()), float(cloud.masses[meets].sum())


def _unit(v):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise InvalidInput("zero direction")
    return v / n


def special_normals(ifs):
    """Axis, diagonal, and translation-difference normals (d = 2 only).

    These catch the exceptional alignment families (cylinder edges and
    corner-to-corner lines) that a uniform grid may straddle.
    """
    if ifs.dim != 2:
        return []
    out = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
           _unit([1.0, 1.0]), _unit([1.0, -1.0])]
    trs = [m.translation for m in ifs.maps]
    for i in range(len(trs)):
        for j in range(i + 1, len(trs)):
            dvec = trs[j] - trs[i]
            if np.linalg.norm(dvec) > 1e-12:
                u = _unit(dvec)
                out.append(np.array([-u[1], u[0]]))  # normal of the connecting line
    uniq = []
    for v in out:
        if not any(min(np.linalg.norm(v - u), np.linalg.norm(v + u)) < 1e-9 for u in uniq):
            uniq.append(v)
    return uniq


def _direction_frames(ifs, ell, budget):
    """Orthonormal normal-frames to sweep for codim-ell subspaces."""
    d = ifs.dim
    if ell == d:
        return [np.eye(d)]  # point case: full normal space
    if d == 2 and ell == 1:
        angles = np.pi * np.arange(budget.directions) / budget.directions
        frames = [np.array([[math.cos(a), math.sin(a)]]) for a in angles]
        frames.extend(v[None, :] for v in special_normals(ifs))
        return frames
    if d == 3:
        k = max(budget.directions, 16)
        golden = (1 + 5**0.5) / 2
        idx = np.arange(k)
        z = 1 - 2 * (idx + 0.5) / k
        r = np.sqrt(np.maximum(0.0, 1 - z * z))
        phi = 2 * np.pi * idx / golden
        dirs = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        if ell == 1:
            return [u[None, :] for u in dirs]
        frames = []
        for u in dirs:  # ell = 2: orthonormal basis of the plane orthogonal to u
            a = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
            n1 = _unit(np.cross(u, a))
            n2 = np.cross(u, n1)
            frames.append(np.stack([n1, n2]))
        return frames
    if d == 1 and ell == 1:
        return [np.eye(1)]
    raise InvalidInput(f"unsupported (d, ell) = ({d}, {ell}); desk scale covers d <= 3")


def _ball_sweep(masses, pts, widths, eps):
    """Candidate-center sweep for codim >= 2: best mass near any projected center."""
    wmax = float(np.max(widths))
    tree = cKDTree(pts)
    pairs = tree.query_pairs(r=eps + wmax, output_type="ndarray")
    upper_acc = masses.copy()  # each candidate sees at least its own cylinder
    lower_acc = np.where(widths < eps, masses, 0.0)
    if len(pairs):
        dvec = pts[pairs[:, 0]] - pts[pairs[:, 1]]
        dist = np.linalg.norm(dvec, axis=1)
        for a, b in ((0, 1), (1, 0)):
            hit = dist < eps + widths[pairs[:, b]]
            np.add.at(upper_acc, pairs[hit, a], masses[pairs[hit, b]])
            low = (dist + widths[pairs[:, b]]) < eps
            np.add.at(lower_acc, pairs[low, a], masses[pairs[low, b]])
    best = int(np.argmax(upper_acc))
    return float(lower_acc[best]), float(upper_acc[best]), pts[best]


def sup_line_mass(ifs, ell, eps, search=None, threads=1):
    """Maximize the neighborhood-mass bracket over codim-ell affine subspaces.

    Directions come from a fixed grid plus the exceptional families; offsets
    from a sliding-window sweep along each normal (codim 1) or from candidate
    centers (codim >= 2). Deterministic for a fixed budget.
    """
    if not 1 <= ell <= ifs.dim:
        raise InvalidInput(f"ell must lie in 1..{ifs.dim}")
    search = search or SearchBudget()
    cloud = _restrict_cloud(ifs, eps, search)
    frames = _direction_frames(ifs, ell, search)

    if ell == 1:
        def eval_frame(frame):
            p, w = _slab_profile(cloud, frame[0])
            lo, up, t = _slab_sweep(cloud.masses, p, w, eps)
            return lo, up, frame, t * frame[0]
    else:
        def eval_frame(frame):
            proj = cloud.centers @ frame.T
            lo, up, center = _ball_sweep(cloud.masses, proj, cloud.radii, eps)
            return lo, up, frame, center @ frame

    results = parallel_map(eval_frame, frames, threads)
    best = max(results, key=lambda r: r[1])
    return MassBracket(lower=best[0], upper=best[1], normals=best[2], offset=best[3])


def _ls_fit(xs, ys):
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    a = np.vstack([xs, np.ones_like(xs)]).T
    (slope, intercept), *_ = np.linalg.lstsq(a, ys, rcond=None)
    return float(slope), float(intercept)


def alpha_estimate(ifs, ell, eps_ladder, search=None, threads=1):
    """Slope of log sup-neighborhood-mass vs log eps on a geometric ladder."""
    eps_ladder = [float(e) for e in eps_ladder]
    if len(eps_ladder) < 3:
        raise InvalidInput("ladder needs at least 3 points")
    if any(e2 >= e1 for e1, e2 in zip(eps_ladder, eps_ladder[1:])):
        raise InvalidInput("ladder must be strictly decreasing")
    rmin, rmax = float(ifs.ratios.min()), float(ifs.ratios.max())
    for e1, e2 in zip(eps_ladder, eps_ladder[1:]):
        if not rmin - 1e-9 <= e2 / e1 <= rmax + 1e-9:
            raise InvalidInput("ladder ratio must lie within the IFS contraction range")
    brackets = [sup_line_mass(ifs, ell, e, search, threads) for e in eps_ladder]
    xs = np.log(eps_ladder)
    ys = np.log([b.upper for b in brackets])
    slope, intercept = _ls_fit(xs, ys)
    two_point = np.diff(ys) / np.diff(xs)
    residual = float(np.max(np.abs(two_point - slope))) if len(xs) > 1 else 0.0
    lowers = [b.lower for b in brackets]
    slope_lower = None
    uncertainty = None
    if all(v > 0 for v in lowers):
        slope_lower, _ = _ls_fit(xs, np.log(lowers))
        uncertainty = abs(slope - slope_lower)
    return ScalingFit(
        eps_ladder=eps_ladder,
        values=[(b.lower, b.upper) for b in brackets],
        slope=slope,
        residual=residual,
        slope_lower=slope_lower,
        uncertainty=uncertainty,
    )


def frostman_projection(ifs, direction, eps_ladder, search=None):
    """Frostman-exponent fit of the projection onto the given direction (d = 2)."""
    if ifs.dim != 2:
        raise InvalidInput("frostman_projection applies to planar systems")
    u = _unit(direction)
    search = search or SearchBudget()
    eps_ladder = [float(e) for e in eps_ladder]
    if len(eps_ladder) < 3:
        raise InvalidInput("ladder needs at least 3 points")
    values = []
    for eps in eps_ladder:
        cloud = _restrict_cloud(ifs, eps, search)
        p, w = _slab_profile(cloud, u)
        lo, up, _ = _slab_sweep(cloud.masses, p, w, eps)
        values.append((lo, up))
    xs = np.log(eps_ladder)
    ys = np.log([v[1] for v in values])
    slope, _ = _ls_fit(xs, ys)
    two_point = np.diff(ys) / np.diff(xs)
    residual = float(np.max(np.abs(two_point - slope)))
    return ScalingFit(eps_ladder=eps_ladder, values=values, slope=slope, residual=residual)


def rotation_cocycle_bound(ifs, n_max, theta_grid, search=None, return_details=False):
    """Subadditive-cocycle estimate of the codim-1 exponent for homogeneous systems.

    Averages log tau(theta, n) + log D over a theta grid, takes the Fekete
    minimum of the per-step means over n <= n_max, and normalizes by log rho.
    The doubling constant D = ceil(1 + diam_K) + 1 makes the averaged cocycle
    subadditive, so every finite n yields a one-sided bound that converges to
    the exponent.
    """
    if ifs.dim != 2:
        raise InvalidInput("rotation cocycle bound applies to planar systems")
    ratios = ifs.ratios
    rots = [m.rotation for m in ifs.maps]
    if not np.allclose(ratios, ratios[0]):
        raise InvalidInput("system is not homogeneous: contraction ratios differ")
    if any(np.max(np.abs(r - rots[0])) > 1e-12 for r in rots):
        raise InvalidInput("system is not homogeneous: rotation parts differ")
    base = rots[0]
    if np.max(np.abs(np.abs(base) - np.round(np.abs(base)))) < 1e-12:
        raise InvalidInput("rotation angle is a multiple of pi/2: not an irrational rotation")
    if n_max < 1 or theta_grid < 1:
        raise InvalidInput("n_max and theta_grid must be >= 1")
    rho = float(ratios[0])
    dbl = math.ceil(1.0 + ifs.diam_K) + 1.0
    search = search or SearchBudget()
    thetas = np.pi * np.arange(theta_grid) / theta_grid
    per_n = []
    for n in range(1, n_max + 1):
        eps = rho**n
        cloud = _restrict_cloud(ifs, eps, search)
        logs = []
        for th in thetas:
            normal = np.array([math.cos(th), math.sin(th)])
            p, w = _slab_profile(cloud, normal)
            _, up, _ = _slab_sweep(cloud.masses, p, w, eps)
            logs.append(math.log(max(up, 1e-300)))
        per_n.append((float(np.mean(logs)) + math.log(dbl)) / n)
    estimate = min(per_n) / math.log(rho)
    if return_details:
        return estimate, [v / math.log(rho) for v in per_n]
    return estimate


@dataclass(frozen=True)
class DimensionBound:
    bound: float
    varpi: float
    beta: float


def dimension_bound(s, d, alphas):
    """Headline upper bound s - min_l (d-l+1) alpha_l / (d+1), with its exponents."""
    alphas = [float(a) for a in alphas]
    if len(alphas) != d:
        raise InvalidInput(f"need exactly d={d} exponents, got {len(alphas)}")
    if any(a < -1e-12 or a > s + 1e-9 for a in alphas):
        raise InvalidInput("each exponent must lie in [0, s]")
    varpi = min(a * (d - ell + 1) for ell, a in enumerate(alphas, start=1))
    beta = varpi / (d + 1)
    return DimensionBound(bound=s - beta, varpi=varpi, beta=beta)


def small_codim_bound(s, d):
    """Certified exponent lower bounds (s - d + l) when the codimension is < 1."""
    from .errors import NotApplicable

    if s <= d - 1:
        raise NotApplicable("requires similarity dimension s > d - 1")
    return [s - d + ell for ell in range(1, d + 1)]
