"""Transversality of expanding coordinates and the expansion-moment audit.

The normal vectors attached to the expanding coordinates of the flow are
pairwise transverse with an explicit wedge lower bound; transversality turns
simultaneous smallness of those coordinates into proximity to a low-dimensional
affine subspace, with an explicit containment constant. The moment audit
Monte-Carlo-checks the resulting integrability estimate on fractal measures.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentPrecondition, InvalidInput, PreconditionError
from .exterior import ExteriorVector, _basis_pos, apply_diagonal, apply_unipotent, exterior_basis
from .ifs import code_points, sample_words


@dataclass(frozen=True)
class ExpansionParams:
    """Exponents of the integrability estimate for expanded wedge vectors."""

    d: int
    ell: int
    delta: float
    lam: float
    gamma: float
    kappa: float
    p: float
    q: float

    @classmethod
    def make(cls, d, ell, delta, lam, gamma):
        if not 0 < delta < 1:
            raise InvalidInput("delta must lie in (0,1)")
        if lam <= 0:
            raise InvalidInput("lam must be positive")
        if not 1 <= ell <= d:
            raise InvalidInput("ell must lie in 1..d")
        kappa = delta * lam * (d - ell + 1) / (d + 1)
        p = (1 + delta) / (1 - delta)
        q = (1 + delta) / (2 * delta)
        assert abs(1 / p + 1 / q - 1.0) < 1e-12
        return cls(d=d, ell=ell, delta=float(delta), lam=float(lam), gamma=float(gamma),
                   kappa=kappa, p=p, q=q)


def normal_vector(v, index_set):
    """Normal of the affine locus where the e_I coordinate of u(x)v vanishes.

    Coordinate i (for i outside I) is the signed coefficient v_{(I u {i}) \\ {0}};
    coordinates with i in I are zero.
    """
    index_set = tuple(sorted(index_set))
    if 0 not in index_set:
        raise InvalidInput("index set must contain 0")
    if len(index_set) != v.level:
        raise InvalidInput("index set size must equal the vector level")
    d = v.n - 1
    pos = _basis_pos(v.n, v.level)
    out = np.zeros(d)
    rest = tuple(i for i in index_set if i != 0)
    for i in range(1, d + 1):
        if i in index_set:
            continue
        jset = tuple(sorted(rest + (i,)))
        sign = -1.0 if jset.index(i) % 2 else 1.0
        out[i - 1] = sign * v.coords[pos[jset]]
    return out


def jset(index_set, d):
    """The family {(J u {0}) \\ {j} : j in J} for an index set J avoiding 0."""
    index_set = tuple(sorted(index_set))
    if 0 in index_set:
        raise InvalidInput("index set must not contain 0")
    if any(not 1 <= j <= d for j in index_set):
        raise InvalidInput("indices must lie in 1..d")
    out = []
    for j in index_set:
        out.append(tuple(sorted((set(index_set) | {0}) - {j})))
    return out


def _wedge_norm(rows):
    """Norm of the wedge of the row vectors, via the Gram determinant."""
    g = rows @ rows.T
    det = np.linalg.det(g)
    return math.sqrt(max(det, 0.0))


def transversality_defect(v, index_set):
    """||wedge of the normals over jset(J)|| - |v_J|^|J|; provably >= 0."""
    index_set = tuple(sorted(index_set))
    d = v.n - 1
    if 0 in index_set:
        raise InvalidInput("index set must not contain 0")
    if len(index_set) != v.level:
        raise InvalidInput("index set size must equal the vector level")
    if d < v.level:
        raise InvalidInput("need ambient dimension >= vector level")
    normals = np.stack([normal_vector(v, iset) for iset in jset(index_set, d)])
    pos = _basis_pos(v.n, v.level)
    vj = abs(v.coords[pos[index_set]])
    return _wedge_norm(normals) - vj ** len(index_set)


def containment_check(planes, kappa, eps, samples, seed):
    """Sample the joint eps-neighborhood of transverse hyperplanes and verify
    that it sits inside the C*eps-neighborhood of their intersection.

    planes: list of (unit_normal, value) pairs describing {x: <n,x> = value}.
    The constant is C = kappa^(-1-1/l) * K^l with K = sqrt(l), since the
    stacked normal matrix has unit rows.
    """
    ell = len(planes)
    normals = np.stack([np.asarray(n, dtype=float) for n, _ in planes])
    values = np.array([float(c) for _, c in planes])
    d = normals.shape[1]
    if not 1 <= ell <= d - 1:
        raise PreconditionError(f"need 1 <= l <= d-1, got l={ell}, d={d}")
    if np.max(np.abs(np.linalg.norm(normals, axis=1) - 1.0)) > 1e-9:
        raise InvalidInput("normals must be unit vectors")
    if _wedge_norm(normals) < kappa - 1e-12:
        raise PreconditionError("wedge norm of the normals is below kappa")

    gram = normals @ normals.T
    try:
        w = normals.T @ np.linalg.solve(gram, np.eye(ell))  # residual lift: N (w b) = b
    except np.linalg.LinAlgError:
        raise InconsistentPrecondition("normal Gram matrix is numerically singular")
    x0 = w @ values
    if np.max(np.abs(normals @ x0 - values)) > 1e-8 * max(1.0, np.max(np.abs(values))):
        raise InconsistentPrecondition("intersection solve failed; transversality "
                                       "guarantees a non-empty intersection")
    # tangent frame of the intersection
    _, sv, vt = np.linalg.svd(normals)
    tangent = vt[ell:].T  # (d, d-ell)

    big_k = math.sqrt(ell)
    c_const = kappa ** (-1.0 - 1.0 / ell) * big_k**ell
    rng = np.random.default_rng(seed)
    a = rng.uniform(-1.0, 1.0, size=(samples, d - ell))
    b = rng.uniform(-eps, eps, size=(samples, ell))
    pts = x0 + a @ tangent.T + b @ w.T
    residuals = pts @ normals.T - values
    assert np.max(np.abs(residuals)) < eps * (1 + 1e-12)
    dists = np.linalg.norm(residuals @ w.T, axis=1)
    ratios = dists / eps
    violations = int(np.sum(dists > c_const * eps))
    return {
        "ell": ell,
        "kappa": float(kappa),
        "eps": float(eps),
        "samples": int(samples),
        "constant": c_const,
        "max_ratio": float(np.max(ratios)),
        "violations": violations,
        "seed": int(seed),
    }


def moment_exact(ifs, exponent, depth):
    """Exact cylinder quadrature of the ratio-cocycle moment at one depth."""
    base = float(np.sum(ifs.ratios ** (ifs.sim_dim + exponent)))
    return base**depth


def expansion_moment_audit(ifs, v, params, tau_depth, samples, seed):
    """Monte-Carlo check of the expansion integrability estimate.

    LHS integrates tau^gamma * ||g_tau u(x) v||^(-delta*lam) against the
    natural measure with tau(x) the depth-tau_depth ratio cocycle; the
    comparison shape is ||v||^(-delta*lam) * (exact tau^(p(gamma+kappa))
    moment)^(1/p). The reported ratio is the empirical constant.
    """
    if v.n != ifs.dim + 1:
        raise InvalidInput("vector ambient dimension must be ifs.dim + 1")
    if tau_depth < 1 or samples < 1:
        raise InvalidInput("tau_depth and samples must be >= 1")
    rng = np.random.default_rng(seed)
    extra = max(tau_depth, 30)
    words = sample_words(ifs, rng, extra, samples)
    pts = code_points(ifs, words)
    ratios = ifs.ratios
    taus = np.prod(ratios[words[:, :tau_depth]], axis=1)
    exponent = params.delta * params.lam
    vals = np.empty(samples)
    for i in range(samples):
        uv = apply_unipotent(pts[i], v)
        gv = apply_diagonal(taus[i], uv)
        vals[i] = taus[i] ** params.gamma * gv.norm() ** (-exponent)
    lhs_mean = float(np.mean(vals))
    lhs_stderr = float(np.std(vals, ddof=1) / math.sqrt(samples)) if samples > 1 else 0.0
    tail_moment = moment_exact(ifs, params.p * (params.gamma + params.kappa), tau_depth)
    rhs_shape = v.norm() ** (-exponent) * tail_moment ** (1.0 / params.p)
    ratio = lhs_mean / rhs_shape
    return {
        "lhs_mean": lhs_mean,
        "lhs_stderr": lhs_stderr,
        "lhs_upper3": lhs_mean + 3 * lhs_stderr,
        "rhs_shape": rhs_shape,
        "ratio": ratio,
        "ratio_upper3": (lhs_mean + 3 * lhs_stderr) / rhs_shape,
        "tau_depth": int(tau_depth),
        "samples": int(samples),
        "seed": int(seed),
        "params": {
            "d": params.d, "ell": params.ell, "delta": params.delta,
            "lam": params.lam, "gamma": params.gamma,
            "kappa": params.kappa, "p": params.p,
        },
    }
