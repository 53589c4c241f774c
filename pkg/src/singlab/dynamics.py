"""Orbit heights, cusp-excursion enumeration, and the contraction audit.

The renormalization flow g_t and the shear u(x) drive lattice orbits indexed
by fractal points; heights are Margulis functions of the flowed lattice.
Deep flows skew the basis badly, so height evaluation LLL-reduces first and
then enumerates a small coefficient box (an audit-grade estimate,
cross-checked against the certified search in tests).
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import BudgetExceeded, InvalidInput
from .exterior import (Lattice, _batch_wedge2_3x3, _half_box, exterior_matrix,
                       lll_reduce, margulis_height, phi_ell, set_norm)
from .ifs import assign_word, code_point, code_points, rho_cocycle, sample_words
from .util import parallel_map, rng_streams


def flow_matrix(t, d):
    """g_t = diag(t^(-d/(d+1)), t^(1/(d+1)) I_d); g_t g_s = g_ts."""
    if t <= 0:
        raise InvalidInput("flow time must be positive")
    out = np.eye(d + 1)
    out[0, 0] = t ** (-d / (d + 1))
    out[1:, 1:] *= t ** (1 / (d + 1))
    return out


def unipotent_matrix(x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = x.shape[0]
    out = np.eye(d + 1)
    out[0, 1:] = x
    return out


def _wedge2_3x3(m):
    """wedge^2 of a single 3x3 matrix, lex basis {01,02,12}."""
    return _batch_wedge2_3x3(m[None, :, :])[0]


def _phis_reduced(mat, radius=3):
    """phi_1..phi_d of one basis matrix: LLL first, then a small box.

    The wedge of an LLL-reduced 3x3 basis is itself near-reduced, so one
    reduction serves both levels. Missing the true minimizer can only
    understate phi, so audit quantities err on the contraction side; tests
    compare against the certified search.
    """
    n = mat.shape[0]
    red, _ = lll_reduce(mat)
    box = _half_box(n, radius).astype(float)
    out = [1.0 / float(np.min(np.linalg.norm(box @ red.T, axis=1)))]
    if n == 3:
        w = _wedge2_3x3(red)
        out.append(1.0 / float(np.min(np.linalg.norm(box @ w.T, axis=1))))
    elif n == 4:
        box6 = _half_box(6, radius)
        quad = box6[:, 0] * box6[:, 5] - box6[:, 1] * box6[:, 4] + box6[:, 2] * box6[:, 3]
        box6 = box6[quad == 0].astype(float)
        w2 = exterior_matrix(red, 2)
        out.append(1.0 / float(np.min(np.linalg.norm(box6 @ w2.T, axis=1))))
        w3 = exterior_matrix(red, 3)
        wred, _ = lll_reduce(w3)
        out.append(1.0 / float(np.min(np.linalg.norm(box @ wred.T, axis=1))))
    elif n != 2:
        raise InvalidInput("height evaluation covers n <= 4 (desk scale)")
    return np.array(out)


def _height_from_phis(phis, params):
    total = 2.0
    for ell in range(1, len(phis) + 1):
        total += params.eps**ell * phis[ell - 1] ** (params.rho_exp / params.betas[ell - 1])
    return total


def height_of_matrix(mat, params, radius=3):
    return _height_from_phis(_phis_reduced(mat, radius), params)


def _grouped_heights(ref_mat, mats, params, radius=3):
    """Heights for a batch sharing one reduction transform (one cylinder).

    Within a cylinder the matrices differ from the reference by a bounded
    extra shear, so the reference LLL transform keeps coefficients small.
    """
    n = ref_mat.shape[0]
    if n != 3:
        return np.array([height_of_matrix(m, params, radius) for m in mats])
    _, t1 = lll_reduce(ref_mat)
    box = _half_box(3, radius).astype(float)
    cand1 = box @ t1.T.astype(float)
    wref = exterior_matrix(ref_mat, 2)
    _, t2 = lll_reduce(wref)
    cand2 = box @ t2.T.astype(float)
    imgs1 = np.einsum("mij,kj->mki", mats, cand1)
    phi1 = 1.0 / np.min(np.linalg.norm(imgs1, axis=2), axis=1)
    wmats = _batch_wedge2_3x3(mats)
    imgs2 = np.einsum("mij,kj->mki", wmats, cand2)
    phi2 = 1.0 / np.min(np.linalg.norm(imgs2, axis=2), axis=1)
    heights = (2.0
               + params.eps * phi1 ** (params.rho_exp / params.betas[0])
               + params.eps**2 * phi2 ** (params.rho_exp / params.betas[1]))
    return heights


# ---------------------------------------------------------------------------
# orbit traces


@dataclass(frozen=True)
class ExcursionSpec:
    """Cusp-excursion bookkeeping: height cut M, N epochs of depth k, quota delta."""

    M: float
    N: int
    k: int
    delta: float
    gamma: float

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidInput("delta must lie in (0,1)")
        if self.N < 1 or self.k < 1:
            raise InvalidInput("N and k must be >= 1")
        if self.M <= 0:
            raise InvalidInput("M must be positive")


@dataclass
class OrbitTrace:
    point: np.ndarray
    base: Lattice
    epochs: list  # (l, rho(x, l*k), f value, phi tuple)


def orbit_heights(ifs, x, x0, params, spec, radius=3):
    """Trace f(g_rho(x,lk) u(x) x0) over epochs l = 0..N along one point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    d = ifs.dim
    word = assign_word(ifs, x, spec.N * spec.k)
    u_b = unipotent_matrix(x) @ x0.basis
    epochs = []
    for el in range(spec.N + 1):
        rho = rho_cocycle(ifs, word, el * spec.k)
        mat = flow_matrix(rho, d) @ u_b
        phis = _phis_reduced(mat, radius)
        epochs.append((el, rho, _height_from_phis(phis, params), tuple(phis)))
    return OrbitTrace(point=x, base=x0, epochs=epochs)


def divergence_fraction(trace, M):
    """Fraction of flowed epochs (l >= 1) with height at most M."""
    vals = [f for el, _, f, _ in trace.epochs if el >= 1]
    if not vals:
        raise InvalidInput("trace has no flowed epochs")
    return float(np.mean([f <= M for f in vals]))


# ---------------------------------------------------------------------------
# excursion-set enumeration


def enumerate_bad_words(ifs, x0, params, spec, budget_nodes=10**7, radius=3):
    """Depth-first cover of the excursion set by depth-(k*N) cylinders.

    A branch survives an epoch boundary when its representative point's height
    exceeds M; branches that can no longer reach the quota of delta*N bad
    epochs are pruned, and branches that already hold the quota accept their
    whole subtree. Soundness is up to the log-Lipschitz slack of the height,
    which the caller can measure with unipotent_slack.
    """
    d = ifs.dim
    m = ifs.nmaps
    quota = spec.delta * spec.N
    suffixes = list(itertools.product(range(m), repeat=spec.k))
    base = x0.basis
    nodes = 0
    accepted = []

    def emit_subtree(word, depth_left):
        nonlocal nodes
        count = m ** (spec.k * depth_left)
        if nodes + count > budget_nodes:
            raise BudgetExceeded("word budget exhausted", partial=sorted(accepted))
        nodes += count
        for tail in itertools.product(range(m), repeat=spec.k * depth_left):
            accepted.append(word + tail)

    stack = [((), 0.0, 0)]  # (word, bad count, epochs done)  rho from the word
    while stack:
        word, bad, done = stack.pop()
        rho_parent = rho_cocycle(ifs, word, len(word))
        children = [word + s for s in suffixes]
        words_arr = np.array(children, dtype=np.int64)
        reps = code_points(ifs, words_arr)
        rhos = rho_parent * np.array([math.prod(ifs.maps[sym].ratio for sym in s) for s in suffixes])
        if nodes + len(children) > budget_nodes:
            raise BudgetExceeded("node budget exhausted", partial=sorted(accepted))
        nodes += len(children)
        fvals = np.empty(len(children))
        for i, child in enumerate(children):
            mat = flow_matrix(rhos[i], d) @ unipotent_matrix(reps[i]) @ base
            fvals[i] = height_of_matrix(mat, params, radius)
        # descend in reverse so accepted words emerge in lexicographic order
        for i in range(len(children) - 1, -1, -1):
            nbad = bad + (1 if fvals[i] > spec.M else 0)
            left = spec.N - (done + 1)
            if nbad + left <= quota:
                continue  # cannot reach the quota even if all remaining epochs are bad
            if done + 1 == spec.N:
                if nbad > quota:
                    if nodes + 1 > budget_nodes:
                        raise BudgetExceeded("word budget exhausted", partial=sorted(accepted))
                    nodes += 1
                    accepted.append(children[i])
                continue
            if nbad > quota:
                emit_subtree(children[i], left)
            else:
                stack.append((children[i], nbad, done + 1))
    return sorted(accepted)


def hausdorff_sum(ifs, words, gamma):
    """sum over words of (diam_K * rho_w)^(s - gamma); words must share a length."""
    words = list(words)
    if not words:
        return 0.0
    length = len(words[0])
    if any(len(w) != length for w in words):
        raise InvalidInput("words must all have the same length")
    arr = np.array(words, dtype=np.int64)
    rhos = np.prod(ifs.ratios[arr], axis=1)
    return float(np.sum((ifs.diam_K * rhos) ** (ifs.sim_dim - gamma)))


def moment_identity_check(ifs, gamma, n):
    """Exact two-route ratio-cocycle moment: brute depth-n sum vs power formula."""
    if n > 10:
        raise InvalidInput("depth capped at 10 for the brute-force route")
    vals = ifs.ratios ** (ifs.sim_dim + gamma)
    lhs_terms = np.array([1.0])
    for _ in range(n):
        lhs_terms = np.multiply.outer(lhs_terms, vals).ravel()
    lhs = float(np.sum(lhs_terms))
    rhs = float(np.sum(vals)) ** n
    return lhs, rhs


# ---------------------------------------------------------------------------
# measured constants and the audit


def unipotent_slack(ifs, params, lattices, seed, shears_per=8, radius=3):
    """Measured log-Lipschitz constant of f under shears with norm <= 2R."""
    rng = np.random.default_rng(seed)
    d = ifs.dim
    worst = 1.0
    for lat in lattices:
        f0 = height_of_matrix(lat.basis, params, radius)
        for _ in range(shears_per):
            x = rng.normal(size=d)
            x *= rng.uniform(0, 2 * ifs.norm_bound) / max(np.linalg.norm(x), 1e-300)
            f1 = height_of_matrix(unipotent_matrix(x) @ lat.basis, params, radius)
            worst = max(worst, f1 / f0, f0 / f1)
    return worst


def lattice_panel(n, count, seed, max_log_depth=6.0):
    """Deterministic unimodular panel sweeping from the bulk into the cusp.

    Only a left rotation is applied: rotating the integer points on the right
    would relabel the lattice and wash out the short vectors that set the
    cusp depth.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(count):
        depth = max_log_depth * i / max(count - 1, 1)
        diag = np.full(n, math.exp(depth / (n - 1)) if n > 1 else 1.0)
        diag[0] = math.exp(-depth)
        q1, _ = np.linalg.qr(rng.normal(size=(n, n)))
        q1 *= np.sign(np.linalg.det(q1))
        basis = q1 @ np.diag(diag)
        basis /= abs(np.linalg.det(basis)) ** (1.0 / n)
        out.append(Lattice(basis))
    return out


def drift_moment(ifs, k):
    """Exact contraction drift: integral of rho(., k) equals (sum ratio^(s+1))^k."""
    return float(np.sum(ifs.ratios ** (ifs.sim_dim + 1.0))) ** k


def suggest_eps(ifs, params, k, sample_depth=12):
    """Height scale epsilon chosen per epoch depth k, mirroring the proof recipe
    eps^(1/d) = a / (omega_0^(2 varpi) d) with the expansion constant set to 1.

    The recipe collapses fast with k (the flow set's operator norms blow up),
    so audits usually pin a practical epsilon; this reports the faithful one.
    """
    d = ifs.dim
    p = (1 + params.rho_exp) / (1 - params.rho_exp)
    kappa = params.rho_exp * params.beta
    a = float(np.sum(ifs.ratios ** (ifs.sim_dim + p * (kappa - params.gamma)))) ** (k / p)
    words = np.array(list(itertools.product(range(ifs.nmaps), repeat=k)), dtype=np.int64)
    reps = code_points(ifs, words)
    rhos = np.prod(ifs.ratios[words], axis=1)
    mats = [flow_matrix(r, d) @ unipotent_matrix(x) for r, x in zip(rhos, reps)]
    omega = set_norm(mats)
    omega0 = omega * float(np.max(rhos**params.gamma))
    eps = (a / (omega0 ** (2 * params.varpi) * d)) ** d
    return min(max(eps, 1e-12), 0.999)


def xi_zeta(ifs, gamma, varrho_beta):
    """One-step moments entering the decay criterion at a given exponent."""
    xi = float(np.sum(ifs.ratios ** (ifs.sim_dim - gamma)))
    zeta = float(np.sum(ifs.ratios ** (ifs.sim_dim + 1.0))) ** (varrho_beta - gamma)
    return xi, zeta


def criterion_scan(ifs, params, k, c0, gamma_grid=24, delta_grid=(0.5, 0.75, 0.9, 0.95, 0.99)):
    """Minimize c0 * (zeta^delta xi^(1-delta))^k over admissible (gamma', delta).

    The decay criterion needs gamma' strictly inside (0, rho_exp*beta); at the
    top endpoint zeta = 1 and no k can satisfy it, so the scan searches the
    open range the decay theorem actually uses.
    """
    top = params.rho_exp * params.beta
    out = {"value": np.inf, "gamma": None, "delta": None}
    for g in np.linspace(top / gamma_grid, top * (1 - 1.0 / gamma_grid), gamma_grid):
        xi, zeta = xi_zeta(ifs, g, top)
        for dl in delta_grid:
            val = c0 * (zeta**dl * xi ** (1 - dl)) ** k
            if val < out["value"]:
                out = {"value": float(val), "gamma": float(g), "delta": float(dl)}
    out["holds"] = bool(out["value"] < 1.0)
    out["c0"] = float(c0)
    out["k"] = int(k)
    return out


def contraction_audit(ifs, params, k, y_samples, mc_per_cylinder, seed,
                      radius=3, suffix_depth=24, fit_quantile=0.5, threads=1,
                      slack_emp=None):
    """Audit the averaged height-contraction inequality over a lattice panel.

    For each panel lattice y the left side sums rho_w^(s-gamma) times the
    Monte-Carlo mean of f(g_rho_w u(x) y) over the cylinder, x drawn from the
    normalized restriction of the measure by suffix sampling. The smallest
    (c, T) with LHS <= c f(y) drift^(rho_exp*beta-gamma) for all f(y) > T is
    fitted with T at the requested quantile of panel heights, and the decay
    criterion is scanned with c0 equal to the fitted constant.
    """
    d = ifs.dim
    m = ifs.nmaps
    n_words = m**k
    words = np.array(list(itertools.product(range(m), repeat=k)), dtype=np.int64)
    rhos = np.prod(ifs.ratios[words], axis=1)
    masses = rhos**ifs.sim_dim
    rng = np.random.default_rng(seed)
    suffix = sample_words(ifs, rng, suffix_depth, n_words * mc_per_cylinder)
    full = np.concatenate(
        [np.repeat(words, mc_per_cylinder, axis=0), suffix], axis=1
    )
    pts = code_points(ifs, full).reshape(n_words, mc_per_cylinder, d)
    rep_pts = code_points(ifs, words)

    gamma = params.gamma
    drift = drift_moment(ifs, k)
    denom_scale = drift ** (params.rho_exp * params.beta - gamma)
    scale0 = rhos ** (-d / (d + 1))
    scale1 = rhos ** (1 / (d + 1))
    weights = rhos ** (ifs.sim_dim - gamma)

    def audit_one(lat):
        base = lat.basis
        f_y = height_of_matrix(base, params, radius)
        lhs = 0.0
        var = 0.0
        lower = base[1:, :]
        row0 = base[0, :]
        for w in range(n_words):
            # g_rho u(x) base: row 0 is scaled (base[0] + x . base[1:]),
            # the remaining rows are scaled base rows
            ref = np.empty((d + 1, d + 1))
            ref[0] = scale0[w] * (row0 + rep_pts[w] @ lower)
            ref[1:] = scale1[w] * lower
            mats = np.empty((mc_per_cylinder, d + 1, d + 1))
            mats[:, 0, :] = scale0[w] * (row0 + pts[w] @ lower)
            mats[:, 1:, :] = scale1[w] * lower
            f_vals = _grouped_heights(ref, mats, params, radius)
            mean = float(np.mean(f_vals))
            lhs += weights[w] * mean
            if mc_per_cylinder > 1:
                var += weights[w] ** 2 * float(np.var(f_vals, ddof=1)) / mc_per_cylinder
        stderr = math.sqrt(var)
        denom = f_y * denom_scale
        return {
            "f_y": f_y,
            "lhs": lhs,
            "stderr": stderr,
            "ratio": lhs / denom,
            "ratio_adj": max(lhs - 3 * stderr, 0.0) / denom,
        }

    rows = parallel_map(audit_one, y_samples, threads)
    f_vals = np.array([r["f_y"] for r in rows])
    ratios = np.array([r["ratio"] for r in rows])
    ratios_adj = np.array([r["ratio_adj"] for r in rows])
    t_fit = float(np.quantile(f_vals, fit_quantile))
    above = f_vals > t_fit
    if not np.any(above):
        above = f_vals >= np.min(f_vals)
        t_fit = float(np.min(f_vals)) - 1e-12
    c_fit = float(np.max(ratios[above]))
    c_fit_adj = float(np.max(ratios_adj[above]))
    scan = criterion_scan(ifs, params, k, c0=c_fit)
    report = {
        "k": int(k),
        "gamma": gamma,
        "eps": params.eps,
        "rho_exp": params.rho_exp,
        "drift": drift,
        "denom_scale": denom_scale,
        "seed": int(seed),
        "mc_per_cylinder": int(mc_per_cylinder),
        "radius": int(radius),
        "rows": rows,
        "T": t_fit,
        "c": c_fit,
        "c_adj": c_fit_adj,
        "criterion": scan,
        "panel_size": len(y_samples),
    }
    ratios_eq = ifs.ratios
    if np.allclose(ratios_eq, ratios_eq[0]):
        rho1 = float(ratios_eq[0])
        factor = c_fit * rho1 ** (k * params.rho_exp * params.beta)
        report["classical_factor"] = factor
        report["classical_contracts"] = bool(factor < 1.0)
    if slack_emp is not None:
        report["slack_emp"] = float(slack_emp)
        report["criterion_paper_form"] = criterion_scan(
            ifs, params, k, c0=2.0 * (c_fit * slack_emp) ** 3
        )
    return report


def dimension_estimate(ifs, x0, params, spec, n_values, budget_nodes=10**7,
                       radius=3, criterion_c0=1.0):
    """Hausdorff-sum decay over the excursion sets as the epoch count grows.

    Reports the cover sums at each N, the fitted geometric log-rate, and the
    decay criterion evaluated at the sweep's own (gamma, delta).
    """
    results = []
    truncated = False
    for n_epochs in sorted(n_values):
        spec_n = ExcursionSpec(M=spec.M, N=int(n_epochs), k=spec.k,
                               delta=spec.delta, gamma=spec.gamma)
        try:
            words = enumerate_bad_words(ifs, x0, params, spec_n,
                                        budget_nodes=budget_nodes, radius=radius)
        except BudgetExceeded as exc:
            words = exc.partial or []
            truncated = True
        results.append({
            "N": int(n_epochs),
            "count": len(words),
            "sum": hausdorff_sum(ifs, words, spec.gamma),
            "truncated": truncated,
        })
        if truncated:
            break
    xs = [r["N"] for r in results if r["sum"] > 0]
    ys = [math.log(r["sum"]) for r in results if r["sum"] > 0]
    rate = None
    if len(xs) >= 2:
        slope, _ = np.polyfit(xs, ys, 1)
        rate = float(slope)
    xi, zeta = xi_zeta(ifs, spec.gamma, params.rho_exp * params.beta)
    eta = zeta**spec.delta * xi ** (1 - spec.delta)
    crit_value = criterion_c0 * eta**spec.k
    return {
        "rows": results,
        "log_rate": rate,
        "monotone_decreasing": all(
            a["sum"] > b["sum"] for a, b in zip(results, results[1:])
        ),
        "criterion_value": float(crit_value),
        "criterion_holds": bool(crit_value < 1.0),
        "xi": xi,
        "zeta": zeta,
        "truncated": truncated,
        "budget_nodes": int(budget_nodes),
        "spec": {"M": spec.M, "k": spec.k, "delta": spec.delta, "gamma": spec.gamma},
    }
