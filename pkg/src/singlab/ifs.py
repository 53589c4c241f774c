"""Iterated function systems of contractive similarities.

Covers the system bundle (maps, similarity dimension, certified attractor
enclosure), cylinder combinatorics over finite words, the contraction-ratio
cocycle, disjointified word assignment, complete prefix sets, and seeded
sampling of the natural self-similar measure.
"""

import math
import re
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import InvalidInput, OutsideAttractor

TOL_GEOM = 1e-9

Word = tuple  # finite sequence of symbol indices; tuples compare lexicographically


@dataclass(frozen=True)
class SimilarityMap:
    """x -> ratio * rotation @ x + translation with ratio in (0,1), rotation in SO(d)."""

    ratio: float
    rotation: np.ndarray
    translation: np.ndarray
    exact: tuple = None  # optional (Fraction ratio, int rotation rows, Fraction translation)

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        tr = np.atleast_1d(np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)
        # word compositions may yield the identity (empty word), so allow ratio 1;
        # build_system enforces strict contraction for the generating maps
        if not 0.0 < self.ratio <= 1.0:
            raise InvalidInput(f"ratio must lie in (0,1], got {self.ratio}")
        d = tr.shape[0]
        if rot.shape != (d, d):
            raise InvalidInput(f"rotation shape {rot.shape} incompatible with dimension {d}")
        if np.max(np.abs(rot.T @ rot - np.eye(d))) > 1e-10:
            raise InvalidInput("rotation is not orthogonal within 1e-10")
        if abs(np.linalg.det(rot) - 1.0) > 1e-10:
            raise InvalidInput("rotation must have determinant +1 within 1e-10")

    @property
    def dim(self):
        return self.translation.shape[0]

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.ratio * (x @ self.rotation.T) + self.translation

    def fixed_point(self):
        d = self.dim
        return np.linalg.solve(np.eye(d) - self.ratio * self.rotation, self.translation)


def _exact_map(ratio_q, rot_int, trans_q):
    """SimilarityMap carrying exact rational data (signed-permutation rotation)."""
    d = len(trans_q)
    return SimilarityMap(
        ratio=float(ratio_q),
        rotation=np.array(rot_int, dtype=float),
        translation=np.array([float(t) for t in trans_q]),
        exact=(ratio_q, tuple(tuple(r) for r in rot_int), tuple(trans_q)),
    )


def similarity_dimension(maps):
    """Solve sum(ratio_i^s) = 1 by bisection on [0, d+1]."""
    if not maps:
        raise InvalidInput("need at least one map")
    ratios = np.array([m.ratio for m in maps], dtype=float)
    if np.any(ratios <= 0) or np.any(ratios >= 1):
        raise InvalidInput("ratios must lie in (0,1)")
    d = maps[0].dim

    def f(s):
        return float(np.sum(ratios**s)) - 1.0

    lo, hi = 0.0, float(d + 1)
    if f(lo) < -1e-12:
        return 0.0  # single map: s = 0 is the root
    if f(hi) > 0:
        raise InvalidInput("similarity dimension exceeds d+1; not an OSC system")
    mid = 0.5 * (lo + hi)
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    s = 0.5 * (lo + hi)
    for _ in range(4):  # Newton polish to machine precision
        fs = f(s)
        dfs = float(np.sum(ratios**s * np.log(ratios)))
        if dfs == 0:
            break
        s -= fs / dfs
    return s


def _is_signed_permutation(rot):
    a = np.abs(rot)
    close = np.isclose(a, 0.0, atol=1e-12) | np.isclose(a, 1.0, atol=1e-12)
    if not np.all(close):
        return False
    ones = np.isclose(a, 1.0, atol=1e-12)
    return np.all(ones.sum(axis=0) == 1) and np.all(ones.sum(axis=1) == 1)


def _attractor_box(maps, iters=600, tol=1e-13):
    """Iterate the bounding-box map B -> bbox(union h_i(B)) to a stable enclosure."""
    d = maps[0].dim
    scale = max(1.0, max(float(np.linalg.norm(m.translation)) for m in maps))
    rmax = max(m.ratio for m in maps)
    big = 10.0 * scale / (1.0 - rmax)
    lo = np.full(d, -big)
    hi = np.full(d, big)
    for _ in range(iters):
        c = 0.5 * (lo + hi)
        h = 0.5 * (hi - lo)
        new_lo = np.full(d, np.inf)
        new_hi = np.full(d, -np.inf)
        for m in maps:
            a = m.ratio * m.rotation
            ci = a @ c + m.translation
            hw = np.abs(a) @ h
            new_lo = np.minimum(new_lo, ci - hw)
            new_hi = np.maximum(new_hi, ci + hw)
        if np.max(np.abs(new_lo - lo)) < tol and np.max(np.abs(new_hi - hi)) < tol:
            lo, hi = new_lo, new_hi
            break
        lo, hi = new_lo, new_hi
    return lo, hi


def _verify_exact_box(maps, box_exact):
    """Exact check that the rational box is invariant under every map."""
    lo, hi = box_exact
    d = len(lo)
    for m in maps:
        if m.exact is None:
            raise InvalidInput("exact box given but a map carries no exact data")
        rq, rot, tq = m.exact
        a = tuple(rq * sum(rot[i][j] * lo[j] for j in range(d)) + tq[i] for i in range(d))
        b = tuple(rq * sum(rot[i][j] * hi[j] for j in range(d)) + tq[i] for i in range(d))
        img_lo = tuple(min(ai, bi) for ai, bi in zip(a, b))
        img_hi = tuple(max(ai, bi) for ai, bi in zip(a, b))
        if any(img_lo[i] < lo[i] or img_hi[i] > hi[i] for i in range(d)):
            raise InvalidInput("exact box is not invariant under the maps")


@dataclass(frozen=True)
class IfsSystem:
    """An IFS with derived metadata: similarity dimension and certified enclosure."""

    dim: int
    maps: tuple
    sim_dim: float
    diam_K: float
    norm_bound: float
    osc_witness: tuple = None  # (lo, hi) corners of an axis box, or None
    box_lo: np.ndarray = None
    box_hi: np.ndarray = None
    box_exact: tuple = None  # optional (lo, hi) Fraction tuples
    axis_aligned: bool = False

    @property
    def nmaps(self):
        return len(self.maps)

    @property
    def ratios(self):
        return np.array([m.ratio for m in self.maps])

    @property
    def weights(self):
        """Natural probability vector (ratio_i^s)."""
        w = self.ratios**self.sim_dim
        return w / w.sum()

    @property
    def ball_center(self):
        return 0.5 * (self.box_lo + self.box_hi)

    @property
    def ball_radius(self):
        return 0.5 * float(np.linalg.norm(self.box_hi - self.box_lo))

    @property
    def has_exact(self):
        return self.box_exact is not None and all(m.exact is not None for m in self.maps)


def build_system(maps, osc_witness=None, box_exact=None):
    """Assemble an IfsSystem, certifying diam/norm bounds by interval enclosure."""
    maps = tuple(maps)
    if not maps:
        raise InvalidInput("need at least one map")
    d = maps[0].dim
    if any(m.dim != d for m in maps):
        raise InvalidInput("all maps must share one dimension")
    if any(m.ratio >= 1.0 for m in maps):
        raise InvalidInput("every generating map must be strictly contractive")
    s = similarity_dimension(maps)
    if box_exact is not None:
        _verify_exact_box(maps, box_exact)
        lo = np.array([float(v) for v in box_exact[0]])
        hi = np.array([float(v) for v in box_exact[1]])
    else:
        lo, hi = _attractor_box(maps)
    diam = float(np.linalg.norm(hi - lo))
    corners = np.array(np.meshgrid(*zip(lo, hi))).reshape(d, -1).T if d > 1 else np.array([[lo[0]], [hi[0]]])
    norm_bound = float(np.max(np.linalg.norm(corners, axis=1)))
    axis = all(_is_signed_permutation(m.rotation) for m in maps)
    sys = IfsSystem(
        dim=d,
        maps=maps,
        sim_dim=s,
        diam_K=diam,
        norm_bound=norm_bound,
        osc_witness=osc_witness,
        box_lo=lo,
        box_hi=hi,
        box_exact=box_exact,
        axis_aligned=axis,
    )
    if osc_witness is not None:
        check_osc_witness(sys)
    return sys


def check_osc_witness(ifs, tol=TOL_GEOM):
    """Interval-arithmetic check that the witness box maps inside itself disjointly."""
    lo = np.asarray(ifs.osc_witness[0], dtype=float)
    hi = np.asarray(ifs.osc_witness[1], dtype=float)
    c = 0.5 * (lo + hi)
    h = 0.5 * (hi - lo)
    images = []
    for m in ifs.maps:
        a = m.ratio * m.rotation
        ci = a @ c + m.translation
        hi_img = np.abs(a) @ h
        if np.any(ci - hi_img < lo - tol) or np.any(ci + hi_img > hi + tol):
            raise InvalidInput("osc witness box is not mapped into itself")
        images.append((ci - hi_img, ci + hi_img))
    for i in range(len(images)):
        for j in range(i + 1, len(images)):
            lo1, hi1 = images[i]
            lo2, hi2 = images[j]
            if np.all(np.maximum(lo1, lo2) < np.minimum(hi1, hi2) - tol):
                raise InvalidInput(f"osc witness images {i} and {j} overlap")
    return True


# ---------------------------------------------------------------------------
# word operations


def compose_word(ifs, word):
    """Composite map h_w = h_{w1} o ... o h_{wk}; the empty word is the identity."""
    d = ifs.dim
    a = np.eye(d)
    b = np.zeros(d)
    ratio = 1.0
    for sym in word:
        if not 0 <= sym < ifs.nmaps:
            raise InvalidInput(f"symbol {sym} out of range")
        m = ifs.maps[sym]
        mi = m.ratio * m.rotation
        b = a @ m.translation + b
        a = a @ mi
        ratio *= m.ratio
    rot = a / ratio
    return SimilarityMap(ratio=ratio, rotation=rot, translation=b)


def rho_cocycle(ifs, word, n):
    """Product of the first n contraction ratios along the word."""
    if n > len(word) or n < 0:
        raise InvalidInput(f"n={n} exceeds word length {len(word)}")
    out = 1.0
    for sym in word[:n]:
        if not 0 <= sym < ifs.nmaps:
            raise InvalidInput(f"symbol {sym} out of range")
        out *= ifs.maps[sym].ratio
    return out


@dataclass(frozen=True)
class CylinderInfo:
    word: Word
    map: SimilarityMap
    diameter: float
    mass: float


def cylinder_info(ifs, word):
    h = compose_word(ifs, word)
    rho = rho_cocycle(ifs, word, len(word))
    return CylinderInfo(word=tuple(word), map=h, diameter=ifs.diam_K * rho, mass=rho**ifs.sim_dim)


def code_point(ifs, word):
    """Point of the attractor coded by the word, anchored at the last map's fixed point.

    The error against the true coded limit of any infinite extension is at
    most diam_K * rho_w.
    """
    if len(word) < 1:
        raise InvalidInput("word must be non-empty")
    for sym in word:
        if not 0 <= sym < ifs.nmaps:
            raise InvalidInput(f"symbol {sym} out of range")
    x = ifs.maps[word[-1]].fixed_point()
    for sym in reversed(word[:-1]):
        x = ifs.maps[sym](x)
    return x


def code_points(ifs, words):
    """Vectorized code_point over an (n, depth) array of symbol indices."""
    words = np.asarray(words, dtype=np.int64)
    anchors = np.stack([m.fixed_point() for m in ifs.maps])
    pts = anchors[words[:, -1]]
    for j in range(words.shape[1] - 2, -1, -1):
        syms = words[:, j]
        for i, m in enumerate(ifs.maps):
            sel = syms == i
            if np.any(sel):
                pts[sel] = m.ratio * (pts[sel] @ m.rotation.T) + m.translation
    return pts


def sample_measure(ifs, seed, depth, count):
    """i.i.d. samples of the natural measure truncated at the given depth."""
    if depth < 1 or count < 1:
        raise InvalidInput("depth and count must be >= 1")
    rng = np.random.default_rng(seed)
    words = rng.choice(ifs.nmaps, size=(count, depth), p=ifs.weights)
    return code_points(ifs, words)


def sample_words(ifs, rng, depth, count):
    return rng.choice(ifs.nmaps, size=(count, depth), p=ifs.weights)


# ---------------------------------------------------------------------------
# disjointified assignment and prefix sets


def _cylinder_encloses(ifs, word_map, x, tol):
    if ifs.axis_aligned:
        c0 = ifs.ball_center
        h0 = 0.5 * (ifs.box_hi - ifs.box_lo)
        a = word_map.ratio * word_map.rotation
        c = a @ c0 + word_map.translation
        h = np.abs(a) @ h0
        return bool(np.all(x >= c - h - tol) and np.all(x <= c + h + tol))
    c = word_map(ifs.ball_center)
    return bool(np.linalg.norm(x - c) <= word_map.ratio * ifs.ball_radius + tol)


def assign_word(ifs, x, n, tol=TOL_GEOM):
    """The unique depth-n word whose disjointified cylinder owns x.

    Ownership gives overlap points to the lexicographically greatest cylinder
    containing them. Since owners refine (the depth-(m+1) owner extends the
    depth-m owner), the word is built by greedy descent: at each level pick
    the greatest child whose enclosure contains x.
    """
    x = np.asarray(x, dtype=float)
    if not _cylinder_encloses(ifs, compose_word(ifs, ()), x, tol):
        raise OutsideAttractor("point is not within tolerance of the attractor enclosure")
    word = []
    a = np.eye(ifs.dim)
    b = np.zeros(ifs.dim)
    rho = 1.0
    for _ in range(n):
        chosen = None
        for sym in range(ifs.nmaps - 1, -1, -1):
            m = ifs.maps[sym]
            ca = a @ (m.ratio * m.rotation)
            cb = a @ m.translation + b
            cr = rho * m.ratio
            cand = SimilarityMap(ratio=cr, rotation=ca / cr, translation=cb)
            if _cylinder_encloses(ifs, cand, x, tol):
                chosen = (sym, ca, cb, cr)
                break
        if chosen is None:
            raise OutsideAttractor("no child cylinder encloses the point")
        sym, a, b, rho = chosen
        word.append(sym)
    return tuple(word)


def assign_word_exact(ifs, x, n):
    """Exact-rational word assignment for axis-aligned rational systems."""
    if not ifs.has_exact:
        raise InvalidInput("system carries no exact rational data")
    x = tuple(Fraction(v) for v in x)
    lo0, hi0 = ifs.box_exact
    d = ifs.dim

    def apply_exact(m, pt):
        rq, rot, tq = m.exact
        return tuple(rq * sum(rot[i][j] * pt[j] for j in range(d)) + tq[i] for i in range(d))

    def box_of(word):
        # signed-permutation maps send the corner pair to a corner pair
        a, b = lo0, hi0
        for sym in reversed(word):
            a = apply_exact(ifs.maps[sym], a)
            b = apply_exact(ifs.maps[sym], b)
        lo = tuple(min(ai, bi) for ai, bi in zip(a, b))
        hi = tuple(max(ai, bi) for ai, bi in zip(a, b))
        return lo, hi

    if not all(lo0[i] <= x[i] <= hi0[i] for i in range(d)):
        raise OutsideAttractor("point outside exact attractor box")
    word = []
    for _ in range(n):
        for sym in range(ifs.nmaps - 1, -1, -1):
            lo, hi = box_of(word + [sym])
            if all(lo[i] <= x[i] <= hi[i] for i in range(d)):
                word.append(sym)
                break
        else:
            raise OutsideAttractor("no exact cylinder contains the point")
    return tuple(word)


def complete_prefix_set(ifs, eps):
    """Prefix-free complete antichain {w : rho_w <= eps < rho_parent(w)}."""
    if not 0 < eps < 1:
        raise InvalidInput("eps must lie in (0,1)")
    out = []
    stack = [((), 1.0)]
    while stack:
        word, rho = stack.pop()
        if rho <= eps:
            out.append(word)
            continue
        for sym in range(ifs.nmaps - 1, -1, -1):
            stack.append((word + (sym,), rho * ifs.maps[sym].ratio))
    return sorted(out)


# ---------------------------------------------------------------------------
# cylinder clouds (bulk geometry used by the exponent estimators)


@dataclass
class CylinderCloud:
    """Bulk arrays for a family of cylinders: enclosing balls, masses, boxes."""

    words: object  # (n, depth) int array for uniform depth, else list of tuples
    centers: np.ndarray
    radii: np.ndarray
    masses: np.ndarray
    box_lo: np.ndarray = None
    box_hi: np.ndarray = None

    def __len__(self):
        return len(self.masses)


def cylinder_cloud(ifs, eps=None, depth=None):
    """Cloud for the complete prefix set at scale eps, or for all words at a depth."""
    if (eps is None) == (depth is None):
        raise InvalidInput("give exactly one of eps or depth")
    d = ifs.dim
    c0 = ifs.ball_center
    r0 = ifs.ball_radius
    h0 = 0.5 * (ifs.box_hi - ifs.box_lo)
    ratios = ifs.ratios
    if depth is None:
        equal = np.allclose(ratios, ratios[0])
        if equal:
            depth = int(math.ceil(math.log(eps) / math.log(float(ratios[0])) - 1e-12))
            depth = max(depth, 1)
        else:
            return _cloud_dfs(ifs, eps)
    # uniform depth: level-wise composition, vectorized over words
    a_list = np.stack([m.ratio * m.rotation for m in ifs.maps])
    b_list = np.stack([m.translation for m in ifs.maps])
    a = np.eye(d)[None, :, :]
    b = np.zeros((1, d))
    words = np.zeros((1, 0), dtype=np.int64)
    for _ in range(depth):
        n = a.shape[0]
        m = ifs.nmaps
        new_a = np.einsum("nij,mjk->nmik", a, a_list).reshape(n * m, d, d)
        new_b = (np.einsum("nij,mj->nmi", a, b_list) + b[:, None, :]).reshape(n * m, d)
        words = np.concatenate(
            [np.repeat(words, m, axis=0), np.tile(np.arange(m), n)[:, None]], axis=1
        )
        a, b = new_a, new_b
    rho = np.prod(ratios[words], axis=1) if depth > 0 else np.ones(1)
    centers = np.einsum("nij,j->ni", a, c0) + b
    cloud = CylinderCloud(
        words=words,
        centers=centers,
        radii=rho * r0,
        masses=rho**ifs.sim_dim,
        box_lo=None,
        box_hi=None,
    )
    if ifs.axis_aligned:
        hw = np.einsum("nij,j->ni", np.abs(a), h0)
        cloud.box_lo = centers - hw
        cloud.box_hi = centers + hw
    return cloud


def _cloud_dfs(ifs, eps):
    d = ifs.dim
    c0 = ifs.ball_center
    r0 = ifs.ball_radius
    h0 = 0.5 * (ifs.box_hi - ifs.box_lo)
    words, centers, radii, masses, lows, highs = [], [], [], [], [], []
    stack = [((), 1.0, np.eye(d), np.zeros(d))]
    while stack:
        word, rho, a, b = stack.pop()
        if rho <= eps:
            words.append(word)
            centers.append(a @ c0 + b)
            radii.append(rho * r0)
            masses.append(rho**ifs.sim_dim)
            if ifs.axis_aligned:
                hw = np.abs(a) @ h0
                lows.append(centers[-1] - hw)
                highs.append(centers[-1] + hw)
            continue
        for sym in range(ifs.nmaps - 1, -1, -1):
            m = ifs.maps[sym]
            stack.append((word + (sym,), rho * m.ratio, a @ (m.ratio * m.rotation), a @ m.translation + b))
    return CylinderCloud(
        words=words,
        centers=np.array(centers),
        radii=np.array(radii),
        masses=np.array(masses),
        box_lo=np.array(lows) if lows else None,
        box_hi=np.array(highs) if highs else None,
    )


# ---------------------------------------------------------------------------
# presets


def _cantor3():
    one_third = Fraction(1, 3)
    maps = [
        _exact_map(one_third, [[1]], (Fraction(0),)),
        _exact_map(one_third, [[1]], (Fraction(2, 3),)),
    ]
    box = ((Fraction(0),), (Fraction(1),))
    return build_system(maps, osc_witness=([0.0], [1.0]), box_exact=box)


def _cantor3x3():
    one_third = Fraction(1, 3)
    eye = [[1, 0], [0, 1]]
    shifts = [(Fraction(0), Fraction(0)), (Fraction(0), Fraction(2, 3)),
              (Fraction(2, 3), Fraction(0)), (Fraction(2, 3), Fraction(2, 3))]
    maps = [_exact_map(one_third, eye, b) for b in shifts]
    box = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1)))
    return build_system(maps, osc_witness=([0.0, 0.0], [1.0, 1.0]), box_exact=box)


def _sierpinski3():
    half = Fraction(1, 2)
    eye = [[1, 0], [0, 1]]
    shifts = [(Fraction(0), Fraction(0)), (Fraction(0), half), (half, Fraction(0))]
    maps = [_exact_map(half, eye, b) for b in shifts]
    box = ((Fraction(0), Fraction(0)), (Fraction(1), Fraction(1)))
    return build_system(maps, osc_witness=([0.0, 0.0], [1.0, 1.0]), box_exact=box)


def _homog(rho, alpha, k):
    if not 0 < rho < 1 or k < 2:
        raise InvalidInput("homog preset needs 0 < rho < 1 and k >= 2 maps")
    if math.sin(math.pi / k) < rho / (1.0 - rho) - 1e-12:
        raise InvalidInput(
            "homog translations on the unit circle violate the ball separation "
            f"condition sin(pi/k) >= rho/(1-rho) for rho={rho}, k={k}"
        )
    rot = np.array([[math.cos(alpha), -math.sin(alpha)], [math.sin(alpha), math.cos(alpha)]])
    maps = [
        SimilarityMap(
            ratio=rho,
            rotation=rot,
            translation=np.array([math.cos(2 * math.pi * i / k), math.sin(2 * math.pi * i / k)]),
        )
        for i in range(k)
    ]
    return build_system(maps)


_HOMOG_RE = re.compile(r"^homog\(\s*([0-9.eE+-]+)\s*,\s*([0-9.eE+-]+)\s*,\s*(\d+)\s*\)$")

PRESETS = ("cantor3", "cantor3x3", "sierpinski3", "homog(rho, alpha_rad, k_maps)")


def preset(name):
    """Built-in systems by name; homog takes parenthesized parameters."""
    if name == "cantor3":
        return _cantor3()
    if name == "cantor3x3":
        return _cantor3x3()
    if name == "sierpinski3":
        return _sierpinski3()
    m = _HOMOG_RE.match(name.replace(" ", ""))
    if m:
        return _homog(float(m.group(1)), float(m.group(2)), int(m.group(3)))
    raise InvalidInput(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")


KNOWN_ALPHAS = {
    # exact subspace-concentration exponents for the rigid presets
    "cantor3": (math.log(2) / math.log(3),),
    "cantor3x3": (math.log(2) / math.log(3), 2 * math.log(2) / math.log(3)),
}
