"""Finite-dimensional real cones, their canonical complexification and projective metrics."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, EstimateUnavailable

REL_TOL = 1e-12
INF = math.inf


@dataclass(frozen=True)
class ConeSpec:
    """Closed convex cone {v : <l, v> >= 0 for every row l of ``generators``}."""

    generators: np.ndarray
    preset: str = "custom"
    extreme_rays: np.ndarray | None = None  # columns, when known in closed form
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        L = np.atleast_2d(np.asarray(self.generators, dtype=float))
        if L.size == 0:
            raise DomainError("a cone needs at least one dual generator")
        norms = np.linalg.norm(L, axis=1)
        if np.any(norms == 0):
            raise DomainError(f"dual generator {int(np.argmin(norms))} is the zero functional")
        object.__setattr__(self, "generators", L)
        object.__setattr__(self, "_norms", norms)

    @property
    def dimension(self) -> int:
        return self.generators.shape[1]

    @property
    def norms(self) -> np.ndarray:
        return self._norms

    @classmethod
    def standard_positive(cls, d: int) -> "ConeSpec":
        if d < 1:
            raise DomainError("dimension must be positive")
        eye = np.eye(d)
        return cls(eye, preset="standard_positive", extreme_rays=eye, params={"dimension": d})

    @classmethod
    def lipschitz_grid(cls, B: float, dist) -> "ConeSpec":
        """Generators u -> e^{B d(x,y)} u(y) - u(x) for grid points x != y, plus u(x) >= 0."""
        D = np.asarray(dist, dtype=float)
        n = D.shape[0]
        if D.shape != (n, n) or n < 1:
            raise DomainError("distance matrix must be square")
        if B < 0:
            raise DomainError("B must be nonnegative")
        xi, yi = np.nonzero(~np.eye(n, dtype=bool))
        rows = np.zeros((xi.size + n, n))
        k = np.arange(xi.size)
        rows[k, yi] = np.exp(B * D[xi, yi])
        rows[k, xi] -= 1.0
        rows[xi.size + np.arange(n), np.arange(n)] = 1.0
        return cls(rows, preset="lipschitz_grid", params={"B": B, "points": n})

    def values(self, v) -> np.ndarray:
        return self.generators @ v

    def tolerances(self, v) -> np.ndarray:
        return REL_TOL * self.norms * np.linalg.norm(v)

    def require_member(self, v, name: str = "vector") -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.dimension,):
            raise DomainError(f"{name} has shape {v.shape}, expected ({self.dimension},)")
        if not np.any(v):
            raise DomainError(f"{name} is the zero vector")
        vals = self.values(v)
        bad = vals < -self.tolerances(v)
        if bad.any():
            i = int(np.argmin(np.where(bad, vals / self.norms, np.inf)))
            raise DomainError(f"{name} is not in the cone: generator {i} gives {vals[i]!r}")
        return vals


# --------------------------------------------------------------------------
# real projective metric


@dataclass(frozen=True)
class RatioBounds:
    a: float
    b: float

    @property
    def distance(self) -> float:
        if not self.a > 0 or math.isinf(self.b):
            return INF
        return math.log(self.b / self.a)


def ratio_bounds(spec: ConeSpec, x, y) -> RatioBounds:
    """inf and sup of <m, y>/<m, x> over generators not vanishing on both."""
    mx = spec.require_member(x, "x")
    my = spec.require_member(y, "y")
    zx = np.abs(mx) <= spec.tolerances(np.asarray(x, dtype=float))
    zy = np.abs(my) <= spec.tolerances(np.asarray(y, dtype=float))
    if np.any(zx & ~zy):
        return RatioBounds(0.0 if not np.any(~zx) else float(np.min(my[~zx] / mx[~zx])), INF)
    if np.any(zy & ~zx):
        return RatioBounds(0.0, float(np.max(my[~zx] / mx[~zx])))
    live = ~zx
    r = my[live] / mx[live]
    return RatioBounds(float(r.min()), float(r.max()))


def hilbert_distance(spec: ConeSpec, x, y) -> float:
    """log(b/a); infinite when a generator annihilates exactly one argument."""
    return ratio_bounds(spec, x, y).distance


def real_member(spec: ConeSpec, v) -> bool:
    v = np.asarray(v, dtype=float)
    return bool(np.any(v)) and bool(np.all(spec.values(v) >= -spec.tolerances(v)))


# --------------------------------------------------------------------------
# complexification


@dataclass(frozen=True)
class Membership:
    member: bool
    worst_value: float  # most negative normalized Re(<l1,w> conj <l2,w>)
    pair: tuple[int, int] | None

    def __bool__(self):
        return self.member


def complex_membership(spec: ConeSpec, w, tol: float = REL_TOL, chunk: int = 1024) -> Membership:
    """Check Re(<l1,w> conj <l2,w>) >= -tol |l1| |l2| |w|^2 over all generator pairs."""
    w = np.asarray(w, dtype=complex)
    if w.shape != (spec.dimension,):
        raise DomainError(f"vector has shape {w.shape}, expected ({spec.dimension},)")
    wn2 = float(np.vdot(w, w).real)
    if wn2 == 0.0:
        raise DomainError("the zero vector is not in the complex cone")
    u = (spec.generators @ w) / spec.norms
    pts = np.stack([u.real, u.imag], axis=1) / math.sqrt(wn2)
    worst = INF
    pair = None
    for s in range(0, pts.shape[0], chunk):
        block = pts[s:s + chunk] @ pts.T
        k = int(np.argmin(block))
        val = float(block.flat[k])
        if val < worst:
            worst = val
            pair = (s + k // pts.shape[0], k % pts.shape[0])
    ok = worst >= -tol
    return Membership(ok, worst, None if ok else pair)


def _arc(values: np.ndarray, tol: np.ndarray) -> tuple[float, float]:
    """Smallest arc [lo, hi] containing the arguments of the non-negligible values."""
    live = np.abs(values) > tol
    if not live.any():
        raise EstimateUnavailable("every generator vanishes on the vector")
    ang = np.sort(np.angle(values[live]))
    gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
    k = int(np.argmax(gaps))
    lo = ang[(k + 1) % ang.size]
    hi = ang[k] if k + 1 < ang.size else ang[k]
    if hi < lo:
        hi += 2 * math.pi
    return float(lo), float(hi)


def phase_interval(spec: ConeSpec, w, slack: float = 1e-9) -> tuple[float, float]:
    """Interval [lo - width, lo] of phases theta for which e^{-i theta} w has both parts in the real cone.

    [lo, hi] is the smallest arc holding the arguments of <l, w>.
    """
    w = np.asarray(w, dtype=complex)
    vals = spec.generators @ w
    tol = REL_TOL * spec.norms * np.linalg.norm(w)
    lo, hi = _arc(vals, tol)
    width = math.pi / 2 - (hi - lo)
    if width < -slack:
        raise EstimateUnavailable(f"argument spread {hi - lo:.6g} exceeds pi/2; vector is outside the complex cone")
    return lo - max(width, 0.0), lo


def decompose(spec: ConeSpec, w, theta: float):
    """(x, y) with w = e^{i theta}(x + i y), or None if either part leaves the real cone."""
    v = np.exp(-1j * theta) * np.asarray(w, dtype=complex)
    x, y = v.real.copy(), v.imag.copy()
    if np.any(x) and real_member(spec, x) and (not np.any(y) or real_member(spec, y)):
        return x, y
    return None


def phase_decompositions(spec: ConeSpec, w, count: int = 9):
    """Decompositions w = e^{i theta}(x + i y) for ``count`` phases spread over the feasible interval."""
    start, stop = phase_interval(spec, w)
    thetas = np.linspace(stop, start, count) if count > 1 and stop > start else [stop]
    out = [(float(th), *xy) for th in thetas if (xy := decompose(spec, w, th)) is not None]
    if not out:
        raise EstimateUnavailable("no phase gives real and imaginary parts inside the real cone")
    return out


def delta_x_plus_iy(spec: ConeSpec, x, y) -> float:
    """Exact delta(x, x + i y) from the ratio bounds a, b of y against x."""
    if not np.any(y):
        return 0.0
    rb = ratio_bounds(spec, x, y)
    if math.isinf(rb.distance):
        return INF
    return _disk_log_ratio(rb.a, rb.b)


def _disk_log_ratio(a: float, b: float) -> float:
    c = math.hypot(1.0, (a + b) / 2.0)
    r = (b - a) / 2.0
    return math.log((c + r) / (c - r))


def _proportional(w1, w2, tol: float = 1e-13) -> bool:
    n1 = np.vdot(w1, w1).real
    c = np.vdot(w1, w2) / n1
    return bool(np.linalg.norm(w2 - c * w1) <= tol * np.linalg.norm(w2)) and c != 0


def _aligning_phase(w, r) -> float:
    """Phase theta making Re(e^{-i theta} w) closest in direction to r."""
    basis = np.stack([w.real, w.imag], axis=1)
    coef, *_ = np.linalg.lstsq(basis, r, rcond=None)
    return float(math.atan2(coef[1], coef[0]))


def delta_upper(spec: ConeSpec, w1, w2, phases: int = 9) -> float:
    """Upper bound on delta(w1, w2) through real representatives (triangle inequality).

    Legs: delta(w_k, x_k) from the exact disk formula, delta(x_1, x_2) as a Hilbert
    distance. Both x and y of each decomposition are tried as the real anchor
    (conjugation turns x - i y ~ y + i x into the same disk formula).
    """
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    if _proportional(w1, w2):
        return 0.0
    if not np.any(w1.imag) and not np.any(w2.imag):
        return hilbert_distance(spec, w1.real, w2.real)
    base = [phase_decompositions(spec, w, phases) for w in (w1, w2)]
    # phases aligning the real part of one vector with an anchor of the other
    aligned = []
    for w, other in ((w1, base[1]), (w2, base[0])):
        found = []
        for _, r, _ in other:
            xy = decompose(spec, w, _aligning_phase(w, r))
            if xy is not None:
                found.append((None, *xy))
        aligned.append(found)
    legs = []
    for decs in (base[0] + aligned[0], base[1] + aligned[1]):
        opts = []
        for _, x, y in decs:
            opts.append((x, delta_x_plus_iy(spec, x, y)))
            if np.any(y):
                opts.append((y, delta_x_plus_iy(spec, y, x)))
        legs.append(opts)
    best = INF
    for r1, d1 in legs[0]:
        if d1 >= best:
            continue
        for r2, d2 in legs[1]:
            if d1 + d2 >= best:
                continue
            best = min(best, d1 + d2 + hilbert_distance(spec, r1, r2))
    return best


# --------------------------------------------------------------------------
# disk families


@dataclass
class DiskFamily:
    """Subset of E(w1, w2): open disks (center, radius), closure points, half-planes."""

    centers: np.ndarray
    radii: np.ndarray
    points: np.ndarray
    unbounded: bool = False
    contains_zero: bool = False

    def sup_modulus(self) -> float:
        if self.unbounded:
            return INF
        vals = [np.abs(self.points)]
        if self.radii.size:
            vals.append(np.abs(self.centers) + self.radii)
        v = np.concatenate(vals)
        return float(v.max()) if v.size else 0.0

    def inf_modulus(self) -> float:
        if self.contains_zero:
            return 0.0
        vals = [np.abs(self.points)]
        if self.radii.size:
            vals.append(np.maximum(np.abs(self.centers) - self.radii, 0.0))
        v = np.concatenate(vals)
        return float(v.min()) if v.size else INF

    def log_ratio(self) -> float:
        hi = self.sup_modulus()
        lo = self.inf_modulus()
        if math.isinf(hi) or lo == 0.0:
            return INF
        return math.log(hi / lo)


def disk_family(spec: ConeSpec, w1, w2, functionals: np.ndarray | None = None) -> DiskFamily:
    """Images of Re w > 0 under z = (w b + d)/(w a + c) for functional pairs (m, l).

    a = <m, w1>, c = <l, w1>, b = <m, w2>, d = <l, w2>. Each image lies in E(w1, w2).
    """
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    L = spec.generators if functionals is None else np.vstack([spec.generators, functionals])
    norms = np.linalg.norm(L, axis=1)
    v1 = L @ w1
    v2 = L @ w2
    t1 = REL_TOL * norms * np.linalg.norm(w1)
    t2 = REL_TOL * norms * np.linalg.norm(w2)
    z1 = np.abs(v1) <= t1
    z2 = np.abs(v2) <= t2
    if np.all(z1):
        raise EstimateUnavailable("every sampled functional vanishes on the first vector")
    if np.any(z1 & ~z2):
        return DiskFamily(np.empty(0, complex), np.empty(0), np.empty(0, complex), unbounded=True)
    if np.any(z2 & ~z1):
        return DiskFamily(np.empty(0, complex), np.empty(0), np.empty(0, complex), contains_zero=True)
    live = ~z1
    a = v1[live]
    b = v2[live]
    points = b / a
    ii, jj = np.triu_indices(a.size, 1)
    A, C, Bv, D = a[ii], a[jj], b[ii], b[jj]
    R = (np.conj(A) * C).real
    det = np.abs(A * D - Bv * C)
    q = np.conj(A) * D + np.conj(C) * Bv
    flat = R <= REL_TOL * np.abs(A) * np.abs(C)
    unbounded = bool(np.any(flat & (det > REL_TOL * (np.abs(A) * np.abs(D) + np.abs(Bv) * np.abs(C)))))
    keep = ~flat & (det > 0)
    centers = q[keep] / (2 * R[keep])
    radii = det[keep] / (2 * R[keep])
    return DiskFamily(centers, radii, points, unbounded=unbounded)


def delta_lower(spec: ConeSpec, w1, w2, samples: int = 0, seed: int = 0) -> float:
    """Lower bound on delta(w1, w2): log(sup / inf modulus) over a sampled part of E(w1, w2).

    ``samples`` extra functionals (random nonnegative combinations of generators)
    enlarge the sampled family.
    """
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    for name, w in (("w1", w1), ("w2", w2)):
        if w.shape != (spec.dimension,) or not np.any(w):
            raise DomainError(f"{name} must be a nonzero vector of length {spec.dimension}")
    if _proportional(w1, w2):
        return 0.0
    extra = None
    if samples > 0:
        rng = np.random.Generator(np.random.Philox(key=seed))
        extra = rng.exponential(size=(samples, spec.generators.shape[0])) @ spec.generators
    return disk_family(spec, w1, w2, extra).log_ratio()


# --------------------------------------------------------------------------
# positive maps


def extreme_rays(spec: ConeSpec, max_combinations: int = 200_000) -> np.ndarray:
    """Extreme rays (as columns) by enumerating (d-1)-subsets of active generators."""
    if spec.extreme_rays is not None:
        return spec.extreme_rays
    L = spec.generators
    k, d = L.shape
    if d == 1:
        return np.ones((1, 1)) if np.all(L[:, 0] >= 0) else -np.ones((1, 1))
    if math.comb(k, d - 1) > max_combinations:
        raise DomainError("too many generator subsets to enumerate extreme rays")
    rays = []
    for combo in itertools.combinations(range(k), d - 1):
        sub = L[list(combo)]
        _, s, vt = np.linalg.svd(sub)
        if s.size and s[-1] < 1e-10 * s[0]:
            continue
        r = vt[-1]
        for cand in (r, -r):
            if real_member(spec, cand):
                cand = cand / np.abs(cand).max()
                if not any(np.allclose(cand, q, atol=1e-10) for q in rays):
                    rays.append(cand)
    if not rays:
        raise DomainError("the cone has no extreme rays (is it proper?)")
    return np.array(rays).T


def _check_preserves(spec: ConeSpec, M, rays):
    images = np.asarray(M) @ rays
    for j in range(rays.shape[1]):
        if not real_member(spec, images[:, j]):
            raise DomainError(f"matrix does not preserve the cone: extreme ray {j} maps outside")
    return images


def birkhoff_diameter(spec: ConeSpec, M) -> float:
    """Hilbert diameter of M(C \\ {0}); attained on images of extreme rays."""
    M = np.asarray(M, dtype=float)
    if M.shape != (spec.dimension, spec.dimension):
        raise DomainError(f"matrix shape {M.shape} does not match dimension {spec.dimension}")
    rays = extreme_rays(spec)
    images = _check_preserves(spec, M, rays)
    vals = spec.generators @ images  # (generators, rays)
    tol = REL_TOL * spec.norms[:, None] * np.linalg.norm(images, axis=0)[None, :]
    zero = np.abs(vals) <= tol
    if np.any(zero.any(axis=1) & ~zero.all(axis=1)):
        return INF
    live = ~zero.all(axis=1)
    logs = np.log(vals[live])
    # d(u_j, u_k) = max_m log(v_mk/v_mj) + max_m log(v_mj/v_mk)
    diff = logs[:, :, None] - logs[:, None, :]
    best = diff.max(axis=0) + (-diff).max(axis=0)
    return float(best.max())


def birkhoff_factor(diameter: float) -> float:
    return 1.0 if math.isinf(diameter) else math.tanh(diameter / 4.0)


@dataclass
class ContractionReport:
    diameter: float
    factor: float
    before: float
    after: float
    bound: float
    tol: float

    @property
    def ratio(self) -> float:
        if self.before == 0.0 or math.isinf(self.before):
            return 0.0
        return self.after / self.before

    @property
    def ok(self) -> bool:
        if math.isinf(self.before):
            return True
        return self.after <= self.bound + self.tol

    @property
    def margin(self) -> float:
        return INF if math.isinf(self.before) else self.bound - self.after


def contraction_check(spec: ConeSpec, M, x, y, tol: float = 1e-12, diameter: float | None = None) -> ContractionReport:
    """Check d(Mx, My) <= tanh(Delta/4) d(x, y)."""
    M = np.asarray(M, dtype=float)
    if diameter is None:
        diameter = birkhoff_diameter(spec, M)
    factor = birkhoff_factor(diameter)
    before = hilbert_distance(spec, x, y)
    after = hilbert_distance(spec, M @ np.asarray(x, float), M @ np.asarray(y, float))
    bound = factor * before if not math.isinf(before) else INF
    return ContractionReport(diameter, factor, before, after, bound, tol)


def tau_comparison_bound(tau: float) -> float:
    """3 log((1 + tau)/(1 - tau))."""
    if not 0.0 <= tau < 1.0:
        raise DomainError(f"tau must lie in [0, 1), got {tau}")
    return 3.0 * math.log1p(2.0 * tau / (1.0 - tau))


def comparison_threshold(eps: float, diameter: float) -> float:
    """2 eps (1 + cosh(Delta_P / 2))."""
    if math.isinf(diameter):
        return INF
    return 2.0 * eps * (1.0 + math.cosh(diameter / 2.0))


def comparison_bound(eps: float, diameter: float) -> float:
    """3 log(1/(1 - 2 eps (1 + cosh(Delta_P/2)))), or inf when the threshold fails."""
    t = comparison_threshold(eps, diameter)
    return -3.0 * math.log1p(-t) if t < 1.0 else INF


@dataclass
class ComparisonReport:
    eps: float
    diameter: float
    threshold: float
    threshold_met: bool
    bound: float | None
    samples: int = 0
    membership_failures: int = 0
    worst_distance: float = 0.0
    violations: int = 0
    tol: float = 1e-9
    worst_membership: float = INF

    @property
    def ok(self) -> bool:
        return self.membership_failures == 0 and self.violations == 0

    @property
    def margin(self) -> float:
        return INF if self.bound is None else self.bound - self.worst_distance


def random_cone_vectors(spec: ConeSpec, count: int, rng: np.random.Generator, complex_: bool = True):
    """Random elements e^{i theta}(x + i y) with x, y nonnegative combinations of extreme rays."""
    rays = extreme_rays(spec)
    out = []
    for _ in range(count):
        x = rays @ rng.exponential(size=rays.shape[1])
        if not complex_:
            out.append(x.astype(complex))
            continue
        y = rays @ rng.exponential(size=rays.shape[1]) * rng.uniform(0, 2)
        out.append(np.exp(1j * rng.uniform(0, 2 * math.pi)) * (x + 1j * y))
    return out


def comparison_check(spec: ConeSpec, P, A, eps: float, samples: int = 32, seed: int = 0,
                     tol: float = 1e-9) -> ComparisonReport:
    """Check the perturbed-operator comparison: A C subset C and delta(Ax, Px) <= bound."""
    P = np.asarray(P, dtype=float)
    A = np.asarray(A, dtype=complex)
    if eps < 0:
        raise DomainError("eps must be nonnegative")
    rays = extreme_rays(spec)
    diameter = birkhoff_diameter(spec, P)
    mp = spec.generators @ (P @ rays)
    ma = spec.generators @ (A @ rays)
    slack = np.abs(ma - mp) - eps * mp
    scale = 1e-15 * np.abs(mp).max()
    if np.any(slack > scale):
        i, j = np.unravel_index(int(np.argmax(slack)), slack.shape)
        raise DomainError(f"domination violated at generator {i}, extreme ray {j}: "
                          f"|A - P| = {abs(ma[i, j] - mp[i, j])!r} > eps * P = {eps * mp[i, j]!r}")
    t = comparison_threshold(eps, diameter)
    if not t < 1.0:
        return ComparisonReport(eps, diameter, t, False, None, tol=tol)
    bound = comparison_bound(eps, diameter)
    rng = np.random.Generator(np.random.Philox(key=seed))
    rep = ComparisonReport(eps, diameter, t, True, bound, tol=tol)
    vectors = random_cone_vectors(spec, samples, rng) + [rays[:, j].astype(complex) for j in range(rays.shape[1])]
    for w in vectors:
        rep.samples += 1
        memb = complex_membership(spec, A @ w)
        rep.worst_membership = min(rep.worst_membership, memb.worst_value)
        if not memb:
            rep.membership_failures += 1
            continue
        d = delta_lower(spec, A @ w, P @ w)
        rep.worst_distance = max(rep.worst_distance, d)
        if d > bound + tol:
            rep.violations += 1
    return rep
