"""Collocation discretization of the perturbed transfer operator and its spectral data."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import certify
from .cones import ConeSpec, hilbert_distance, real_member
from .dynamics import MapSpec, Metric, ObservableSpec, validate_observable
from .errors import ConvergenceError, DomainError, InconsistencyError
from .reports import CheckReport

log = logging.getLogger(__name__)

DEFAULT_N = 4096
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 10_000
RAY_SAMPLES = 16


@dataclass(frozen=True)
class GridScheme:
    """Uniform nodes on [0, 1] with piecewise-linear interpolation."""

    N: int = DEFAULT_N

    def __post_init__(self):
        if self.N < 2:
            raise DomainError("a grid needs at least two nodes")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N)

    @property
    def spacing(self) -> float:
        return 1.0 / (self.N - 1)

    def locate(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Left node index k0 and weight theta with p = (1 - theta) x_k0 + theta x_{k0+1}."""
        s = np.asarray(p, dtype=float) * (self.N - 1)
        k0 = np.clip(np.floor(s).astype(np.int64), 0, self.N - 2)
        return k0, np.clip(s - k0, 0.0, 1.0)

    def interpolate(self, values, p) -> np.ndarray:
        k0, th = self.locate(p)
        v = np.asarray(values)
        return (1.0 - th) * v[k0] + th * v[k0 + 1]

    def quadrature_weights(self) -> np.ndarray:
        w = np.full(self.N, self.spacing)
        w[0] = w[-1] = self.spacing / 2.0
        return w


def _as_grid(grid) -> GridScheme:
    if grid is None:
        return GridScheme()
    if isinstance(grid, GridScheme):
        return grid
    return GridScheme(int(grid))


@dataclass
class SpectralData:
    z: complex
    lam: complex
    h: np.ndarray
    nu: np.ndarray | None
    residual: float
    iterations: int
    lambda0: complex | None = None

    @property
    def gibbs(self) -> np.ndarray | None:
        if self.nu is None:
            return None
        return (self.h * self.nu).real if np.isrealobj(self.h) or self.z == 0 else self.h * self.nu

    def summary(self) -> dict:
        out = {"z_re": complex(self.z).real, "z_im": complex(self.z).imag,
               "lambda_re": complex(self.lam).real, "lambda_im": complex(self.lam).imag,
               "residual": self.residual, "iterations": self.iterations}
        if self.nu is not None:
            out["nu_total"] = complex(np.sum(self.nu)).real
            out["nu_h"] = complex(np.dot(self.nu, self.h)).real
        return out


def leading_triple(M, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER, x0=None, ref=None,
                   adjoint: bool = True) -> SpectralData:
    """Leading eigenvalue with right (h) and left (nu) eigenvectors by power iteration.

    Normalization: <nu, 1> = 1 and <nu, h> = 1. ``ref`` is the functional used to
    scale iterates (defaults to uniform weights).
    """
    if isinstance(M, TransferMatrix):
        z, A = M.z, M.matrix
    else:
        z, A = None, M
    n = A.shape[0]
    ref = np.full(n, 1.0 / n) if ref is None else np.asarray(ref)
    h, lam, res, it = _power(A, tol, max_iter, np.ones(n) if x0 is None else np.asarray(x0), ref)
    nu = None
    if adjoint:
        nu, lam_l, _, _ = _power(A.T.tocsr() if sp.issparse(A) else A.T, tol, max_iter, ref.astype(float),
                                 np.ones(n) / n)
        nu = nu / np.sum(nu)
        h = h / np.dot(nu, h)
    else:
        h = h / np.dot(ref, h)
    return SpectralData(z if z is not None else 0.0, lam, h, nu, res, it)


def _power(A, tol, max_iter, v, ref):
    v = v / np.dot(ref, v)
    res = math.inf
    lam = 0.0
    for it in range(1, max_iter + 1):
        w = A @ v
        lam = np.dot(ref, w)
        if lam == 0 or not np.isfinite(lam):
            raise ConvergenceError("power iteration collapsed", residual=res)
        w = w / lam
        res = float(np.max(np.abs(w - v)) / np.max(np.abs(w)))
        v = w
        if res <= tol:
            # residual of the returned pair, measured directly
            res = float(np.max(np.abs(A @ v - lam * v)) / (abs(lam) * np.max(np.abs(v))))
            if res <= tol:
                return v, lam, res, it
    raise ConvergenceError(f"power iteration did not reach {tol:g} in {max_iter} steps (residual {res:.3g})",
                           residual=res)


@dataclass
class TransferMatrix:
    z: complex
    matrix: sp.csr_matrix


class TransferModel:
    """Stencil of the operator sum_j e^{g(sigma_j x) + z f(sigma_j x)} u(sigma_j x) on a grid."""

    def __init__(self, spec: MapSpec, f: ObservableSpec | None, grid=None, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER):
        self.spec = spec
        self.f = f
        self.grid = _as_grid(grid)
        self.tol = tol
        self.max_iter = max_iter
        x = self.grid.nodes
        N = self.grid.N
        cols, base, fvals, pts, wts = [], [], [], [], []
        for b in spec.operator_branches:
            p = np.asarray(b.sigma(x), dtype=float)
            if np.any(p < -1e-12) or np.any(p > 1 + 1e-12) or not np.all(np.isfinite(p)):
                raise DomainError(f"branch {b.label or '?'} leaves [0, 1]; map integrity violated")
            p = np.clip(p, 0.0, 1.0)
            w = np.exp(np.asarray(b.potential(x), dtype=float))
            k0, th = self.grid.locate(p)
            fv = f(p) if f is not None else np.zeros(N)
            cols += [k0, k0 + 1]
            base += [w * (1.0 - th), w * th]
            fvals += [fv, fv]
            pts.append(p)
            wts.append(w)
        self.cols = np.stack(cols, axis=1)
        self.base = np.stack(base, axis=1)
        self.fvals = np.stack(fvals, axis=1)
        self.points = np.stack(pts, axis=1)
        self.weights = np.stack(wts, axis=1)
        self.E = self.cols.shape[1]
        self._indptr = np.arange(0, N * self.E + 1, self.E)
        self._base_triple: SpectralData | None = None

    # assembly --------------------------------------------------------------

    def _csr(self, data) -> sp.csr_matrix:
        N = self.grid.N
        return sp.csr_matrix((data.ravel(), self.cols.ravel(), self._indptr), shape=(N, N))

    def matrix(self, z: complex = 0.0) -> sp.csr_matrix:
        if z == 0:
            return self._csr(self.base)
        return self._csr(self.base * np.exp(complex(z) * self.fvals))

    def perturbation(self, z: complex) -> sp.csr_matrix:
        """M(z) - M(0), built from expm1 so small z keeps full relative accuracy."""
        return self._csr(self.base * np.expm1(complex(z) * self.fvals))

    def assemble(self, z: complex = 0.0) -> TransferMatrix:
        return TransferMatrix(complex(z) if z != 0 else 0.0, self.matrix(z))

    def apply_many(self, zs, V) -> np.ndarray:
        """Column k of the result is M(zs[k]) V[:, k]."""
        zs = np.asarray(zs, dtype=complex)
        out = np.zeros(V.shape, dtype=complex)
        for e in range(self.E):
            out += (self.base[:, e, None] * np.exp(self.fvals[:, e, None] * zs[None, :])) * V[self.cols[:, e], :]
        return out

    # spectral data ---------------------------------------------------------

    @property
    def base_triple(self) -> SpectralData:
        if self._base_triple is None:
            t = leading_triple(self.assemble(0.0), self.tol, self.max_iter)
            if np.any(t.h <= 0) or np.any(t.nu < -1e-15):
                raise InconsistencyError("unperturbed eigenvectors are not positive")
            t.lambda0 = t.lam
            self._base_triple = t
        return self._base_triple

    @property
    def gibbs(self) -> np.ndarray:
        return self.base_triple.gibbs

    def expectation(self, values) -> float:
        return float(np.dot(self.gibbs, values))

    def mean_f(self) -> float:
        return self.expectation(self.f(self.grid.nodes))

    def triple(self, z: complex, x0=None, adjoint: bool = True) -> SpectralData:
        if z == 0:
            return self.base_triple
        b = self.base_triple
        t = leading_triple(self.assemble(z), self.tol, self.max_iter, x0=b.h if x0 is None else x0,
                           ref=b.nu, adjoint=adjoint)
        t.lambda0 = b.lam
        return t

    def log_ratio(self, z: complex, x0=None) -> tuple[complex, np.ndarray]:
        """Principal log(lambda(z)/lambda(0)) through <nu0, (M(z) - M(0)) h(z)> / (lambda0 <nu0, h(z)>)."""
        b = self.base_triple
        t = self.triple(z, x0=x0, adjoint=False)
        w = np.dot(b.nu, self.perturbation(z) @ t.h) / (b.lam * np.dot(b.nu, t.h))
        return _log1p_complex(complex(w)), t.h

    def pressure(self, z: complex, samples: int = RAY_SAMPLES, max_refine: int = 4) -> complex:
        """P(z) continued from P(0) = 0 along the segment [0, z]."""
        if z == 0:
            return 0.0
        z = complex(z)
        for _ in range(max_refine + 1):
            try:
                return self._pressure_ray(z, samples)
            except _BranchJump:
                samples *= 2
        raise DomainError(f"pressure branch ambiguous along [0, {z}] even with {samples // 2} samples")

    def _pressure_ray(self, z: complex, samples: int) -> complex:
        prev = 0j
        h = None
        for k in range(1, samples + 1):
            L, h = self.log_ratio(z * k / samples, x0=h)
            m = round((prev.imag - L.imag) / (2 * math.pi))
            cur = L + 2j * math.pi * m
            if abs(cur - prev) > math.pi:
                raise _BranchJump
            prev = cur
        return prev

    # derived quantities ----------------------------------------------------

    def default_step(self) -> float:
        d0 = self.delta0()
        return max(d0 / 8.0, 1e-3 / max(self.f.sup_norm, 1e-300))

    def delta0(self) -> float:
        D_R = certify.constant_DR(self.spec.gamma, self.spec.G)
        if self.f.sup_norm + self.f.lip_seminorm == 0:
            return math.inf
        return certify.delta0(D_R, self.f.sup_norm, self.f.lip_seminorm)

    def require_centered(self, tol: float) -> float:
        m = self.mean_f()
        if abs(m) > tol:
            raise DomainError(f"observable is not centered: E[f] = {m!r} exceeds tolerance {tol:g}")
        return m


class _BranchJump(Exception):
    pass


def _log1p_complex(w: complex) -> complex:
    re = 0.5 * math.log1p(2.0 * w.real + w.real * w.real + w.imag * w.imag)
    return complex(re, math.atan2(w.imag, 1.0 + w.real))


# --------------------------------------------------------------------------
# module-level entry points

_CACHE: dict = {}


def model_for(spec: MapSpec, f: ObservableSpec | None, grid=None) -> TransferModel:
    g = _as_grid(grid)
    key = (id(spec), id(f), g.N)
    hit = _CACHE.get(key)
    if hit is not None and hit[0] is spec and hit[1] is f:
        return hit[2]
    m = TransferModel(spec, f, g)
    if len(_CACHE) >= 8:
        _CACHE.pop(next(iter(_CACHE)))
    _CACHE[key] = (spec, f, m)
    return m


def assemble(spec: MapSpec, f: ObservableSpec, z: complex, grid=None) -> TransferMatrix:
    return model_for(spec, f, grid).assemble(z)


def pressure(spec: MapSpec, f: ObservableSpec, z: complex, grid=None, samples: int = RAY_SAMPLES) -> complex:
    return model_for(spec, f, grid).pressure(z, samples)


def _richardson(values: list[float]) -> float:
    """Two-level Richardson for an O(h^2) scheme evaluated at h, h/2, h/4."""
    a, b, c = values
    r1 = (4.0 * b - a) / 3.0
    r2 = (4.0 * c - b) / 3.0
    return (16.0 * r2 - r1) / 15.0


def sigma2_spectral(spec: MapSpec, f: ObservableSpec, grid=None, step: float | None = None,
                    centering_tol: float = 1e-4, model: TransferModel | None = None) -> float:
    """sigma^2 = P''(0) from -2 Re P(i h)/h^2 (conjugate symmetry supplies P(-i h))."""
    m = model or model_for(spec, f, grid)
    if f.sup_norm == 0:
        return 0.0
    m.require_centered(centering_tol)
    h = step or m.default_step()
    vals = [-2.0 * m.pressure(1j * s).real / (s * s) for s in (h, h / 2, h / 4)]
    return _richardson(vals)


@dataclass
class GreenKubo:
    value: float | None
    variance: float
    correlations: list[float]
    tail_estimate: float
    decay_ratio: float | None
    warning: str | None = None


def correlations(model: TransferModel, k_max: int) -> tuple[float, np.ndarray]:
    """E[f^2] and C_k = <nu0, f L0^k (f h0)> / lambda0^k for k = 1..k_max (f centered on the grid)."""
    b = model.base_triple
    fx = model.f(model.grid.nodes)
    fx = fx - np.dot(b.gibbs, fx)
    M = model.matrix(0.0)
    v = fx * b.h
    out = np.empty(k_max)
    for k in range(k_max):
        v = (M @ v) / b.lam
        out[k] = np.dot(b.nu, fx * v)
    return float(np.dot(b.gibbs, fx * fx)), out


def sigma2_green_kubo(spec: MapSpec, f: ObservableSpec, grid=None, k_max: int = 64,
                      centering_tol: float = 1e-4, model: TransferModel | None = None) -> GreenKubo:
    """E[f^2] + 2 sum_{k <= k_max} E[f f o T^k] with a geometric tail estimate."""
    m = model or model_for(spec, f, grid)
    if k_max < 0:
        raise DomainError("k_max must be nonnegative")
    if f.sup_norm == 0:
        return GreenKubo(0.0, 0.0, [], 0.0, None)
    m.require_centered(centering_tol)
    var, C = correlations(m, k_max)
    total = var + 2.0 * math.fsum(C.tolist())
    if k_max < 4:
        return GreenKubo(total, var, C.tolist(), 0.0, None)
    tail_window = np.abs(C[-4:])
    floor = 1e-15 * max(var, 1e-300)
    if np.all(tail_window <= floor):
        return GreenKubo(total, var, C.tolist(), 0.0, 0.0)
    ratios = tail_window[1:] / np.maximum(tail_window[:-1], 1e-300)
    r = float(np.max(ratios))
    if not r < 1.0:
        return GreenKubo(None, var, C.tolist(), math.inf, r, "correlations are not decaying")
    tail = 2.0 * float(tail_window[-1]) * r / (1.0 - r)
    return GreenKubo(total, var, C.tolist(), tail, r)


def p3(spec: MapSpec, f: ObservableSpec, grid=None, step: float | None = None, centering_tol: float = 1e-4,
       model: TransferModel | None = None, check: bool = True) -> float:
    """P'''(0) = -(g(2h) - 2 g(h))/h^3 + O(h^2) with g(t) = Im P(i t), Richardson-extrapolated."""
    m = model or model_for(spec, f, grid)
    if f.sup_norm == 0:
        return 0.0
    m.require_centered(centering_tol)
    h = step or m.default_step()
    cache = {}

    def g(t):
        if t not in cache:
            cache[t] = m.pressure(1j * t).imag
        return cache[t]

    vals = [-(g(2 * s) - 2 * g(s)) / s ** 3 for s in (h, h / 2, h / 4)]
    val = _richardson(vals)
    if check:
        bound = 36.0 * f.sup_norm / m.delta0() ** 2
        if abs(val) > bound * (1 + 1e-4) + 1e-6:
            raise InconsistencyError(f"|P'''(0)| = {abs(val)!r} exceeds 36 |f|/delta0^2 = {bound!r}")
    return val


def phi_n(spec: MapSpec, f: ObservableSpec, z: complex, n: int, grid=None,
          model: TransferModel | None = None, lam: complex | None = None) -> complex:
    """<nu0, (M(z)/lambda(z))^n h0>."""
    m = model or model_for(spec, f, grid)
    if n < 0:
        raise DomainError("n must be nonnegative")
    if z == 0:
        return 1.0 + 0j
    b = m.base_triple
    if lam is None:
        lam = m.triple(z, adjoint=False).lam
    M = m.matrix(z)
    v = b.h.astype(complex)
    for _ in range(n):
        v = (M @ v) / lam
        if not np.all(np.isfinite(v)):
            raise DomainError(f"overflow in phi_n at z = {z}; |z| is outside the certified disk")
    return complex(np.dot(b.nu, v))


# --------------------------------------------------------------------------
# cone lemmas on exact function evaluations


@dataclass
class ConeFunction:
    """u(x) = sum_k c_k exp(B psi_k(x)) with psi_k 1-Lipschitz, or a grid interpolant."""

    terms: list = field(default_factory=list)  # (c, anchors, coeffs, sign)
    grid_values: np.ndarray | None = None
    grid: GridScheme | None = None

    def __call__(self, x, metric: Metric, B: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.grid_values is not None:
            return self.grid.interpolate(self.grid_values, x)
        out = np.zeros_like(x)
        for c, anchors, coeffs in self.terms:
            psi = np.zeros_like(x)
            for p, a in zip(anchors, coeffs):
                psi += a * metric.distance(x, p)
            out += c * np.exp(B * psi)
        return out


def random_cone_function(rng: np.random.Generator, max_terms: int = 3, max_anchors: int = 4) -> ConeFunction:
    terms = []
    for _ in range(rng.integers(1, max_terms + 1)):
        k = int(rng.integers(1, max_anchors + 1))
        anchors = rng.uniform(0, 1, size=k)
        w = rng.dirichlet(np.ones(k)) * rng.uniform(0, 1) ** 0.5
        coeffs = w * rng.choice([-1.0, 1.0], size=k)
        terms.append((float(rng.exponential()), anchors, coeffs))
    return ConeFunction(terms)


def extremal_cone_function(p: float, sign: float) -> ConeFunction:
    return ConeFunction([(1.0, np.array([p]), np.array([sign]))])


def apply_exact(spec: MapSpec, u, x, z: complex = 0.0, f: ObservableSpec | None = None,
                metric: Metric | None = None, B: float = 0.0, split: bool = False):
    """Evaluate L(z) u at points x. With ``split`` returns (L u, (L(z) - L) u)."""
    x = np.asarray(x, dtype=float)
    metric = metric or spec.metric
    base = np.zeros(x.shape)
    pert = np.zeros(x.shape, dtype=complex)
    for b in spec.operator_branches:
        p = b.sigma(x)
        w = np.exp(b.potential(x)) * u(p, metric, B)
        base += w
        if z != 0:
            pert += w * np.expm1(complex(z) * f(p))
    if split:
        return base, pert
    return base if z == 0 else base + pert


def epsilon_of(z: complex, f: ObservableSpec) -> float:
    """e^{|Re z| |f|_inf} |z| (|f|_inf + |f|_l)."""
    z = complex(z)
    return math.exp(abs(z.real) * f.sup_norm) * abs(z) * (f.sup_norm + f.lip_seminorm)


def _sample_functions(model: TransferModel, count: int, rng, B: float) -> list[ConeFunction]:
    fns = [ConeFunction(grid_values=model.base_triple.h, grid=model.grid)]
    fns += [extremal_cone_function(float(rng.uniform()), s) for s in (-1.0, 1.0)]
    while len(fns) < count:
        fns.append(random_cone_function(rng))
    return fns[:max(count, 1)]


def epsilon_z_check(spec: MapSpec, f: ObservableSpec, z: complex, grid=None, u_samples: int = 10,
                    seed: int = 0, pairs: int = 100, model: TransferModel | None = None,
                    report: CheckReport | None = None) -> CheckReport:
    """Check |<l, L(z)u>/<l, L u> - 1| <= eps(z) for l = l_{x,y} and point evaluations."""
    m = model or model_for(spec, f, grid)
    rep = report or CheckReport("lemma-epsilon", "perturbed operator stays within eps(z) of L on cone functionals",
                                aliases=("5.1",))
    if report is None:
        for flag in validate_observable(f, spec.metric):
            rep.fail(f"observable declaration: {flag}")
    B = certify.constant_B(spec.gamma, spec.G)
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 5, 0]))
    eps = epsilon_of(z, f)
    xs = rng.uniform(0, 1, size=pairs)
    ys = rng.uniform(0, 1, size=pairs)
    pts = np.concatenate([xs, ys])
    dxy = spec.metric.distance(xs, ys)
    worst = 0.0
    for u in _sample_functions(m, u_samples, rng, B):
        base, pert = apply_exact(spec, u, pts, z, f, spec.metric, B, split=True)
        bx, by = base[:pairs], base[pairs:]
        px, py = pert[:pairs], pert[pairs:]
        den = np.concatenate([np.exp(B * dxy) * by - bx, bx])
        num = np.concatenate([np.exp(B * dxy) * py - px, px])
        if np.any(den <= 0):
            k = int(np.argmin(den))
            rep.fail("cone functional of L u is not positive", {"index": k, "value": float(den[k])})
            continue
        dev = np.abs(num) / den
        k = int(np.argmax(dev))
        worst = max(worst, float(dev[k]))
        rep.record(float(dev[k]), eps, {"z_re": complex(z).real, "z_im": complex(z).imag})
        rep.evaluations += dev.size - 1
    rep.details["max_deviation"] = max(rep.details.get("max_deviation", 0.0), worst)
    return rep


def cone_diameter_check(spec: MapSpec, grid=None, pair_samples: int = 1000, seed: int = 0, points: int = 64,
                        model: TransferModel | None = None) -> CheckReport:
    """Hilbert distance of L u, L v on the Lipschitz grid cone stays below D_R."""
    B = certify.constant_B(spec.gamma, spec.G)
    D_R = certify.constant_DR(spec.gamma, spec.G)
    q = np.linspace(0.0, 1.0, points)
    cone = ConeSpec.lipschitz_grid(B, spec.metric.pairwise(q))
    rep = CheckReport("lemma-diameter", "diameter of L(cone) on the Lipschitz grid cone is at most D_R",
                      aliases=("5.2",))
    rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, 6, 0]))
    fns = [random_cone_function(rng) for _ in range(16)]
    fns += [extremal_cone_function(float(p), s) for p in np.linspace(0, 1, 5) for s in (-1.0, 1.0)]
    if model is not None:
        fns.append(ConeFunction(grid_values=model.base_triple.h, grid=model.grid))
    images = []
    for u in fns:
        Lu = apply_exact(spec, u, q, metric=spec.metric, B=B)
        if not real_member(cone, Lu):
            rep.fail("L u left the grid cone")
            continue
        images.append(Lu)
    imgs = np.array(images)
    worst = 0.0
    for k in range(pair_samples):
        if k < len(images):
            i, j = k, k
        else:
            i, j = (int(v) for v in rng.integers(0, len(images), size=2))
            # random positive mixtures widen the sample beyond the basis functions
        if k >= 2 * len(images):
            a = rng.exponential(size=len(images))
            b = rng.exponential(size=len(images))
            u, v = a @ imgs, b @ imgs
        else:
            u, v = imgs[i], imgs[j]
        d = hilbert_distance(cone, u, v)
        worst = max(worst, d)
        rep.record(d, D_R, {"pair": k})
    rep.details.update({"max_distance": worst, "D_R": D_R, "B": B, "grid_points": points})
    return rep
