"""Characteristic functions, smoothing bounds, Kolmogorov distances and the analytic-lemma sweeps."""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import ndtr

from . import certify, cones
from .dynamics import MapSpec, ObservableSpec, doubling_birkhoff_sums, keyed_stream, sample_gibbs
from .errors import DegenerateVarianceError, DomainError, VerificationFailure
from .reports import CheckReport
from .transfer import (GridScheme, TransferModel, cone_diameter_check, correlations, epsilon_z_check, model_for, p3, phi_n,
                       sigma2_spectral)

log = logging.getLogger(__name__)

DKW_DELTA = 1e-3
FELLER_T = 200.0
QUAD_REL = 0.01
BETA_BAND = (0.35, 0.65)
CONVERGED = 1e-11
UNDERFLOW = 1e-10
DEGENERACY_FACTOR = 10.0


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("CONE_CERTIFY_THREADS", "")))
    except ValueError:
        return max(1, os.cpu_count() or 1)


# --------------------------------------------------------------------------
# empirical side


def dkw_slack(m: int, delta: float = DKW_DELTA) -> float:
    """sqrt(log(2/delta)/(2m)): sup |ECDF - CDF| exceeds this with probability at most delta."""
    return math.sqrt(math.log(2.0 / delta) / (2.0 * m))


@dataclass
class EmpiricalCDF:
    values: np.ndarray
    seed: int | None = None
    delta: float = DKW_DELTA

    def __post_init__(self):
        self.values = np.sort(np.asarray(self.values, dtype=float))
        if self.values.size < 1:
            raise DomainError("an empirical CDF needs at least one sample")

    @property
    def m(self) -> int:
        return int(self.values.size)

    @property
    def slack(self) -> float:
        return dkw_slack(self.m, self.delta)


def kolmogorov_distance(ecdf: EmpiricalCDF) -> float:
    """sup_x |F_m(x) - Phi(x)| over the sorted samples."""
    m = ecdf.m
    phi = ndtr(ecdf.values)
    i = np.arange(1, m + 1)
    return float(max(np.max(i / m - phi), np.max(phi - (i - 1) / m), 0.0))


def birkhoff_samples(spec: MapSpec, f: ObservableSpec, n_list, samples: int, seed: int,
                     model: TransferModel | None = None, threads: int | None = None) -> np.ndarray:
    """S_n f for each n in n_list over ``samples`` Gibbs-distributed initial points."""
    n_list = [int(n) for n in n_list]
    threads = threads or thread_count()
    if spec.params.get("preset") == "doubling":
        with ThreadPoolExecutor(threads) as ex:
            return doubling_birkhoff_sums(f, n_list, samples, seed, executor=ex if threads > 1 else None)
    model = model or model_for(spec, f, None)
    b = model.base_triple
    w = model.grid.quadrature_weights()
    x = model.grid.nodes
    # Monte Carlo draws from h0 dx, so nu0 has to be Lebesgue measure
    probe = [np.ones_like(x), x, np.cos(2 * np.pi * x)]
    if max(abs(np.dot(b.nu, u) - np.dot(w, u)) for u in probe) > 1e-6:
        raise DomainError("sampling needs a Lebesgue-conformal potential (g = -log|T'|)")
    dens = b.h / np.dot(w, b.h)
    x0 = sample_gibbs(spec, dens, samples, seed, nodes=x)
    n_max = max(n_list)
    out = np.zeros((len(n_list), samples))
    block = 65536
    for s in range(0, samples, block):
        pts = x0[s:s + block].copy()
        acc = np.zeros(pts.size)
        for k in range(n_max):
            acc += f(pts)
            pts, _ = spec.step(pts)
            for r, n in enumerate(n_list):
                if n == k + 1:
                    out[r, s:s + block] = acc
    return out


# --------------------------------------------------------------------------
# operator side


def char_fn_batch(model: TransferModel, n: int, ts, sigma: float, tol: float = CONVERGED,
                  floor: float = UNDERFLOW, chunk: int = 128) -> np.ndarray:
    """E[exp(i t S_n f/(sigma sqrt n))] for every t, from <nu0, M(z)^n h0>/lambda0^n.

    Columns whose iterates have settled onto the leading eigendirection are
    finished by multiplying with the converged ratio. Columns whose iterates
    fall below ``floor`` (relative to h0) are set to 0; positivity of M(0)
    bounds the resulting error by ``floor``.
    """
    ts = np.asarray(ts, dtype=float)
    out = np.empty(ts.size, dtype=complex)
    for s in range(0, ts.size, chunk):
        out[s:s + chunk] = _char_chunk(model, n, ts[s:s + chunk], sigma, tol, floor)
    return out


def _char_chunk(model, n, ts, sigma, tol, floor):
    b = model.base_triple
    zs = 1j * ts / (sigma * math.sqrt(n))
    res = np.empty(ts.size, dtype=complex)
    res[zs == 0] = 1.0
    active = np.nonzero(zs != 0)[0]
    coef = [model.base[:, e, None] * np.exp(model.fvals[:, e, None] * zs[None, active]) / b.lam
            for e in range(model.E)]
    cols = [model.cols[:, e] for e in range(model.E)]
    V = np.repeat(b.h[:, None].astype(complex), active.size, axis=1)
    hmin = float(b.h.min())
    for k in range(1, n + 1):
        if active.size == 0:
            break
        W = coef[0] * V[cols[0]]
        for e in range(1, model.E):
            W += coef[e] * V[cols[e]]
        if k == n:
            res[active] = b.nu @ W
            break
        vmax = np.max(np.abs(W), axis=0)
        done = vmax < floor * hmin
        res[active[done]] = 0.0
        rho = np.sum(np.conj(V) * W, axis=0) / np.sum(np.abs(V) ** 2, axis=0)
        resid = np.max(np.abs(W - rho[None, :] * V), axis=0) / np.maximum(vmax, 1e-300)
        conv = (resid < tol) & ~done
        if conv.any():
            res[active[conv]] = (b.nu @ W[:, conv]) * rho[conv] ** (n - k)
            done |= conv
        if done.any():
            keep = ~done
            V = W[:, keep]
            active = active[keep]
            coef = [c[:, keep] for c in coef]
        else:
            V = W
    return res


def char_fn(spec: MapSpec, f: ObservableSpec, n: int, t: float, grid=None, sigma: float | None = None,
            model: TransferModel | None = None) -> complex:
    m = model or model_for(spec, f, grid)
    if sigma is None:
        sigma = math.sqrt(sigma2_spectral(spec, f, model=m))
    return complex(char_fn_batch(m, n, [t], sigma)[0])


def t_grid(T: float = FELLER_T, dense_end: float = 10.0, dense_step: float = 0.02,
           coarse_step: float = 0.25) -> np.ndarray:
    """Nonnegative t grid with an even number of intervals in each of its two pieces."""
    if T <= 0:
        raise DomainError("T must be positive")
    a = min(dense_end, T)
    k1 = max(2, 2 * math.ceil(a / dense_step / 2))
    parts = [np.linspace(0.0, a, k1 + 1)]
    if T > a:
        k2 = max(2, 2 * math.ceil((T - a) / coarse_step / 2))
        parts.append(np.linspace(a, T, k2 + 1)[1:])
    return np.concatenate(parts)


@dataclass
class FellerBound:
    T: float
    integral: float
    tail: float
    quad_error: float
    points: int

    @property
    def bound(self) -> float:
        return self.integral / math.pi + self.tail

    @property
    def quad_tol(self) -> float:
        return self.quad_error / math.pi


def _trapezoid_pair(ts, g, split: int | None):
    fine = trapezoid(g, ts)
    if split is None:
        coarse = trapezoid(g[::2], ts[::2])
    else:
        a = trapezoid(g[:split + 1][::2], ts[:split + 1][::2])
        b = trapezoid(g[split:][::2], ts[split:][::2])
        coarse = a + b
    return fine, abs(fine - coarse) / 3.0


def feller_bound(ts, values, T: float | None = None, mean_offset: float = 0.0, split: int | None = None,
                 rel_tol: float = QUAD_REL) -> FellerBound:
    """(1/pi) int_{-T}^{T} |(phi(t) - e^{-t^2/2})/t| dt + 24/(pi T sqrt(2 pi)).

    ``ts`` is a nonnegative grid starting at 0 with an even number of intervals
    (per piece, when ``split`` marks the index joining two uniform pieces);
    conjugate symmetry gives the negative half.
    """
    ts = np.asarray(ts, dtype=float)
    vals = np.asarray(values, dtype=complex)
    T = float(ts[-1]) if T is None else float(T)
    if T <= 0 or ts[0] != 0.0 or abs(ts[-1] - T) > 1e-12 * T:
        raise DomainError("the t grid must run from 0 to T")
    g = np.empty(ts.size)
    g[0] = abs(mean_offset)
    g[1:] = np.abs(vals[1:] - np.exp(-ts[1:] ** 2 / 2.0)) / ts[1:]
    half, err = _trapezoid_pair(ts, g, split)
    integral = 2.0 * half
    err = 2.0 * err
    if err > rel_tol * integral and err > 1e-14:
        raise DomainError(f"t grid too coarse: quadrature error {err:.3g} exceeds {rel_tol:.0%} of {integral:.3g}")
    return FellerBound(T, integral, 24.0 / (math.pi * T * math.sqrt(2.0 * math.pi)), err, ts.size)


def feller_for(model: TransferModel, n: int, sigma: float, T: float = FELLER_T, refinements: int = 2,
               dense_step: float = 0.02, coarse_step: float = 0.25) -> FellerBound:
    """Feller bound from the operator characteristic function, refining the t grid when needed."""
    last = None
    for _ in range(refinements + 1):
        ts = t_grid(T, dense_step=dense_step, coarse_step=coarse_step)
        split = int(np.searchsorted(ts, min(10.0, T)))
        vals = char_fn_batch(model, n, ts, sigma)
        try:
            return feller_bound(ts, vals, T, split=split if split < ts.size - 1 else None)
        except DomainError as exc:
            last = exc
            dense_step /= 2.0
            coarse_step /= 2.0
    raise last


@dataclass
class VarianceEstimate:
    value: float
    coarse: float
    grid_error: float

    @property
    def degenerate(self) -> bool:
        return self.value <= DEGENERACY_FACTOR * self.grid_error + 1e-12


def variance_estimate(model: TransferModel, require_positive: bool = True) -> VarianceEstimate:
    """sigma^2 on the model grid and on a grid half as fine; their gap estimates the discretization error.

    A value that cannot be told apart from 0 at that resolution is a coboundary
    (sigma = 0) for every practical purpose.
    """
    spec, f = model.spec, model.f
    fine = sigma2_spectral(spec, f, model=model)
    coarse_model = model_for(spec, f, GridScheme(max(model.grid.N // 2, 8)))
    coarse = sigma2_spectral(spec, f, model=coarse_model)
    est = VarianceEstimate(fine, coarse, abs(fine - coarse))
    if require_positive and est.degenerate:
        raise DegenerateVarianceError(
            f"sigma^2 = {fine:.3g} is within {DEGENERACY_FACTOR:g}x its grid error {est.grid_error:.3g} of 0; "
            "the observable behaves as a coboundary")
    return est


# --------------------------------------------------------------------------
# analytic-lemma sweeps


@dataclass
class LemmaContext:
    """Constants shared by the sweeps."""

    model: TransferModel
    D_R: float
    delta0: float
    Delta0: float
    Delta: float
    sigma2: float
    p3: float
    sup_norm: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


def lemma_context(model: TransferModel) -> LemmaContext:
    spec, f = model.spec, model.f
    D_R = certify.constant_DR(spec.gamma, spec.G)
    d0 = certify.delta0(D_R, f.sup_norm, f.lip_seminorm)
    _, D0 = certify.delta0_threshold(D_R)
    s2 = sigma2_spectral(spec, f, model=model)
    return LemmaContext(model, D_R, d0, D0, certify.big_delta(D_R, D0), s2, p3(spec, f, model=model), f.sup_norm)


def default_z_grid(delta0: float, radii=(0.1, 0.3, 0.5, 0.7, 0.9), angles: int = 8) -> np.ndarray:
    zs = [0j]
    for r in radii:
        for k in range(angles):
            zs.append(r * delta0 * complex(math.cos(2 * math.pi * k / angles + 0.1),
                                           math.sin(2 * math.pi * k / angles + 0.1)))
        zs += [r * delta0, -r * delta0, 1j * r * delta0, -1j * r * delta0]
    return np.array(zs)


def pressure_lemma_checks(model: TransferModel, z_grid=None, ctx: LemmaContext | None = None,
                          which=("6.4", "6.5")) -> list[CheckReport]:
    """Re P(z) <= |Re z| |f|; sigma^2 and P''' magnitude bounds; cubic and quartic remainders."""
    ctx = ctx or lemma_context(model)
    d0, F = ctx.delta0, ctx.sup_norm
    zs = default_z_grid(d0) if z_grid is None else np.asarray(z_grid, dtype=complex)
    if np.any(np.abs(zs) > 0.9 * d0 * (1 + 1e-12)):
        raise DomainError("pressure sweeps need |z| <= 0.9 delta0")
    r64 = CheckReport("pressure-real-part", "Re P(z) <= |Re z| |f|_inf", aliases=("6.4",))
    r65 = CheckReport("pressure-taylor", "sigma^2, P''' and Taylor remainder bounds for P", aliases=("6.5",))
    r65.record(ctx.sigma2, 4.0 * F / d0, {"quantity": "sigma2"})
    r65.record(abs(ctx.p3), 36.0 * F / d0 ** 2, {"quantity": "p3"})
    table = []
    for z in zs:
        z = complex(z)
        P = model.pressure(z)
        a = abs(z) / d0
        row = {"z_re": z.real, "z_im": z.imag, "P_re": P.real, "P_im": P.imag}
        ctxz = {"z_re": z.real, "z_im": z.imag}
        r64.record(P.real, abs(z.real) * F, ctxz)
        if z != 0:
            cubic = abs(P - ctx.sigma2 * z * z / 2.0)
            quartic = abs(P - ctx.sigma2 * z * z / 2.0 - ctx.p3 * z ** 3 / 6.0)
            r65.record(cubic, 6.0 * F * abs(z) ** 3 / (d0 ** 2 * (1 - a ** 3)), {**ctxz, "quantity": "cubic"})
            r65.record(quartic, 18.0 * F * abs(z) ** 4 / (d0 ** 3 * (1 - a ** 4)), {**ctxz, "quantity": "quartic"})
            row.update(cubic=cubic, quartic=quartic)
        table.append(row)
    r64.details["table"] = table
    r65.details.update(sigma2=ctx.sigma2, p3=ctx.p3, delta0=d0)
    return [r for r, k in ((r64, "6.4"), (r65, "6.5")) if k in which]


def ring_lemma_check(model: TransferModel, n: int, z_grid=None, alpha: float = 0.5,
                     ctx: LemmaContext | None = None, fd_step: float = 1e-4) -> CheckReport:
    """|phi_n(z) - 1| <= (e^{C(alpha) Delta} - 1)|z|^2/(alpha delta0)^2 on |z| <= alpha delta0,
    e^{-Delta} <= |phi_n| <= e^{Delta} on |z| <= delta0, phi_n(0) = 1 and phi_n'(0) = 0."""
    ctx = ctx or lemma_context(model)
    d0 = ctx.delta0
    zs = default_z_grid(d0) if z_grid is None else np.asarray(z_grid, dtype=complex)
    C = certify.c_alpha(alpha)
    growth = math.expm1(C * ctx.Delta)
    rep = CheckReport("ring-lemma", "phi_n stays near 1 and inside the annulus exp(-Delta) <= |phi_n| <= exp(Delta)",
                      aliases=("6.3",))
    spec, f = model.spec, model.f
    for z in zs:
        z = complex(z)
        ph = phi_n(spec, f, z, n, model=model)
        c = {"z_re": z.real, "z_im": z.imag, "n": n}
        if abs(z) <= alpha * d0 * (1 + 1e-12):
            rep.record(abs(ph - 1.0), growth * abs(z) ** 2 / (alpha * d0) ** 2, {**c, "quantity": "ring"})
        if abs(z) <= d0:
            rep.record(abs(ph), math.exp(ctx.Delta), {**c, "quantity": "annulus-upper"})
            rep.record(abs(ph), math.exp(-ctx.Delta), {**c, "quantity": "annulus-lower"}, lower=True)
    rep.record(abs(phi_n(spec, f, 0.0, n, model=model) - 1.0), 0.0, {"quantity": "phi(0)=1", "n": n})
    h = fd_step
    deriv = (phi_n(spec, f, 1j * h, n, model=model) - phi_n(spec, f, -1j * h, n, model=model)) / (2j * h)
    rep.record(abs(deriv), 0.0, {"quantity": "phi'(0)=0", "n": n, "step": h})
    rep.details.update(C_alpha=C, Delta=ctx.Delta, alpha=alpha, phi_prime0=abs(deriv))
    return rep


def second_moment(model: TransferModel, n_list) -> dict:
    """E[(S_n f)^2] = n C_0 + 2 sum_{k<n} (n - k) C_k under the Gibbs weights."""
    n_list = [int(n) for n in n_list]
    var, C = correlations(model, max(max(n_list) - 1, 0))
    out = {}
    for n in n_list:
        k = np.arange(1, n)
        out[n] = n * var + 2.0 * float(np.dot(n - k, C[:n - 1]))
    return out


def variance_rate_check(model: TransferModel, n_list=(1, 16, 256), alpha: float = 0.5,
                        ctx: LemmaContext | None = None) -> CheckReport:
    """|E[(S_n f)^2] - n sigma^2| <= 2 (e^{C(alpha) Delta} - 1)/(alpha delta0)^2."""
    ctx = ctx or lemma_context(model)
    rhs = 2.0 * math.expm1(certify.c_alpha(alpha) * ctx.Delta) / (alpha * ctx.delta0) ** 2
    rep = CheckReport("variance-rate", "second moment of S_n f stays within a constant of n sigma^2",
                      aliases=("6.6",))
    moments = second_moment(model, n_list)
    for n, e2 in moments.items():
        rep.record(abs(e2 - n * ctx.sigma2), rhs, {"n": n, "second_moment": e2})
    rep.details.update(rhs=rhs, alpha=alpha, moments={str(k): v for k, v in moments.items()})
    return rep


@dataclass
class RefinedBound:
    n: int
    T: float
    lhs: float
    rhs: float
    quad_error: float
    aux_ratio: float  # 18 alpha/(25(1 - alpha^4)), must stay <= 1/8
    terms: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.lhs <= self.rhs + self.quad_error and self.aux_ratio <= 0.125


def refined_fourier_bound(model: TransferModel, n: int, ctx: LemmaContext | None = None,
                          points: int = 801) -> RefinedBound:
    """Integral of |phi_hat - e^{-t^2/2}(1 - i t^3 P'''/(6 sigma^3 sqrt n))|/|t| over |t| <= alpha delta0 sigma sqrt n."""
    ctx = ctx or lemma_context(model)
    F, d0, s = ctx.sup_norm, ctx.delta0, ctx.sigma
    alpha = certify.alpha_of(d0, ctx.sigma2, F)
    T = alpha * d0 * s * math.sqrt(n)
    if points % 2 == 0:
        points += 1
    ts = np.linspace(0.0, T, points)
    phi = char_fn_batch(model, n, ts, s)
    corr = np.exp(-ts ** 2 / 2.0) * (1.0 - 1j * ts ** 3 * ctx.p3 / (6.0 * s ** 3 * math.sqrt(n)))
    g = np.zeros(points)
    g[1:] = np.abs(phi[1:] - corr[1:]) / ts[1:]
    half, err = _trapezoid_pair(ts, g, None)
    terms = {
        "ring": 4.0 * (math.exp(ctx.D_R / 2.0) * math.exp(2.0 * ctx.Delta0 / 9.0) - 1.0)
        / (alpha ** 2 * d0 ** 2 * ctx.sigma2 * n),
        "quartic": 129.0 * F / (ctx.sigma2 ** 2 * d0 ** 3 * n),
        "cubic_square": 288.0 * F ** 2 / (d0 ** 4 * ctx.sigma2 ** 3 * n),
        "b": "-P'''(0) t^3/(6 sigma^3 sqrt n)",
        "p3": ctx.p3,
    }
    rhs = terms["ring"] + terms["quartic"] + terms["cubic_square"]
    return RefinedBound(n, T, 2.0 * half, rhs, 2.0 * err + 1e-14, 18.0 * alpha / (25.0 * (1.0 - alpha ** 4)), terms)


def refined_fourier_check(model: TransferModel, n_list=(64, 1024), ctx: LemmaContext | None = None) -> CheckReport:
    ctx = ctx or lemma_context(model)
    rep = CheckReport("refined-fourier", "refined characteristic-function integral bound", aliases=("7.1",))
    for n in n_list:
        rb = refined_fourier_bound(model, int(n), ctx)
        rep.tolerances = {"abs": rb.quad_error, "rel": 0.0}
        rep.record(rb.lhs, rb.rhs, {"n": rb.n, "T": rb.T})
        rep.record(rb.aux_ratio, 0.125, {"n": rb.n, "quantity": "18 alpha/(25(1-alpha^4))"})
        rep.details.setdefault("rows", []).append({"n": rb.n, "T": rb.T, "lhs": rb.lhs, "rhs": rb.rhs,
                                                   "quad_error": rb.quad_error})
    return rep


LEMMA_IDS = ("5.1", "5.2", "6.3", "6.4", "6.5", "6.6", "7.1")


def disk_z_values(delta0: float, count: int, seed: int) -> np.ndarray:
    """``count`` seeded points of the closed disk |z| <= delta0, starting with 0 and the real/imaginary extremes."""
    rng = np.random.Generator(keyed_stream(seed, 0, purpose=12))
    fixed = [0j, delta0, -delta0, 1j * delta0, -1j * delta0]
    k = max(count - len(fixed), 0)
    r = delta0 * np.sqrt(rng.uniform(size=k))
    a = rng.uniform(0, 2 * math.pi, size=k)
    return np.concatenate([np.array(fixed[:count]), r * np.exp(1j * a)])


def lemma_suite(model: TransferModel, only=None, seed: int = 0, z_count: int = 100, u_samples: int = 10,
                pairs: int = 100, diameter_pairs: int = 1000, ring_n=(1, 16, 256),
                variance_n=(1, 16, 256), refined_n=(64, 1024), alpha: float = 0.5) -> list[CheckReport]:
    """Every operator-level sweep; ``only`` restricts to a subset of ids or aliases."""
    wanted = set(LEMMA_IDS if only is None else only)
    unknown = wanted - set(LEMMA_IDS) - {"lemma-epsilon", "lemma-diameter", "ring-lemma", "pressure-real-part",
                                         "pressure-taylor", "variance-rate", "refined-fourier"}
    if unknown:
        raise DomainError(f"unknown check ids: {sorted(unknown)}")

    def want(rid, alias):
        return rid in wanted or alias in wanted

    spec, f = model.spec, model.f
    out = []
    ctx = None
    if want("lemma-epsilon", "5.1"):
        d0 = model.delta0()
        rep = None
        for k, z in enumerate(disk_z_values(d0, z_count, seed)):
            rep = epsilon_z_check(spec, f, complex(z), u_samples=u_samples, seed=seed * 1000 + k, pairs=pairs,
                                  model=model, report=rep)
        rep.details["z_count"] = z_count
        out.append(rep)
    if want("lemma-diameter", "5.2"):
        out.append(cone_diameter_check(spec, pair_samples=diameter_pairs, seed=seed, model=model))
    analytic = [k for k in ("6.3", "6.4", "6.5", "6.6", "7.1") if want({"6.3": "ring-lemma", "6.4": "pressure-real-part",
                "6.5": "pressure-taylor", "6.6": "variance-rate", "7.1": "refined-fourier"}[k], k)]
    if analytic:
        ctx = lemma_context(model)
    if "6.3" in analytic:
        rep = None
        for n in ring_n:
            r = ring_lemma_check(model, n, alpha=alpha, ctx=ctx)
            if rep is None:
                rep = r
            else:
                rep.merge(r)
        out.append(rep)
    if "6.4" in analytic or "6.5" in analytic:
        out += pressure_lemma_checks(model, ctx=ctx, which=tuple(k for k in ("6.4", "6.5") if k in analytic))
    if "6.6" in analytic:
        out.append(variance_rate_check(model, variance_n, alpha=alpha, ctx=ctx))
    if "7.1" in analytic:
        out.append(refined_fourier_check(model, refined_n, ctx=ctx))
    return out


# --------------------------------------------------------------------------
# end-to-end experiment


@dataclass
class ExperimentRow:
    n: int
    distance: float
    slack: float
    feller: float
    feller_quad: float
    certificate: float

    @property
    def slack_ratio(self) -> float:
        return self.certificate / self.distance if self.distance > 0 else math.inf

    def to_dict(self) -> dict:
        return {"n": self.n, "distance": self.distance, "slack": self.slack, "feller": self.feller,
                "feller_quad_error": self.feller_quad, "certificate": self.certificate,
                "certificate_over_distance": self.slack_ratio}


@dataclass
class ExperimentReport:
    rows: list[ExperimentRow]
    sigma2: float
    beta: float | None
    c: float | None
    samples: int
    seed: int
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "sigma2": self.sigma2, "beta": self.beta,
                "c": self.c, "samples": self.samples, "seed": self.seed, "failures": list(self.failures),
                "pass": self.ok, "beta_band": list(BETA_BAND), "dkw_delta": DKW_DELTA}


def fit_rate(ns, distances) -> tuple[float, float]:
    """Least squares for log d = log c - beta log n."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.asarray(distances, dtype=float))
    slope, icpt = np.polyfit(x, y, 1)
    return float(-slope), float(math.exp(icpt))


def be_experiment(spec: MapSpec, f: ObservableSpec, n_list, samples: int, seed: int, grid=None,
                  T: float = FELLER_T, model: TransferModel | None = None, threads: int | None = None,
                  beta_band=BETA_BAND, raise_on_failure: bool = True, t_step: float = 0.02) -> ExperimentReport:
    """Kolmogorov distance against the Feller bound and the certificate for every n."""
    if samples < 10_000:
        raise DomainError("the experiment needs at least 10^4 samples")
    n_list = sorted(int(n) for n in n_list)
    model = model or model_for(spec, f, grid)
    s2 = variance_estimate(model).value
    cert = certify.certificate(spec.gamma, spec.G, f.sup_norm, f.lip_seminorm, s2)
    sigma = math.sqrt(s2)
    sums = birkhoff_samples(spec, f, n_list, samples, seed, model=model, threads=threads)
    rows = []
    failures = []
    for r, n in enumerate(n_list):
        ecdf = EmpiricalCDF(sums[r] / (sigma * math.sqrt(n)), seed)
        dist = kolmogorov_distance(ecdf)
        fb = feller_for(model, n, sigma, T, dense_step=t_step, coarse_step=12.5 * t_step)
        row = ExperimentRow(n, dist, ecdf.slack, fb.bound, fb.quad_tol, cert.per_n_bound(n).bound)
        rows.append(row)
        if dist - row.slack > row.certificate:
            failures.append(f"n={n}: distance {dist:.6g} exceeds certificate {row.certificate:.6g}")
        if dist - row.slack > row.feller + row.feller_quad:
            failures.append(f"n={n}: distance {dist:.6g} exceeds Feller bound {row.feller:.6g}")
    beta = c = None
    if len(rows) >= 2:
        beta, c = fit_rate([r.n for r in rows], [r.distance for r in rows])
        if beta_band is not None and not beta_band[0] <= beta <= beta_band[1]:
            failures.append(f"fitted rate {beta:.4g} outside [{beta_band[0]}, {beta_band[1]}]")
        for a, b in zip(rows, rows[1:]):
            if b.distance > a.distance + 2.0 * (a.slack + b.slack):
                failures.append(f"distance grows from n={a.n} to n={b.n} beyond the DKW envelope")
    rep = ExperimentReport(rows, s2, beta, c, samples, seed, failures)
    if failures and raise_on_failure:
        raise VerificationFailure("; ".join(failures), report=rep)
    return rep


# --------------------------------------------------------------------------
# finite-dimensional cone sweeps


def random_positive_matrix(rng: np.random.Generator, d: int) -> np.ndarray:
    return np.exp(rng.normal(size=(d, d)))


def cone_lab(dim: int = 5, matrices: int = 1000, seed: int = 0, comparisons: int = 100,
             comparison_samples: int = 8) -> list[CheckReport]:
    """Seeded sweeps of the real and complex cone inequalities on the standard cone."""
    if dim < 2 or matrices < 1 or comparisons < 0:
        raise DomainError("cone-lab needs dim >= 2 and at least one matrix")
    spec = cones.ConeSpec.standard_positive(dim)
    tight = {"abs": 1e-9, "rel": 0.0}
    iso = CheckReport("cone-isometry", "both complex estimators reproduce the Hilbert metric on real pairs",
                      tolerances=dict(tight), aliases=("4.3",))
    con = CheckReport("birkhoff-contraction", "d(Mx, My) <= tanh(Delta/4) d(x, y)",
                      tolerances={"abs": 1e-12, "rel": 0.0}, aliases=("3.1",))
    leg = CheckReport("complex-real-leg", "delta(x, x + iy) <= d(x, y)", tolerances={"abs": 0.0, "rel": 0.0},
                      aliases=("4.2",))
    sand = CheckReport("estimator-sandwich", "delta_lower <= delta_upper; images stay within 3 Delta (2 Delta with a real side)",
                       tolerances=dict(tight), aliases=("4.3",))
    proj = CheckReport("projectivity", "estimators are invariant under complex rescaling",
                       tolerances={"abs": 1e-12, "rel": 0.0})
    rng = np.random.Generator(keyed_stream(seed, 0, purpose=11))
    for k in range(matrices):
        M = random_positive_matrix(rng, dim)
        x, y = rng.exponential(size=dim), rng.exponential(size=dim)
        ctx = {"matrix": k}
        d = cones.hilbert_distance(spec, x, y)
        iso.record(abs(cones.delta_upper(spec, x, y) - d), 0.0, {**ctx, "estimator": "upper"})
        iso.record(abs(cones.delta_lower(spec, x, y) - d), 0.0, {**ctx, "estimator": "lower"})
        rep = cones.contraction_check(spec, M, x, y)
        con.record(rep.after, rep.bound, {**ctx, "diameter": rep.diameter, "ratio": rep.ratio})
        leg.record(cones.delta_x_plus_iy(spec, x, y), d, ctx)
        w1, w2 = cones.random_cone_vectors(spec, 2, rng)
        a, b = M @ w1, M @ w2
        lo, up = cones.delta_lower(spec, a, b), cones.delta_upper(spec, a, b)
        sand.record(lo, up, {**ctx, "quantity": "lower<=upper"})
        sand.record(lo, 3.0 * rep.diameter, {**ctx, "quantity": "3 Delta"})
        sand.record(cones.delta_lower(spec, a, M @ x), 2.0 * rep.diameter, {**ctx, "quantity": "2 Delta"})
        c = complex(np.exp(1j * rng.uniform(0, 2 * math.pi)) * rng.uniform(0.1, 10.0))
        proj.record(abs(cones.delta_lower(spec, c * a, b) - lo), 0.0, {**ctx, "estimator": "lower"})
        proj.record(abs(cones.delta_upper(spec, a, c * b) - up), 0.0, {**ctx, "estimator": "upper"})
    comp = CheckReport("perturbed-comparison", "A C inside C and delta(Ax, Px) <= 3 log(1/(1 - 2 eps (1 + cosh(Delta_P/2))))",
                       tolerances=dict(tight), aliases=("4.5",))
    for k in range(comparisons):
        P = random_positive_matrix(rng, dim)
        D = cones.birkhoff_diameter(spec, P)
        eps = rng.uniform(0.05, 0.95) / (2.0 * (1.0 + math.cosh(D / 2.0)))
        xi = rng.uniform(0.0, 1.0 - 1e-9, size=P.shape) * np.exp(1j * rng.uniform(0, 2 * math.pi, size=P.shape))
        A = P * (1.0 + eps * xi)
        r = cones.comparison_check(spec, P, A, eps, samples=comparison_samples, seed=seed * 100003 + k)
        ctx = {"instance": k, "eps": eps, "diameter": D}
        if not r.threshold_met:
            comp.fail("threshold not met for an instance drawn below it", ctx)
            continue
        if r.membership_failures:
            comp.fail("perturbed image left the complex cone", {**ctx, "worst_membership": r.worst_membership})
        comp.record(r.worst_distance, r.bound, ctx)
    reports = [iso, con, leg, sand, proj]
    if comparisons:
        reports.append(comp)
    return reports
