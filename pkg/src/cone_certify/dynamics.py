"""Expanding Markov interval maps, observables, orbits and Gibbs sampling."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import polygamma

from .errors import DomainError

log = logging.getLogger(__name__)

ArrayFn = Callable[[np.ndarray], np.ndarray]

BOUNDARY_TOL = 1e-14
JITTER = 1e-12
SHARD_SIZE = 65536


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class Metric:
    """A length metric on [0, 1] with density ``weight``.

    ``euclidean`` has weight 1; ``gauss_alpha`` has weight 1 - alpha - alpha*s,
    which integrates to d_alpha(x, y) = |x - y| (1 - alpha - alpha (x + y) / 2).
    """

    kind: str = "euclidean"
    alpha: float = 0.0

    def __post_init__(self):
        if self.kind not in ("euclidean", "gauss_alpha"):
            raise DomainError(f"unknown metric kind {self.kind!r}")
        if self.kind == "gauss_alpha" and not 0.0 < self.alpha < 0.5:
            raise DomainError(f"gauss metric needs 0 < alpha < 1/2, got {self.alpha}")

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "euclidean":
            return np.abs(x - y)
        return gauss_metric_distance(self.alpha, x, y)

    def weight(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "euclidean":
            return np.ones_like(s)
        return 1.0 - self.alpha - self.alpha * s

    def pairwise(self, points):
        p = np.asarray(points, dtype=float)
        return self.distance(p[:, None], p[None, :])

    def describe(self) -> dict:
        if self.kind == "euclidean":
            return {"kind": "euclidean"}
        return {"kind": "gauss_alpha", "alpha": self.alpha}


def gauss_metric_distance(alpha, x, y):
    """d_alpha(x, y) = |x - y| (1 - alpha - alpha (x + y) / 2)."""
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 1/2), got {alpha}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.abs(x - y) * (1.0 - alpha - alpha * (x + y) / 2.0)
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# maps and observables


@dataclass(frozen=True)
class Branch:
    sigma: ArrayFn
    potential: ArrayFn  # g o sigma_j
    domain: tuple[float, float]
    forward: ArrayFn | None = None  # T restricted to the domain
    label: str = ""


@dataclass
class MapSpec:
    name: str
    branches: list[Branch]
    gamma: float
    G: float
    metric: Metric = field(default_factory=Metric)
    # aggregated remainder of a countable branch family; enters the operator only
    tail: Branch | None = None
    tail_bound: float = 0.0
    tail_forward: ArrayFn | None = None
    params: dict = field(default_factory=dict)
    # optional closed-form T on all of [0, 1]; must agree with the branch inverses
    forward: ArrayFn | None = None

    def __post_init__(self):
        if not self.gamma > 1.0:
            raise DomainError(f"expansion constant gamma must exceed 1, got {self.gamma}")
        if self.G < 0:
            raise DomainError(f"G must be nonnegative, got {self.G}")
        if not self.branches:
            raise DomainError("a map needs at least one branch")
        order = np.argsort([b.domain[0] for b in self.branches])
        self.branches = [self.branches[i] for i in order]
        self._starts = np.array([b.domain[0] for b in self.branches])
        self._ends = np.array([b.domain[1] for b in self.branches])
        self._endpoints = np.unique(np.concatenate([self._starts, self._ends]))

    @property
    def operator_branches(self) -> list[Branch]:
        return self.branches + ([self.tail] if self.tail is not None else [])

    @property
    def branch_count(self) -> int:
        return len(self.branches)

    def describe(self) -> dict:
        return {
            "name": self.name,
            "gamma": self.gamma,
            "G": self.G,
            "metric": self.metric.describe(),
            "branch_count": self.branch_count,
            "tail_bound": self.tail_bound,
            **self.params,
        }

    # forward dynamics -----------------------------------------------------

    def _jitter(self, x):
        e = self._endpoints
        k = np.clip(np.searchsorted(e, x), 1, e.size - 1)
        gap = np.minimum(np.abs(x - e[k - 1]), np.abs(x - e[k]))
        hit = gap < BOUNDARY_TOL
        if hit.any():
            x = x.copy()
            x[hit] = np.where(x[hit] + JITTER <= 1.0, x[hit] + JITTER, x[hit] - JITTER)
        return x, int(hit.sum())

    def step(self, x) -> tuple[np.ndarray, int]:
        """Apply T to an array of points. Returns (T x, number of jittered points)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x, jittered = self._jitter(x)
        if self.forward is not None:
            return np.clip(self.forward(x), 0.0, 1.0), jittered
        out = np.empty_like(x)
        idx = np.searchsorted(self._starts, x, side="right") - 1
        covered = (idx >= 0) & (x <= self._ends[np.clip(idx, 0, None)])
        for j in np.unique(idx[covered]):
            sel = covered & (idx == j)
            out[sel] = _branch_forward(self.branches[j], x[sel])
        if (~covered).any():
            if self.tail_forward is None:
                raise DomainError(f"point(s) {x[~covered][:3]} lie outside every branch domain")
            out[~covered] = self.tail_forward(x[~covered])
        return np.clip(out, 0.0, 1.0), jittered


def _branch_forward(branch: Branch, x):
    if branch.forward is not None:
        return branch.forward(x)
    # invert the monotone inverse branch by bisection
    lo = np.zeros_like(x)
    hi = np.ones_like(x)
    s0 = branch.sigma(np.zeros(1))[0]
    s1 = branch.sigma(np.ones(1))[0]
    increasing = s1 >= s0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        above = branch.sigma(mid) > x
        go_left = above if increasing else ~above
        hi = np.where(go_left, mid, hi)
        lo = np.where(go_left, lo, mid)
    return 0.5 * (lo + hi)


@dataclass
class ObservableSpec:
    name: str
    func: ArrayFn
    sup_norm: float
    lip_seminorm: float
    centered: bool = True
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.func(np.asarray(x, dtype=float))

    @property
    def lip_norm(self) -> float:
        return self.sup_norm + self.lip_seminorm

    def describe(self) -> dict:
        return {
            "name": self.name,
            "sup_norm": self.sup_norm,
            "lip_seminorm": self.lip_seminorm,
            "centered": self.centered,
            **self.params,
        }


# --------------------------------------------------------------------------
# presets


def doubling_map() -> MapSpec:
    """x -> 2x mod 1 with g = -log 2. Markov, Lebesgue-invariant."""
    branches = [
        Branch(
            sigma=lambda x, j=j: (np.asarray(x, dtype=float) + j) / 2.0,
            potential=lambda x: np.full(np.shape(x), -math.log(2.0)),
            domain=(j / 2.0, (j + 1) / 2.0),
            forward=lambda x, j=j: 2.0 * x - j,
            label=f"j={j}",
        )
        for j in (0, 1)
    ]
    # |g o sigma_j|_l = 0, so A2 only holds in the limit G -> 0+.
    return MapSpec("doubling", branches, gamma=2.0, G=0.0, params={"preset": "doubling"},
                   forward=lambda x: np.where(x < 0.5, 2.0 * x, 2.0 * x - 1.0))


def gauss_constants(alpha: float) -> tuple[float, float]:
    """(gamma, G) for the Gauss map under d_alpha."""
    if not 0.0 < alpha < 0.5:
        raise DomainError(f"alpha must lie in (0, 1/2), got {alpha}")
    return 1.0 / (1.0 - 5.0 * alpha / 4.0), 2.0 / (1.0 - 2.0 * alpha)


def gauss_tail_bound(j_max: int) -> float:
    """sum_{j > j_max} 1/j^2, which dominates the dropped branch weights (j + x)^-2."""
    if j_max < 1:
        raise DomainError("j_max must be at least 1")
    return float(polygamma(1, j_max + 1))


def _gauss_tail_branch(j_max: int) -> Branch:
    # Lumped remainder sum_{j > J} (j+x)^-2 u(1/(j+x)): exact total weight,
    # evaluated at the weight-averaged preimage.
    def weight(x):
        return polygamma(1, j_max + 1 + np.asarray(x, dtype=float))

    def point(x):
        x = np.asarray(x, dtype=float)
        return -0.5 * polygamma(2, j_max + 1 + x) / weight(x)

    return Branch(
        sigma=point,
        potential=lambda x: np.log(weight(x)),
        domain=(0.0, 1.0 / (j_max + 1)),
        label=f"tail>{j_max}",
    )


def gauss_map(alpha: float = 0.2, j_max: int = 64) -> MapSpec:
    """Gauss map x -> {1/x} truncated at j_max branches plus an aggregated tail."""
    gamma, G = gauss_constants(alpha)
    if j_max < 1:
        raise DomainError("j_max must be at least 1")
    branches = [
        Branch(
            sigma=lambda x, j=j: 1.0 / (j + np.asarray(x, dtype=float)),
            potential=lambda x, j=j: -2.0 * np.log(j + np.asarray(x, dtype=float)),
            domain=(1.0 / (j + 1), 1.0 / j),
            forward=lambda x, j=j: 1.0 / x - j,
            label=f"j={j}",
        )
        for j in range(1, j_max + 1)
    ]

    def tail_forward(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        inv = 1.0 / x[pos]
        out[pos] = inv - np.floor(inv)
        return out

    return MapSpec(
        "gauss",
        branches,
        gamma=gamma,
        G=G,
        metric=Metric("gauss_alpha", alpha),
        tail=_gauss_tail_branch(j_max),
        tail_bound=gauss_tail_bound(j_max),
        tail_forward=tail_forward,
        params={"preset": "gauss", "alpha": alpha, "j_max": j_max},
        forward=tail_forward,
    )


def piecewise_linear_map(tables: Sequence[dict], gamma: float, G: float, metric: Metric | None = None,
                         name: str = "custom") -> MapSpec:
    """Map given by tabulated inverse branches.

    Each table has ``x`` (nodes in [0, 1]), ``sigma`` (values of the inverse
    branch) and ``potential`` (values of g o sigma_j).
    """
    branches = []
    for k, tab in enumerate(tables):
        xs = np.asarray(tab["x"], dtype=float)
        sig = np.asarray(tab["sigma"], dtype=float)
        pot = np.asarray(tab["potential"], dtype=float)
        if xs.ndim != 1 or xs.shape != sig.shape or xs.shape != pot.shape or xs.size < 2:
            raise DomainError(f"branch table {k}: x, sigma, potential must be equal-length 1-d arrays")
        if np.any(np.diff(xs) <= 0) or xs[0] != 0.0 or xs[-1] != 1.0:
            raise DomainError(f"branch table {k}: x must increase strictly from 0 to 1")
        if np.any(sig < 0) or np.any(sig > 1):
            raise DomainError(f"branch table {k}: sigma leaves [0, 1]")
        if not (np.all(np.diff(sig) > 0) or np.all(np.diff(sig) < 0)):
            raise DomainError(f"branch table {k}: sigma must be strictly monotone")
        lo, hi = float(sig.min()), float(sig.max())
        branches.append(
            Branch(
                sigma=lambda x, xs=xs, sig=sig: np.interp(x, xs, sig),
                potential=lambda x, xs=xs, pot=pot: np.interp(x, xs, pot),
                domain=(lo, hi),
                label=f"table{k}",
            )
        )
    return MapSpec(name, branches, gamma=gamma, G=G, metric=metric or Metric(),
                   params={"preset": "custom"})


def observable(name: str, metric: Metric | None = None, **kw) -> ObservableSpec:
    """Observable presets.

    ``cos1`` cos(2 pi x), ``sin1`` sin(2 pi x), ``cocycle`` cos(4 pi x) - cos(2 pi x)
    (a coboundary for the doubling map), ``gauss_x`` x - E[x] under the Gauss
    measure, ``const`` (keyword ``c``) and ``zero``.
    """
    metric = metric or Metric()
    # largest ratio |x - y| / d(x, y), used to turn derivative bounds into |f|_l
    stretch = 1.0 if metric.kind == "euclidean" else 1.0 / (1.0 - 2.0 * metric.alpha)
    two_pi = 2.0 * math.pi
    if name == "cos1":
        return ObservableSpec(name, lambda x: np.cos(two_pi * x), 1.0, two_pi * stretch)
    if name == "sin1":
        return ObservableSpec(name, lambda x: np.sin(two_pi * x), 1.0, two_pi * stretch)
    if name == "cocycle":
        return ObservableSpec(name, lambda x: np.cos(2 * two_pi * x) - np.cos(two_pi * x),
                              2.0, 3.0 * two_pi * stretch)
    if name == "gauss_x":
        mean = 1.0 / math.log(2.0) - 1.0
        return ObservableSpec(name, lambda x: x - mean, max(mean, 1.0 - mean), stretch,
                              params={"mean_removed": mean})
    if name == "const":
        c = float(kw.get("c", 1.0))
        return ObservableSpec(name, lambda x: np.full(np.shape(x), c), abs(c), 0.0,
                              centered=c == 0.0, params={"c": c})
    if name == "zero":
        return ObservableSpec(name, lambda x: np.zeros(np.shape(x)), 0.0, 0.0)
    raise DomainError(f"unknown observable preset {name!r}")


def table_observable(x, values, metric: Metric | None = None, name: str = "table",
                     centered: bool = True) -> ObservableSpec:
    """Piecewise-linear observable with exact sup norm and Lipschitz seminorm."""
    metric = metric or Metric()
    xs = np.asarray(x, dtype=float)
    vs = np.asarray(values, dtype=float)
    if xs.shape != vs.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
        raise DomainError("observable table needs increasing x and matching values")
    slopes = np.abs(np.diff(vs) / np.diff(xs))
    # for a length metric the quotient peaks where the density is smallest
    w_min = np.minimum(metric.weight(xs[:-1]), metric.weight(xs[1:]))
    lip = float(np.max(slopes / w_min))
    return ObservableSpec(name, lambda t: np.interp(t, xs, vs), float(np.abs(vs).max()), lip,
                          centered=centered)


# --------------------------------------------------------------------------
# assumption checks


@dataclass
class ValidationReport:
    worst_contraction: float
    declared_contraction: float
    worst_potential_lip: float
    declared_G: float
    weight_sum_sup: float
    tail_bound: float
    inverse_error: float
    diameter: float
    flags: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(not f.startswith("warning") for f in self.flags)


def validate_assumptions(spec: MapSpec, grid_size: int = 64, rel_tol: float = 1e-12) -> ValidationReport:
    """Spot-check expansion, potential regularity and summability on a grid."""
    if grid_size < 2:
        raise DomainError("grid_size must be at least 2")
    xs = np.linspace(0.0, 1.0, grid_size)
    i, k = np.triu_indices(grid_size, 1)
    d = spec.metric.distance(xs[i], xs[k])
    worst_c = 0.0
    worst_g = 0.0
    weights = np.zeros(grid_size)
    for b in spec.operator_branches:
        s = b.sigma(xs)
        g = b.potential(xs)
        worst_c = max(worst_c, float(np.max(spec.metric.distance(s[i], s[k]) / d)))
        worst_g = max(worst_g, float(np.max(np.abs(g[i] - g[k]) / d)))
        weights += np.exp(g)
    inv_err = 0.0
    for b in spec.branches:
        s = b.sigma(xs)
        inside = (s > b.domain[0] + 1e-9) & (s < b.domain[1] - 1e-9)
        if inside.any():
            back = _branch_forward(b, s[inside])
            inv_err = max(inv_err, float(np.max(np.abs(back - xs[inside]))))
    diameter = float(spec.metric.distance(0.0, 1.0))
    flags = []
    if worst_c > (1.0 + rel_tol) / spec.gamma:
        flags.append(f"contraction {worst_c:.6g} exceeds declared 1/gamma = {1 / spec.gamma:.6g}")
    if worst_g > spec.G * (1.0 + rel_tol) + rel_tol:
        flags.append(f"potential Lipschitz quotient {worst_g:.6g} exceeds declared G = {spec.G:.6g}")
    if spec.G == 0.0:
        flags.append("warning: G = 0 declared; the formulas are used in the limit G -> 0+")
    if diameter > 1.0 + rel_tol:
        flags.append(f"metric diameter {diameter:.6g} exceeds 1")
    if inv_err > 1e-10:
        flags.append(f"T(sigma_j x) deviates from x by {inv_err:.3g}")
    if not np.isfinite(weights).all():
        flags.append("branch weight sum is not finite")
    return ValidationReport(
        worst_contraction=worst_c,
        declared_contraction=1.0 / spec.gamma,
        worst_potential_lip=worst_g,
        declared_G=spec.G,
        weight_sum_sup=float(weights.max()) + spec.tail_bound * (spec.tail is None),
        tail_bound=spec.tail_bound,
        inverse_error=inv_err,
        diameter=diameter,
        flags=flags,
    )


def validate_observable(f: ObservableSpec, metric: Metric, grid_size: int = 4097) -> list[str]:
    """Flags where grid estimates of |f|_inf or |f|_l exceed the declared values."""
    xs = np.linspace(0.0, 1.0, grid_size)
    v = f(xs)
    flags = []
    sup = float(np.abs(v).max())
    lip = float(np.max(np.abs(np.diff(v)) / metric.distance(xs[:-1], xs[1:])))
    if sup > f.sup_norm * (1 + 1e-12) + 1e-15:
        flags.append(f"sup norm on grid {sup:.6g} exceeds declared {f.sup_norm:.6g}")
    if lip > f.lip_seminorm * (1 + 1e-9) + 1e-15:
        flags.append(f"Lipschitz quotient on grid {lip:.6g} exceeds declared {f.lip_seminorm:.6g}")
    return flags


# --------------------------------------------------------------------------
# orbits


def orbit(spec: MapSpec, x0: float, n: int, events: list | None = None) -> np.ndarray:
    """Points x0, T x0, ..., T^n x0 (boundary hits are jittered)."""
    pts = np.empty(n + 1)
    x = np.array([float(x0)])
    pts[0] = x[0]
    for k in range(n):
        x_j, hit = spec._jitter(x)
        if hit:
            log.debug("orbit point %r jittered at step %d", x[0], k)
            if events is not None:
                events.append({"step": k, "point": float(x[0]), "jittered_to": float(x_j[0])})
            pts[k] = x_j[0]
        x, _ = spec.step(x_j)
        pts[k + 1] = x[0]
    return pts


def birkhoff_sum(spec: MapSpec, f: ObservableSpec, x0: float, n: int, events: list | None = None) -> float:
    """S_n f(x0) = sum_{k < n} f(T^k x0)."""
    if n < 0:
        raise DomainError("n must be nonnegative")
    if n == 0:
        return 0.0
    pts = orbit(spec, x0, n, events)[:n]
    return math.fsum(f(pts).tolist())


# --------------------------------------------------------------------------
# random streams and sampling


def keyed_stream(seed: int, shard: int, purpose: int = 0) -> np.random.Philox:
    """Counter-based stream for shard ``shard``; independent of generation order."""
    return np.random.Philox(key=int(seed) % (1 << 64), counter=[0, int(shard), int(purpose), 0])


def keyed_uniforms(seed: int, count: int, purpose: int = 0) -> np.ndarray:
    out = np.empty(count)
    for shard, start in enumerate(range(0, count, SHARD_SIZE)):
        m = min(SHARD_SIZE, count - start)
        gen = np.random.Generator(keyed_stream(seed, shard, purpose))
        out[start:start + m] = gen.random(m)
    return out


def sample_gibbs(spec: MapSpec | None, density, count: int, seed: int, nodes=None,
                 norm_tol: float = 1e-8) -> np.ndarray:
    """Draw ``count`` points from a piecewise-linear density by exact inverse CDF.

    ``density`` holds values at ``nodes`` (default: uniform grid of matching size).
    ``spec`` is accepted for symmetry with the other orbit routines and is not used.
    """
    p = np.asarray(density, dtype=float)
    x = np.linspace(0.0, 1.0, p.size) if nodes is None else np.asarray(nodes, dtype=float)
    if x.shape != p.shape or x.size < 2:
        raise DomainError("density must be given at every grid node")
    if np.any(p < 0):
        raise DomainError("density must be nonnegative")
    widths = np.diff(x)
    cell_mass = 0.5 * (p[:-1] + p[1:]) * widths
    total = float(cell_mass.sum())
    if abs(total - 1.0) > norm_tol:
        raise DomainError(f"density integrates to {total!r}, not 1")
    if count == 0:
        return np.empty(0)
    cdf = np.concatenate([[0.0], np.cumsum(cell_mass)])
    u = keyed_uniforms(seed, count) * cdf[-1]
    cell = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, widths.size - 1)
    q = u - cdf[cell]
    a = p[cell]
    b = p[cell + 1]
    w = widths[cell]
    disc = np.sqrt(np.maximum(a * a + 2.0 * (b - a) * q / w, 0.0))
    denom = a + disc
    s = np.where(denom > 0, 2.0 * q / np.where(denom > 0, denom, 1.0), 0.0)
    return np.clip(x[cell] + np.minimum(s, w), 0.0, 1.0)


def doubling_birkhoff_sums(func: ArrayFn, n_list: Sequence[int], count: int, seed: int,
                           shard_size: int = 1024, executor=None) -> np.ndarray:
    """Exact Lebesgue-distributed Birkhoff sums for the doubling map.

    The initial point is a stream of fair bits; T^k x is read off as the
    53-bit window starting at bit k, so no precision is lost along the orbit.
    Returns an array of shape (len(n_list), count).
    """
    n_list = [int(n) for n in n_list]
    n_max = max(n_list)
    words = n_max // 64 + 2
    shards = [(s, min(shard_size, count - s * shard_size)) for s in range((count + shard_size - 1) // shard_size)]

    def run(shard):
        index, m = shard
        raw = keyed_stream(seed, index, purpose=7).random_raw(m * words)
        bits = np.asarray(raw, dtype=np.uint64).reshape(m, words)
        sums = np.zeros((len(n_list), m))
        acc = np.zeros(m)
        done = 0
        block = 512
        for start in range(0, n_max, block):
            k = np.arange(start, min(start + block, n_max))
            idx = k >> 6
            sh = (k & 63).astype(np.uint64)
            hi = bits[:, idx] << sh
            lo_shift = (np.uint64(64) - sh) & np.uint64(63)
            lo = np.where(sh == 0, np.uint64(0), bits[:, idx + 1] >> lo_shift)
            pts = ((hi | lo) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
            vals = func(pts)
            csum = np.cumsum(vals, axis=1) + acc[:, None]
            for r, n in enumerate(n_list):
                if start < n <= k[-1] + 1:
                    sums[r] = csum[:, n - start - 1]
            acc = csum[:, -1]
            done = k[-1] + 1
        assert done == n_max
        return sums

    results = list(executor.map(run, shards)) if executor is not None else [run(s) for s in shards]
    return np.concatenate(results, axis=1)
