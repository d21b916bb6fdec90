"""Closed-form constants of the Berry-Esseen certificate, Markov and non-Markov variants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import DegenerateVarianceError, DomainError, InconsistencyError

ALPHA_MAX = 4.0 / 25.0
HEADLINE_COEFF = 11460.0
NONMARKOV_COEFF = 9168.0
NONMARKOV_DELTA0 = 3.51
DR_AGREEMENT = 1e-12


def _need_expanding(gamma: float, G: float) -> None:
    if not gamma > 1.0:
        raise DomainError(f"gamma must exceed 1, got {gamma}")
    if not G >= 0.0:
        raise DomainError(f"G must be nonnegative, got {G}")


def constant_B(gamma: float, G: float) -> float:
    """B = (gamma G + 1)/(gamma - 1), so that B (gamma - 1) - gamma G = 1."""
    _need_expanding(gamma, G)
    return (gamma * G + 1.0) / (gamma - 1.0)


def dr_closed_form(gamma: float, G: float) -> float:
    _need_expanding(gamma, G)
    g2G = gamma * gamma * G
    return 2.0 * (g2G + 1.0) / (gamma * (gamma - 1.0)) + 2.0 * math.log((2.0 * g2G + gamma + 1.0) / (gamma - 1.0))


def dr_composed_form(gamma: float, G: float) -> float:
    """The same diameter assembled from B: 2 log((B+G+B/g)/(B-G-B/g)) + 2(G + B/g)."""
    B = constant_B(gamma, G)
    lo = B - G - B / gamma
    if not lo > 0:
        raise DomainError("B - G - B/gamma must be positive")
    return 2.0 * math.log((B + G + B / gamma) / lo) + 2.0 * (G + B / gamma)


def constant_DR(gamma: float, G: float) -> float:
    """Cone diameter bound; both closed forms are evaluated and must agree."""
    a = dr_closed_form(gamma, G)
    b = dr_composed_form(gamma, G)
    if abs(a - b) > DR_AGREEMENT * max(1.0, abs(a)):
        raise InconsistencyError(f"diameter forms disagree: {a!r} vs {b!r}")
    return a


def delta0(D_R: float, sup_norm: float, lip_seminorm: float) -> float:
    """delta0 (|f|_inf + |f|_l) = 1/(6 cosh^2(D_R/4))."""
    total = sup_norm + lip_seminorm
    if not total > 0:
        raise DomainError("the observable has zero Lipschitz norm")
    return 1.0 / (6.0 * math.cosh(D_R / 4.0) ** 2 * total)


def delta0_threshold(D_R: float) -> tuple[float, float]:
    """(eps0, Delta0) with eps0 = e^{1/6}/(3(1 + cosh(D_R/2)))."""
    if D_R < 0:
        raise DomainError("D_R must be nonnegative")
    eps0 = math.exp(1.0 / 6.0) / (3.0 * (1.0 + math.cosh(D_R / 2.0)))
    t = 2.0 * math.exp(1.0 / 6.0) / 3.0
    assert t < 1.0
    return eps0, -3.0 * math.log1p(-t)


def threshold_value(eps0: float, D_R: float) -> float:
    return 2.0 * eps0 * (1.0 + math.cosh(D_R / 2.0))


def big_delta(D_R: float, Delta0: float) -> float:
    return 2.0 * D_R + Delta0


def alpha_of(delta0_value: float, sigma2: float, sup_norm: float, tol: float = 1e-9) -> float:
    """alpha = delta0 sigma^2 / (25 |f|_inf), which cannot exceed 4/25."""
    if not sigma2 > 0:
        raise DegenerateVarianceError("sigma^2 = 0: the observable is a coboundary")
    if not sup_norm > 0:
        raise DomainError("sup norm must be positive")
    a = delta0_value * sigma2 / (25.0 * sup_norm)
    if a > ALPHA_MAX + tol:
        raise InconsistencyError(
            f"alpha = {a!r} exceeds 4/25: sigma^2 = {sigma2!r} breaks sigma^2 <= 4 |f|_inf / delta0")
    return a


def c_alpha(alpha: float) -> float:
    """C(alpha) = (2/pi) log((1 + alpha)/(1 - alpha))."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    return 2.0 / math.pi * math.log1p(2.0 * alpha / (1.0 - alpha))


@dataclass(frozen=True)
class ApertureConstants:
    K: float
    C1: float
    r_star: float

    @property
    def K_prime(self) -> float:
        # implementation-derived: inverse radius of the certified ball around 1
        return 1.0 / self.r_star


def aperture_constants(B: float) -> ApertureConstants:
    """K = sqrt(2)(B+1)e^B, C1 = max(1, B e^B), r* the positive root of C1^2 r^2 + 2 C1^2 r - B^2."""
    if not B > 0:
        raise DomainError("B must be positive")
    C1 = max(1.0, B * math.exp(B))
    q = (B / C1) ** 2
    r = q / (math.sqrt(1.0 + q) + 1.0)  # sqrt(1 + q) - 1 without cancellation
    return ApertureConstants(math.sqrt(2.0) * (B + 1.0) * math.exp(B), C1, r)


@dataclass(frozen=True)
class BEBound:
    n: int
    final_constant: float
    bound: float
    intermediate: float

    @property
    def slack(self) -> float:
        return self.bound / self.intermediate


def headline_constant(D_R: float, sup_norm: float, lip_seminorm: float, sigma: float,
                      coeff: float = HEADLINE_COEFF) -> float:
    if not sigma > 0:
        raise DegenerateVarianceError("sigma = 0: the observable is a coboundary")
    return coeff * math.cosh(D_R / 4.0) ** 6 * sup_norm * (sup_norm + lip_seminorm) ** 2 / sigma ** 3


def be_bound(D_R: float, sup_norm: float, lip_seminorm: float, sigma: float, n: int,
             tol: float = 1e-12) -> BEBound:
    """Kolmogorov-distance bound at n, in headline form and in the sharper intermediate form."""
    if n < 1:
        raise DomainError("n must be at least 1")
    C = headline_constant(D_R, sup_norm, lip_seminorm, sigma)
    d0 = delta0(D_R, sup_norm, lip_seminorm)
    a = alpha_of(d0, sigma * sigma, sup_norm)
    root = math.sqrt(n)
    inter = 40.0 * math.cosh(D_R / 4.0) ** 2 / (math.pi * a * d0 * sigma * root)
    out = BEBound(n, C, C / root, inter)
    if inter > out.bound * (1.0 + tol):
        raise InconsistencyError(f"intermediate bound {inter!r} exceeds headline bound {out.bound!r}")
    return out


def _prov(formula: str, **inputs) -> dict:
    return {"formula": formula, "inputs": inputs}


@dataclass
class CertificateReport:
    gamma: float
    G: float
    sup_norm: float
    lip_seminorm: float
    B: float
    D_R: float
    aperture: ApertureConstants
    delta0: float
    eps0: float
    Delta0: float
    threshold: float
    Delta: float
    sigma2: float
    alpha: float
    C_alpha: float
    final_constant: float
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def per_n_bound(self, n: int) -> BEBound:
        return be_bound(self.D_R, self.sup_norm, self.lip_seminorm, self.sigma, n)

    def check_invariants(self) -> list[str]:
        bad = []
        if not self.B > self.gamma * self.G / (self.gamma - 1.0):
            bad.append("B <= gamma G/(gamma - 1)")
        if not self.threshold < 1.0:
            bad.append("comparison threshold not met")
        if self.alpha > ALPHA_MAX + 1e-9:
            bad.append("alpha exceeds 4/25")
        if not self.delta0 > 0:
            bad.append("delta0 not positive")
        for k, v in self.fields().items():
            if isinstance(v, float) and not math.isfinite(v):
                bad.append(f"{k} not finite")
        return bad

    def fields(self) -> dict:
        return {
            "gamma": self.gamma,
            "G": self.G,
            "sup_norm": self.sup_norm,
            "lip_seminorm": self.lip_seminorm,
            "B": self.B,
            "D_R": self.D_R,
            "K_aperture": self.aperture.K,
            "C1": self.aperture.C1,
            "r_star": self.aperture.r_star,
            "K_prime": self.aperture.K_prime,
            "delta0": self.delta0,
            "eps0": self.eps0,
            "Delta0": self.Delta0,
            "threshold": self.threshold,
            "Delta": self.Delta,
            "sigma2": self.sigma2,
            "alpha": self.alpha,
            "C_alpha": self.C_alpha,
            "final_constant": self.final_constant,
        }

    def to_dict(self, n_list=()) -> dict:
        rows = []
        for n in n_list:
            b = self.per_n_bound(int(n))
            rows.append({"n": b.n, "bound": b.bound, "intermediate": b.intermediate, "slack": b.slack})
        return {"fields": self.fields(), "per_n": rows, "flags": list(self.flags),
                "provenance": self.provenance}


def certificate(gamma: float, G: float, sup_norm: float, lip_seminorm: float, sigma2: float) -> CertificateReport:
    """Assemble the full constant chain for given map constants, observable norms and variance."""
    flags = []
    if G == 0.0:
        flags.append("warning: G = 0; constants are the G -> 0+ limits")
    B = constant_B(gamma, G)
    D_R = constant_DR(gamma, G)
    ap = aperture_constants(B)
    d0 = delta0(D_R, sup_norm, lip_seminorm)
    eps0, D0 = delta0_threshold(D_R)
    a = alpha_of(d0, sigma2, sup_norm)
    rep = CertificateReport(
        gamma=gamma, G=G, sup_norm=sup_norm, lip_seminorm=lip_seminorm, B=B, D_R=D_R, aperture=ap,
        delta0=d0, eps0=eps0, Delta0=D0, threshold=threshold_value(eps0, D_R), Delta=big_delta(D_R, D0),
        sigma2=sigma2, alpha=a, C_alpha=c_alpha(a),
        final_constant=headline_constant(D_R, sup_norm, lip_seminorm, math.sqrt(sigma2)),
        flags=flags,
    )
    p = rep.provenance
    p["B"] = _prov("(gamma*G+1)/(gamma-1)", gamma=gamma, G=G)
    p["D_R"] = _prov("2(gamma^2 G+1)/(gamma(gamma-1)) + 2 log((2 gamma^2 G+gamma+1)/(gamma-1))",
                     gamma=gamma, G=G, composed_form=dr_composed_form(gamma, G))
    p["K_aperture"] = _prov("sqrt(2)(B+1)exp(B)", B=B)
    p["C1"] = _prov("max(1, B exp(B))", B=B)
    p["r_star"] = _prov("sqrt(1+B^2/C1^2)-1", B=B, C1=ap.C1)
    p["K_prime"] = _prov("1/r_star (implementation-derived)", r_star=ap.r_star)
    p["delta0"] = _prov("1/(6 cosh^2(D_R/4)(|f|_inf+|f|_l))", D_R=D_R, sup_norm=sup_norm,
                        lip_seminorm=lip_seminorm)
    p["eps0"] = _prov("exp(1/6)/(3(1+cosh(D_R/2)))", D_R=D_R)
    p["Delta0"] = _prov("3 log(1/(1-(2/3)exp(1/6)))")
    p["threshold"] = _prov("2 eps0 (1+cosh(D_R/2))", eps0=eps0, D_R=D_R)
    p["Delta"] = _prov("2 D_R + Delta0", D_R=D_R, Delta0=D0)
    p["sigma2"] = _prov("input", sigma2=sigma2)
    p["alpha"] = _prov("delta0 sigma^2/(25 |f|_inf)", delta0=d0, sigma2=sigma2, sup_norm=sup_norm)
    p["C_alpha"] = _prov("(2/pi) log((1+alpha)/(1-alpha))", alpha=a)
    p["final_constant"] = _prov("11460 cosh^6(D_R/4)|f|_inf(|f|_inf+|f|_l)^2/sigma^3", D_R=D_R,
                                sup_norm=sup_norm, lip_seminorm=lip_seminorm, sigma=math.sqrt(sigma2))
    for name in ("gamma", "G", "sup_norm", "lip_seminorm"):
        p[name] = _prov("input", **{name: getattr(rep, name)})
    bad = rep.check_invariants()
    if bad:
        raise InconsistencyError("; ".join(bad))
    return rep


# --------------------------------------------------------------------------
# non-Markov variant


def lasota_yorke_cone_parameter(gamma: float, A_LY: float) -> float:
    """a = 2A/(1 - 2/gamma), twice the minimal admissible value."""
    if not gamma > 2.0:
        raise DomainError(f"the non-Markov certificate needs gamma > 2, got {gamma}")
    return 2.0 * A_LY / (1.0 - 2.0 / gamma)


def M_n(n: int, gamma: float, sup_f: float, variation_f: float, card_A0: float) -> float:
    """5/(1 - (2/gamma)^n) (n |f|_inf + (2/gamma)^n (#A0)^n v(f))."""
    if not gamma > 2.0:
        raise DomainError(f"gamma must exceed 2, got {gamma}")
    q = 2.0 / gamma
    return 5.0 / (1.0 - q ** n) * (n * sup_f + (q * card_A0) ** n * variation_f)


def nonmarkov_delta0() -> float:
    """3 log(1/(1 - (2/3) e^{1/30})), declared as 3.51."""
    return -3.0 * math.log1p(-2.0 * math.exp(1.0 / 30.0) / 3.0)


@dataclass
class NonMarkovReport:
    gamma: float
    A_LY: float
    a_cone: float
    N_star: int
    D_R: float
    sup_f: float
    variation_f: float
    card_A0: float
    sigma: float
    M_table: dict
    delta0_nm: float
    Delta0_nm: float
    Delta0_computed: float
    Delta_nm: float
    exp_bound_max: float
    final_constant_nm: float
    n: int
    bound: float
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fields": {
                "gamma": self.gamma, "A_LY": self.A_LY, "a_cone": self.a_cone, "N_star": self.N_star,
                "D_R": self.D_R, "sup_f": self.sup_f, "variation_f": self.variation_f,
                "card_A0": self.card_A0, "sigma": self.sigma, "delta0_nm": self.delta0_nm,
                "Delta0_nm": self.Delta0_nm, "Delta0_computed": self.Delta0_computed,
                "Delta_nm": self.Delta_nm, "exp_bound_max": self.exp_bound_max,
                "final_constant_nm": self.final_constant_nm, "n": self.n, "bound": self.bound,
            },
            "M_n": [{"n": k, "M_n": v} for k, v in sorted(self.M_table.items())],
            "flags": list(self.flags),
            "provenance": self.provenance,
        }


def nonmarkov_certificate(gamma: float, A_LY: float, variation_f: float, sup_f: float, card_A0: float,
                          N_star: int, D_R: float, sigma: float, n: int) -> NonMarkovReport:
    """Constants for piecewise expanding maps with gamma > 2; N* and D_R are trusted inputs."""
    a = lasota_yorke_cone_parameter(gamma, A_LY)
    if N_star < 1:
        raise DomainError("N* must be at least 1")
    if not D_R > 0:
        raise DomainError("D_R must be positive")
    if not sigma > 0:
        raise DegenerateVarianceError("sigma = 0: the observable is a coboundary")
    if min(A_LY, variation_f, sup_f, card_A0) < 0:
        raise DomainError("Lasota-Yorke constant, v(f), |f|_inf and #A0 must be nonnegative")
    if n < 2 * N_star:
        raise DomainError(f"bound only holds for n >= 2 N* = {2 * N_star}, got n = {n}")
    table = {k: M_n(k, gamma, sup_f, variation_f, card_A0) for k in range(N_star, 2 * N_star)}
    if min(table.values()) <= 0:
        raise DomainError("M_n must be positive (is the observable zero?)")
    d0 = 1.0 / (3.0 * (1.0 + math.cosh(D_R / 2.0)) * max(table.values()))
    exp_max = max(k * d0 * sup_f for k in table)
    flags = []
    if exp_max > 1.0 / 30.0 + 1e-15:
        flags.append(f"n delta0 |f|_inf = {exp_max!r} exceeds 1/30")
    D0c = nonmarkov_delta0()
    if D0c > NONMARKOV_DELTA0:
        flags.append(f"computed Delta0 {D0c!r} exceeds 3.51")
    C = NONMARKOV_COEFF * math.cosh(D_R / 4.0) ** 6 * sup_f * table[N_star] ** 2 / sigma ** 3
    rep = NonMarkovReport(
        gamma=gamma, A_LY=A_LY, a_cone=a, N_star=N_star, D_R=D_R, sup_f=sup_f, variation_f=variation_f,
        card_A0=card_A0, sigma=sigma, M_table=table, delta0_nm=d0, Delta0_nm=NONMARKOV_DELTA0,
        Delta0_computed=D0c, Delta_nm=2.0 * D_R + NONMARKOV_DELTA0, exp_bound_max=exp_max,
        final_constant_nm=C, n=n, bound=C / math.sqrt(n), flags=flags,
    )
    p = rep.provenance
    p["a_cone"] = _prov("2 A/(1-2/gamma)", gamma=gamma, A_LY=A_LY)
    p["M_n"] = _prov("5/(1-(2/gamma)^n)(n |f|_inf + (2/gamma)^n (#A0)^n v(f))", gamma=gamma, sup_f=sup_f,
                     variation_f=variation_f, card_A0=card_A0)
    p["delta0_nm"] = _prov("1/(3(1+cosh(D_R/2)) max_{N*<=n<2N*} M_n)", D_R=D_R, N_star=N_star)
    p["Delta0_nm"] = _prov("declared 3.51 >= 3 log(1/(1-(2/3)exp(1/30)))", computed=D0c)
    p["final_constant_nm"] = _prov("9168 cosh^6(D_R/4)|f|_inf M_{N*}^2/sigma^3", D_R=D_R, sup_f=sup_f,
                                   M_Nstar=table[N_star], sigma=sigma)
    p["N_star"] = _prov("trusted input", N_star=N_star)
    p["D_R"] = _prov("trusted input", D_R=D_R)
    if flags:
        raise InconsistencyError("; ".join(flags))
    return rep


# --------------------------------------------------------------------------
# pure-number checks


def golden_constants() -> dict:
    """Numeric facts the constant chain relies on."""
    _, D0 = delta0_threshold(0.0)
    D0nm = nonmarkov_delta0()
    return {
        "Delta0": D0,
        "C_alpha_max": c_alpha(ALPHA_MAX),
        "fourier_factor": 2.0 * math.sqrt(math.pi) * math.exp(2.0 * D0 / 9.0),
        "fourier_factor_nm": 2.0 * math.sqrt(math.pi) * math.exp(2.0 * NONMARKOV_DELTA0 / 9.0),
        "Delta0_nm_computed": D0nm,
        "Delta0_nm": NONMARKOV_DELTA0,
        "headline_chain": 36000.0 / math.pi,
        "headline_coeff": HEADLINE_COEFF,
        "nonmarkov_chain": 28800.0 / math.pi,
        "nonmarkov_coeff": NONMARKOV_COEFF,
        "threshold": 2.0 * math.exp(1.0 / 6.0) / 3.0,
    }
