"""
Closed-form rate constants, localization thresholds and predicted exponents.

Every formula here is evaluated exactly as displayed in the convergence
theory for the three schemes.  Constants that the theory leaves unspecified
(additive terms that depend on L_1 and on auxiliary parameters) are exposed
as explicit overrides that default to zero; rate exponents never depend on
them.  The interpolation constant C_bar and the Poincare-type constant
C_tilde are not known in closed form on the discrete torus:
:func:`estimate_gn_constant` gives an empirical lower estimate of the first
and :func:`poincare_constant` the exact spectral value of the second.
"""

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import Grid, norm_bundle, random_field, single_mode

__all__ = [
    "AnalysisParams",
    "RateConstants",
    "c_beta",
    "alpha0",
    "splitting_constants",
    "euler_constants",
    "gn_ratio",
    "estimate_gn_constant",
    "poincare_constant",
    "localization_indicator",
    "constants_table",
    "write_constants_csv",
]


@dataclass(frozen=True)
class AnalysisParams:
    """Inputs of the rate formulas.

    ``eps_bar`` plays the role of both small slack parameters (the one in the
    splitting threshold and the one in the Euler constant C_1(M)).
    ``hoelder_p`` is the conjugate exponent p > 1 used by the additive-noise
    thresholds.
    """

    viscosity: float
    horizon: float
    k0: float
    k1: float = 0.0
    l1: float = 0.0
    q_moment: float = 2.0
    beta: float = 0.5
    eps_bar: float = 0.01
    eta: float = 0.49
    c_bar: float = 1.0
    c_tilde: float = 1.0
    hoelder_p: float = 1.05
    splitting_offset: float = 0.0
    euler_offset: float = 0.0

    def __post_init__(self):
        errors = self.violations()
        if errors:
            raise ValueError("; ".join(errors))

    def violations(self) -> list:
        errs = []
        if not self.viscosity > 0:
            errs.append("viscosity must be > 0")
        if not self.horizon > 0:
            errs.append("horizon must be > 0")
        if self.k0 < 0 or self.k1 < 0 or self.l1 < 0:
            errs.append("k0, k1, l1 must be >= 0")
        if not self.q_moment >= 2:
            errs.append("q_moment must be >= 2")
        if not 0 < self.beta < 1:
            errs.append(f"beta={self.beta} outside (0, 1)")
        if not self.eps_bar > 0:
            errs.append("eps_bar must be > 0")
        if not 0 < self.eta < 0.5:
            errs.append(f"eta={self.eta} outside (0, 1/2)")
        if not self.c_bar > 0 or not self.c_tilde > 0:
            errs.append("c_bar and c_tilde must be > 0")
        if not self.hoelder_p > 1:
            errs.append("hoelder_p must be > 1")
        return errs


@dataclass(frozen=True)
class RateConstants:
    """Constants of one scheme in one noise regime.

    ``rate_form`` says how ``gamma_sup`` enters the error bound:
    ``"power"`` for C (T/N)^gamma, ``"log"`` for C ln(N)^-gamma and
    ``"exp_sqrt_log"`` for C exp(-gamma sqrt(ln N)).  ``threshold_leading``
    is the coefficient c in M(N) ~ c ln N.
    """

    scheme: str
    regime: str
    c_beta: float
    slope_m: float
    offset_m: float
    alpha0: float
    gamma_sup: float
    rate_form: str
    threshold_leading: float
    threshold_m_of_n: Callable

    def c_tilde_m(self, m):
        """Splitting constant C~(M) (only meaningful for the splitting scheme)."""
        return self.slope_m * np.asarray(m, dtype=float) + self.offset_m

    def c1_m(self, m):
        """Euler constant C_1(M) (only meaningful for the Euler schemes)."""
        return self.slope_m * np.asarray(m, dtype=float) + self.offset_m


def c_beta(beta: float, c_bar: float) -> float:
    """C_beta = C_bar^2 3^3 / (4^4 beta^3)."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    return c_bar**2 * 27.0 / (256.0 * beta**3)


def alpha0(viscosity: float, k0: float, c_tilde: float) -> float:
    """Largest exponential-moment parameter nu / (4 K_0 C_tilde)."""
    if not k0 > 0:
        raise ValueError("alpha0 needs K_0 > 0")
    return viscosity / (4.0 * k0 * c_tilde)


def _check_additive(p: AnalysisParams):
    if p.k1 != 0:
        raise ValueError("additive-noise rates require k1 == 0")
    if not p.k0 > 0:
        raise ValueError("additive-noise rates require k0 > 0")


def _loglog(n):
    n = np.asarray(n, dtype=float)
    return np.log(np.log(n))


def splitting_constants(p: AnalysisParams, regime: str = "additive") -> RateConstants:
    """Constants of the splitting scheme.

    C~(M) = 27 C_bar^2 M / (32 beta^3 nu^3) + offset.  With
    C_nu_beta = c_beta(nu * beta, C_bar) and a2 = 2 (1 + eps) C_nu_beta T the
    linear-growth threshold is [ln N - (q-1)/2 ln ln N] / a2; in the additive
    regime M(N) = X^2 where X is the positive root of a2 X^2 + a1 X - ln N with
    a1 = 2 alpha0 / (p C_bar).
    """
    nu, beta, cb = p.viscosity, p.beta, p.c_bar
    slope = 27.0 * cb**2 / (32.0 * beta**3 * nu**3)
    c_nb = c_beta(nu * beta, cb)
    a2 = 2.0 * (1.0 + p.eps_bar) * c_nb * p.horizon
    cbeta = c_beta(beta, cb)
    if regime == "linear_growth":
        q = p.q_moment
        a0 = alpha0(nu, p.k0, p.c_tilde) if p.k0 > 0 else math.nan

        def threshold(n):
            n = np.asarray(n, dtype=float)
            return (np.log(n) - 0.5 * (q - 1) * _loglog(n)) / a2

        return RateConstants("splitting", regime, cbeta, slope, p.splitting_offset, a0,
                             0.5 * (q - 1), "log", 1.0 / a2, threshold)
    if regime != "additive":
        raise ValueError(f"unknown regime {regime!r}")
    _check_additive(p)
    a0 = alpha0(nu, p.k0, p.c_tilde)
    a1 = 2.0 * a0 / (p.hoelder_p * cb)

    def threshold(n):
        ln = np.log(np.asarray(n, dtype=float))
        x = (-a1 + np.sqrt(a1 * a1 + 4.0 * a2 * ln)) / (2.0 * a2)
        return x * x

    gamma = a0 / cb**2 * math.sqrt(512.0 * nu**3 / (27.0 * p.horizon))
    return RateConstants("splitting", regime, cbeta, slope, p.splitting_offset, a0, gamma,
                         "exp_sqrt_log", 1.0 / a2, threshold)


def euler_constants(p: AnalysisParams, regime: str = "additive") -> RateConstants:
    """Constants of the fully implicit Euler scheme.

    C_1(M) = (1 + eps_bar) C_bar^2 M / (2 nu) + offset.  Linear growth:
    M(N) = 2 nu / ((1 + eps_bar) C_bar^2 T) [eta ln N - (2^(q-1) - 1) ln ln N].
    Additive: M(N) = eta ln N / (nu / (4 p K_0 C_tilde) + (1 + eps_bar) C_bar^2 T / (2 nu))
    and the error decays like (T/N)^gamma for every gamma below
    a / (2 (a + C_bar^2 T / (2 nu))), a = alpha0.
    """
    nu, cb, T = p.viscosity, p.c_bar, p.horizon
    slope = (1.0 + p.eps_bar) * cb**2 / (2.0 * nu)
    cbeta = c_beta(p.beta, cb)
    if regime == "linear_growth":
        q = p.q_moment
        lead = 2.0 * nu / ((1.0 + p.eps_bar) * cb**2 * T)
        power = 2.0 ** (q - 1) - 1.0
        a0 = alpha0(nu, p.k0, p.c_tilde) if p.k0 > 0 else math.nan

        def threshold(n):
            n = np.asarray(n, dtype=float)
            return lead * (p.eta * np.log(n) - power * _loglog(n))

        return RateConstants("fully_implicit", regime, cbeta, slope, p.euler_offset, a0,
                             power, "log", lead * p.eta, threshold)
    if regime != "additive":
        raise ValueError(f"unknown regime {regime!r}")
    _check_additive(p)
    a0 = alpha0(nu, p.k0, p.c_tilde)
    denom = nu / (p.hoelder_p * 4.0 * p.k0 * p.c_tilde) + (1.0 + p.eps_bar) * cb**2 * T / (2.0 * nu)

    def threshold(n):
        return p.eta * np.log(np.asarray(n, dtype=float)) / denom

    gamma = 0.5 * a0 / (a0 + cb**2 * T / (2.0 * nu))
    return RateConstants("fully_implicit", regime, cbeta, slope, p.euler_offset, a0, gamma,
                         "power", p.eta / denom, threshold)


def gn_ratio(u) -> np.ndarray:
    """||u||_{L^4}^2 / (|u|_{L^2} |grad u|_{L^2}), the interpolation ratio."""
    nb = norm_bundle(u)
    den = nb.l2 * nb.grad_l2
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, nb.l4**2 / den, 0.0)


def estimate_gn_constant(grid: Grid, n_samples: int, seed: int = 0) -> float:
    """Running maximum of the interpolation ratio over random test fields.

    The sample set is the ladder of single modes k = (j, 0), j = 1..cutoff,
    followed by ``n_samples`` random dealiased fields with spectral decay
    drawn from [0.5, 4].  Sample i depends only on (seed, i), so increasing
    ``n_samples`` can only raise the estimate.  The result is a lower bound
    for any admissible C_bar, not the constant itself.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    best = 0.0
    for j in range(1, grid.dealias_cutoff + 1):
        best = max(best, float(gn_ratio(single_mode(grid, (j, 0)))))
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        decay = rng.uniform(0.5, 4.0)
        best = max(best, float(gn_ratio(random_field(grid, rng, decay=decay))))
    return best


def poincare_constant(grid: Grid) -> float:
    """Smallest C with |u|^2 + |grad u|^2 <= C (|grad u|^2 + |Au|^2) on mean-zero fields.

    Per mode the ratio (1 + mu) / (mu + mu^2) = 1 / mu is largest at the lowest
    Stokes eigenvalue mu = (2 pi / L)^2.
    """
    return (grid.box_length / (2 * np.pi)) ** 2


def localization_indicator(record, m_threshold: float, variant: str = "grad_sup") -> np.ndarray:
    """Indicator of the localization event up to each grid time t_k, k = 0..N.

    ``grad_sup``: max_{1<=j<=k} |grad u(t_j)|^2 <= M (entry 0 is the empty max).
    ``x_norm_sup``: max_{j<=k} ||u(t_j)||_{L^4}^4 <= M.
    Batched records give an array of shape (N + 1, *batch).
    """
    if variant == "grad_sup":
        vals = np.asarray(record.norms["grad_l2"], dtype=float) ** 2
        vals = vals.copy()
        vals[0] = -np.inf
    elif variant == "x_norm_sup":
        vals = np.asarray(record.norms["x_norm"], dtype=float) ** 4
    else:
        raise ValueError(f"unknown localization variant {variant!r}")
    running = np.maximum.accumulate(vals, axis=0)
    return running <= m_threshold


def constants_table(p: AnalysisParams, n_values=(10**3, 10**6)) -> list:
    """Rows (name, value, formula, regime) for every constant that can be evaluated."""
    rows = [("c_beta", c_beta(p.beta, p.c_bar), "c_bar^2*27/(256*beta^3)", "all")]
    regimes = ["linear_growth"]
    if p.k1 == 0 and p.k0 > 0:
        regimes.append("additive")
    for regime in regimes:
        for fn, tag in ((splitting_constants, "splitting"), (euler_constants, "euler")):
            rc = fn(p, regime)
            label = f"{tag}_{regime}"
            if tag == "splitting":
                rows.append(("c_tilde_slope", rc.slope_m, "27*c_bar^2/(32*beta^3*nu^3)", label))
            else:
                rows.append(("c1_slope", rc.slope_m, "(1+eps_bar)*c_bar^2/(2*nu)", label))
            if not math.isnan(rc.alpha0):
                rows.append(("alpha0", rc.alpha0, "nu/(4*k0*c_tilde)", label))
            rows.append(("gamma_sup", rc.gamma_sup, _GAMMA_FORMULA[(tag, regime)], label))
            rows.append(("threshold_leading", rc.threshold_leading, "lim M(N)/ln(N)", label))
            for n in n_values:
                rows.append((f"threshold_M(N={n})", float(rc.threshold_m_of_n(n)), "M(N)", label))
    return rows


_GAMMA_FORMULA = {
    ("splitting", "linear_growth"): "(q-1)/2 [ln(N)^-gamma]",
    ("splitting", "additive"): "alpha0/c_bar^2*sqrt(512*nu^3/(27*T)) [exp(-gamma*sqrt(ln N))]",
    ("euler", "linear_growth"): "2^(q-1)-1 [ln(N)^-gamma]",
    ("euler", "additive"): "a/(2*(a+c_bar^2*T/(2*nu))), a=alpha0 [(T/N)^gamma]",
}


def write_constants_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["name", "value", "formula_ref", "regime"])
        for name, value, formula, regime in rows:
            w.writerow([name, repr(float(value)), formula, regime])
