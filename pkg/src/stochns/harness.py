"""
Monte Carlo strong-error studies.

For every sample a fine Wiener path is drawn once; the reference solution
and every coarse run on the ladder consume exact block sums of that one path,
so all errors compare approximations driven by the same Brownian motion.
Samples are processed in batches (one array operation per batch), batches
may be spread over a process pool, and per-sample results are always reduced
in sample order with exact summation, so a given configuration produces a
bit-identical report regardless of the number of workers.
"""

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .noise import build_noise_model, sample_wiener_path
from .schemes import SCHEME_KINDS, SchemeParams, SolverError, run_trajectory
from .spectral import new_grid, norm_bundle, random_field, taylor_green, zero_field
from .theory import localization_indicator

__all__ = [
    "StudyConfig",
    "ErrorRow",
    "RateFit",
    "ErrorReport",
    "StudyError",
    "strong_error_study",
    "cross_scheme_check",
    "fit_rate",
    "moment_report",
    "MomentReport",
    "initial_field",
]

MAX_EXCLUDED_FRACTION = 0.05


class StudyError(RuntimeError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    ladder: tuple = (8, 16, 32, 64, 128)
    reference_n: int = 2048
    mc_samples: int = 64
    base_seed: int = 0
    scheme_kind: str = "fully_implicit"
    viscosity: float = 1.0
    horizon: float = 0.25
    n_modes: int = 32
    box_length: float = 2 * math.pi
    noise_amplitude: float = 1.0
    noise_exponent: float = 3.0
    noise_kind: str = "additive"
    noise_sigma: float = 1.0
    modulation: str = "sin"
    initial: str = "random_smooth"
    initial_amplitude: float = 1.0
    initial_decay: float = 2.0
    initial_seed: int = 0
    solver_tol: float = 1e-11
    solver_max_iter: int = 200
    inner_substeps: int = 8
    n_fine: Optional[int] = None
    batch_size: int = 16
    workers: int = 1
    # keep norm-only trajectory records of this ladder entry for moment statistics
    record_n: Optional[int] = None

    def violations(self) -> list:
        errs = []
        ladder = tuple(self.ladder)
        if not ladder:
            errs.append("ladder must not be empty")
        for n in ladder:
            if int(n) != n or n < 1:
                errs.append(f"ladder entry {n} is not a positive integer")
            elif self.reference_n % n:
                errs.append(f"ladder entry {n} does not divide reference_n={self.reference_n}")
        if ladder and self.reference_n < 8 * max(ladder) and set(ladder) != {self.reference_n}:
            errs.append(f"reference_n={self.reference_n} must be >= 8 * max(ladder)")
        if self.fine_steps % self.reference_n:
            errs.append(f"n_fine={self.fine_steps} is not a multiple of reference_n")
        if self.mc_samples < 1:
            errs.append("mc_samples must be >= 1")
        if not 0 <= self.base_seed < 2**64:
            errs.append("base_seed must be a 64-bit unsigned integer")
        if self.scheme_kind not in SCHEME_KINDS:
            errs.append(f"unknown scheme_kind {self.scheme_kind!r}")
        if not self.viscosity > 0:
            errs.append("viscosity must be > 0")
        if not self.horizon > 0:
            errs.append("horizon must be > 0")
        if self.n_modes < 4 or self.n_modes % 2:
            errs.append("n_modes must be an even integer >= 4")
        if not self.box_length > 0:
            errs.append("box_length must be > 0")
        if self.noise_amplitude < 0 or self.noise_exponent < 0:
            errs.append("noise amplitude and exponent must be >= 0")
        if self.noise_kind not in ("additive", "scalar_multiplicative"):
            errs.append(f"unknown noise_kind {self.noise_kind!r}")
        if self.modulation not in ("sin", "tanh"):
            errs.append(f"unknown modulation {self.modulation!r}")
        if self.initial not in ("zero", "taylor_green", "random_smooth"):
            errs.append(f"unknown initial condition {self.initial!r}")
        if not self.solver_tol > 0:
            errs.append("solver_tol must be > 0")
        if self.solver_max_iter < 1 or self.inner_substeps < 1:
            errs.append("solver_max_iter and inner_substeps must be >= 1")
        if self.batch_size < 1 or self.workers < 1:
            errs.append("batch_size and workers must be >= 1")
        if self.record_n is not None and self.record_n not in ladder:
            errs.append("record_n must be a ladder entry")
        return errs

    @property
    def fine_steps(self) -> int:
        return self.n_fine if self.n_fine is not None else self.reference_n

    def scheme_params(self, n: int, kind: Optional[str] = None) -> SchemeParams:
        return SchemeParams(self.viscosity, self.horizon, n, self.solver_tol,
                            self.solver_max_iter, self.inner_substeps,
                            kind or self.scheme_kind)

    def sample_seed(self, i: int) -> int:
        return self.base_seed ^ i

    def grid(self):
        return new_grid(self.n_modes, self.box_length)

    def noise_model(self):
        return build_noise_model(self.grid(), self.noise_amplitude, self.noise_exponent,
                                 kind=self.noise_kind, sigma=self.noise_sigma,
                                 modulation=self.modulation)


def initial_field(config: StudyConfig):
    g = config.grid()
    if config.initial == "zero":
        return zero_field(g)
    if config.initial == "taylor_green":
        return taylor_green(g, config.initial_amplitude)
    rng = np.random.default_rng(config.initial_seed)
    return random_field(g, rng, decay=config.initial_decay, amplitude=config.initial_amplitude)


@dataclass(frozen=True)
class ErrorRow:
    scheme: str
    n: int
    dt: float
    samples_used: int
    est_max_l2_sq: float
    se_max: float
    est_v_sum: float
    se_v: float


@dataclass(frozen=True)
class RateFit:
    order: float
    intercept: float
    half_width: float


@dataclass
class ErrorReport:
    """Monte Carlo estimates per ladder entry plus fitted orders.

    ``per_sample[n]`` holds arrays ``(max_l2_sq, v_sum)`` over all samples,
    NaN where the pair was excluded after a solver failure.
    """

    config: StudyConfig
    rows: list
    fits: dict
    per_sample: dict
    excluded: list = field(default_factory=list)
    records: list = field(default_factory=list)

    def row(self, n: int) -> ErrorRow:
        return next(r for r in self.rows if r.n == n)

    def write_errors_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "N", "dt", "mc_samples", "est_max_l2_sq", "se_max",
                        "est_v_sum", "se_v"])
            for r in self.rows:
                w.writerow([r.scheme, r.n, repr(r.dt), r.samples_used, repr(r.est_max_l2_sq),
                            repr(r.se_max), repr(r.est_v_sum), repr(r.se_v)])

    def write_rates_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scheme", "metric", "fitted_order", "half_width"])
            for metric, fit in self.fits.items():
                w.writerow([self.config.scheme_kind, metric, repr(fit.order),
                            repr(fit.half_width)])


def fit_rate(points) -> RateFit:
    """Least-squares line through (ln N, ln value); order = -slope.

    ``half_width`` is the 95% Student-t half-width of the slope.
    """
    pts = [(float(n), float(v)) for n, v in points if v > 0 and n > 0]
    if len(pts) < 3:
        raise ValueError(f"need at least 3 positive points, got {len(pts)}")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    fit = stats.linregress(x, y)
    half = float(stats.t.ppf(0.975, len(pts) - 2) * fit.stderr)
    return RateFit(-float(fit.slope), float(fit.intercept), half)


def _mean_se(values):
    vals = [float(v) for v in values]
    n = len(vals)
    if n == 0:
        return math.nan, math.nan
    mean = math.fsum(vals) / n
    if n == 1:
        return mean, 0.0
    var = math.fsum((v - mean) ** 2 for v in vals) / (n - 1)
    return mean, math.sqrt(var / n)


class _ErrorAccumulator:
    """Streams coarse states against stored reference states."""

    def __init__(self, ref_states, stride, grid, dt):
        self.ref = ref_states
        self.stride = stride
        self.eig = grid.stokes_eigenvalues
        self.area = grid.area
        self.dt = dt
        self.max_l2 = None
        self.v_sum = None

    def __call__(self, k, state):
        if k == 0:
            return
        e = self.ref[k * self.stride] - state.coeffs
        sq = np.abs(e) ** 2
        l2 = np.sum(sq, axis=(-3, -2, -1)) * self.area
        grad = np.sum(sq * self.eig, axis=(-3, -2, -1)) * self.area
        self.max_l2 = l2 if self.max_l2 is None else np.maximum(self.max_l2, l2)
        self.v_sum = self.dt * grad if self.v_sum is None else self.v_sum + self.dt * grad


def _run_members(config, samples, kinds):
    """Run reference plus ladder on one batch of samples.

    Returns ``{(kind, n): (max_l2_sq, v_sum)}`` with arrays over the batch,
    the failure mask per entry, and optional norm-only records.
    """
    grid = config.grid()
    model = config.noise_model()
    u0 = initial_field(config)
    seeds = [config.sample_seed(i) for i in samples]
    path = sample_wiener_path(model, config.horizon, config.fine_steps, seeds)
    ref_n = config.reference_n
    needed = sorted({k * (ref_n // n) for n in config.ladder for k in range(n + 1)})
    ref = run_trajectory(u0, config.scheme_params(ref_n), model, path, keep_states=needed)
    ref_states = {k: s.coeffs for k, s in zip(ref.state_index, ref.states)}
    out, records = {}, []
    for kind, n in kinds:
        acc = _ErrorAccumulator(ref_states, ref_n // n, grid, config.horizon / n)
        rec = run_trajectory(u0, config.scheme_params(n, kind), model, path,
                             keep_states=False, observer=acc)
        if acc.max_l2 is None:
            zeros = np.zeros(len(samples))
            out[(kind, n)] = (zeros, zeros)
        else:
            out[(kind, n)] = (acc.max_l2, acc.v_sum)
        if n == config.record_n and kind == config.scheme_kind:
            records.append(rec)
    return out, records


def _run_batch(args):
    config, samples, kinds = args
    try:
        out, records = _run_members(config, samples, kinds)
        return {key: (v[0], v[1], np.zeros(len(samples), bool)) for key, v in out.items()}, records
    except SolverError:
        pass
    # isolate the failing samples; never resample with a fresh seed
    result = {key: (np.full(len(samples), np.nan), np.full(len(samples), np.nan),
                    np.ones(len(samples), bool)) for key in kinds}
    records = []
    for j, s in enumerate(samples):
        try:
            out, recs = _run_members(config, [s], kinds)
        except SolverError:
            out, recs = {}, []
            for key in kinds:
                try:
                    o, r = _run_members(config, [s], [key])
                    out.update(o)
                    recs.extend(r)
                except SolverError:
                    continue
        records.extend(recs)
        for key, (m, v) in out.items():
            result[key][0][j], result[key][1][j], result[key][2][j] = m[0], v[0], False
    return result, records


def _batched(config):
    idx = list(range(config.mc_samples))
    return [idx[i:i + config.batch_size] for i in range(0, len(idx), config.batch_size)]


def _execute(config, kinds):
    batches = _batched(config)
    jobs = [(config, b, kinds) for b in batches]
    if config.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_batch, jobs))
    else:
        results = [_run_batch(j) for j in jobs]
    merged = {}
    records = []
    for key in kinds:
        merged[key] = tuple(np.concatenate([r[0][key][i] for r in results]) for i in range(3))
    for r in results:
        records.extend(r[1])
    return merged, records


def strong_error_study(config: StudyConfig) -> ErrorReport:
    """Estimate E max_k |u_ref(t_k) - u_N(t_k)|^2 and E (T/N) sum_k |grad e_k|^2 per ladder N."""
    errs = config.violations()
    if errs:
        raise ValueError("; ".join(errs))
    kinds = [(config.scheme_kind, n) for n in config.ladder]
    merged, records = _execute(config, kinds)

    excluded = []
    for (kind, n), (_, _, failed) in merged.items():
        excluded.extend((int(i), n) for i in np.flatnonzero(failed))
    total = config.mc_samples * len(config.ladder)
    if len(excluded) > MAX_EXCLUDED_FRACTION * total:
        raise StudyError(f"{len(excluded)} of {total} (sample, N) pairs failed to converge")

    rows, per_sample = [], {}
    for kind, n in kinds:
        m, v, failed = merged[(kind, n)]
        per_sample[n] = (m, v)
        est_m, se_m = _mean_se(m[~failed])
        est_v, se_v = _mean_se(v[~failed])
        rows.append(ErrorRow(kind, n, config.horizon / n, int(np.sum(~failed)),
                             est_m, se_m, est_v, se_v))
    rows.sort(key=lambda r: r.n)
    for a, b in zip(rows, rows[1:]):
        if b.est_max_l2_sq > a.est_max_l2_sq + 2 * math.hypot(a.se_max, b.se_max):
            warnings.warn(f"error grows from N={a.n} to N={b.n} beyond 2 standard errors",
                          stacklevel=2)
    fits = {}
    for metric, attr in (("max_l2", "est_max_l2_sq"), ("v_sum", "est_v_sum")):
        pts = [(r.n, math.sqrt(getattr(r, attr))) for r in rows if getattr(r, attr) > 0]
        if len(pts) >= 3:
            fits[metric] = fit_rate(pts)
    return ErrorReport(config, rows, fits, per_sample, excluded, records)


@dataclass
class CrossCheck:
    """Per-sample max-grid L^2 distances at one resolution N."""

    n: int
    errors: dict
    difference: np.ndarray

    def consistent(self) -> np.ndarray:
        a, b = self.errors.values()
        return self.difference <= a + b


def cross_scheme_check(config: StudyConfig, schemes=("splitting", "fully_implicit"),
                       n: int = 128) -> CrossCheck:
    """Compare two schemes at resolution n with each other and with the shared reference.

    The reference is ``config.scheme_kind`` at ``config.reference_n`` on the
    same Wiener path as both schemes.
    """
    cfg = StudyConfig(**{**asdict(config), "ladder": (n,), "record_n": None})
    errs = cfg.violations()
    if errs:
        raise ValueError("; ".join(errs))
    model = cfg.noise_model()
    u0 = initial_field(cfg)
    stride = cfg.reference_n // n
    dist = {s: [] for s in schemes}
    diff = []
    for batch in _batched(cfg):
        seeds = [cfg.sample_seed(i) for i in batch]
        path = sample_wiener_path(model, cfg.horizon, cfg.fine_steps, seeds)
        ref = run_trajectory(u0, cfg.scheme_params(cfg.reference_n), model, path,
                             keep_states=range(0, cfg.reference_n + 1, stride))
        runs = {s: run_trajectory(u0, cfg.scheme_params(n, s), model, path) for s in schemes}
        for s, rec in runs.items():
            d = [norm_bundle(rec.states[k] - ref.states[k]).l2 for k in range(n + 1)]
            dist[s].append(np.max(d, axis=0))
        a, b = (runs[s] for s in schemes)
        d = [norm_bundle(a.states[k] - b.states[k]).l2 for k in range(n + 1)]
        diff.append(np.max(d, axis=0))
    return CrossCheck(n, {s: np.concatenate(v) for s, v in dist.items()}, np.concatenate(diff))


@dataclass
class MomentReport:
    """Rows ``(key, statistic, value, stability_flag)``."""

    rows: list

    def value(self, key, statistic) -> float:
        return next(r[2] for r in self.rows if r[0] == key and r[1] == statistic)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p_or_alpha_or_M", "statistic", "value", "stability_flag"])
            for key, stat, value, flag in self.rows:
                w.writerow([key, stat, repr(float(value)), flag])


def _stack_members(records, name):
    cols = []
    for rec in records:
        a = np.asarray(rec.norms[name], dtype=float)
        cols.append(a.reshape(a.shape[0], -1))
    return np.concatenate(cols, axis=1)


def moment_report(records, p_orders=(1, 2), m_ladder=(1.0, 10.0, 100.0, math.inf),
                  alpha_ladder=(0.01,), n_resamples: int = 200, seed: int = 0,
                  stability_tol: float = 0.2) -> MomentReport:
    """Empirical moments, localization probabilities and exponential moments.

    For each alpha the half-sample stability measure is the root-mean-square
    relative deviation of the estimate computed on ``n_resamples`` random
    halves of the ensemble from the full-ensemble estimate; the flag reads
    ``stable`` below ``stability_tol``.
    """
    if not records:
        raise ValueError("moment_report needs at least one record")
    params = records[0].params
    if any(r.params != params for r in records):
        raise ValueError("records must share scheme parameters")
    dt = params.dt
    v = _stack_members(records, "v")
    stokes = _stack_members(records, "stokes_l2")
    members = v.shape[1]
    rows = []
    for p in p_orders:
        max_mom = np.max(v, axis=0) ** (2 * p)
        rows.append((f"p={p}", "max_v_moment", float(np.mean(max_mom)), ""))
        integrand = v[1:] ** (2 * p - 2) * stokes[1:] ** 2
        rows.append((f"p={p}", "stokes_sum_moment", float(np.mean(dt * integrand.sum(axis=0))), ""))
    for m in m_ladder:
        ind = np.concatenate([localization_indicator(r, m).reshape(params.n_steps + 1, -1)
                              for r in records], axis=1)
        prob = float(np.mean(~ind[-1]))
        rows.append((f"M={m}", "loc_complement_prob", prob, ""))
    rng = np.random.default_rng(seed)
    sup_sq = np.max(v, axis=0) ** 2
    half = max(members // 2, 1)
    picks = [rng.choice(members, half, replace=False) for _ in range(n_resamples)]
    for a in alpha_ladder:
        vals = np.exp(a * sup_sq)
        full = float(np.mean(vals))
        if members > 1:
            halves = np.array([np.mean(vals[idx]) for idx in picks])
            change = float(np.sqrt(np.mean((halves / full - 1.0) ** 2)))
        else:
            change = 0.0
        flag = "stable" if np.isfinite(full) and change < stability_tol else "unstable"
        rows.append((f"alpha={a}", "exp_moment", full, flag))
        rows.append((f"alpha={a}", "exp_moment_halfsample_change", change, flag))
    return MomentReport(rows)
