"""
Trace-class Q-Wiener noise on the dealiased Fourier lattice.

The noise acts on the retained modes 0 < max|k_i| <= dealias_cutoff.  Each
Hermitian pair {k, -k} is represented once, by its canonical member (k1 > 0,
or k1 == 0 and k2 > 0), and carries an independent complex Brownian motion
with E|W_k(t)|^2 = lambda_k t.  Mode k is mapped onto the divergence-free
direction i k^perp / |k|, which is even under k -> -k after conjugation, so
the physical noise field is real.

Increments are drawn from a Philox counter-based generator whose key is the
seed and whose counter encodes the step, so any step of any path can be
regenerated on its own.  Each increment is rounded to an integer multiple
of a per-mode power of two (2^-28 relative to its standard deviation).  Sums
of such numbers are exact in double precision, which makes coarsening
independent of summation order and therefore bit-reproducible.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .spectral import Grid, SpectralField, norm_bundle

__all__ = [
    "Modulation",
    "NoiseModel",
    "WienerPath",
    "build_noise_model",
    "sample_wiener_path",
    "coarsen_path",
    "apply_g",
    "noise_field",
    "save_path",
    "load_path",
]

PATH_MAGIC = b"SNSW"
_QUANTUM_BITS = 28
_CLIP = 8.0


@dataclass(frozen=True)
class Modulation:
    """Bounded Lipschitz scalar function m used by the multiplicative kind."""

    name: str = "sin"
    value: float = 1.0

    def __post_init__(self):
        if self.name not in ("sin", "tanh", "const"):
            raise ValueError(f"unknown modulation {self.name!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.name == "sin":
            return np.sin(x)
        if self.name == "tanh":
            return np.tanh(x)
        return np.full_like(x, self.value)

    @property
    def bound(self) -> float:
        return abs(self.value) if self.name == "const" else 1.0

    @property
    def lipschitz(self) -> float:
        return 0.0 if self.name == "const" else 1.0


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Covariance spectrum plus diffusion coefficient G.

    ``q_eigenvalues[p]`` is lambda_k for the canonical mode ``modes[p]``; the
    conjugate mode carries the same eigenvalue, so ``trace_q`` counts it twice.
    Hilbert-Schmidt norms are physical (they include the box area), and
    ``k0``, ``k1``, ``l1`` bound G in the V-valued Hilbert-Schmidt norm,
    which dominates the H-valued one.
    """

    grid: Grid
    modes: np.ndarray
    q_eigenvalues: np.ndarray
    kind: str = "additive"
    sigma: float = 1.0
    modulation: Modulation = field(default_factory=Modulation)
    trace_q: float = field(init=False)
    hs_h_sq: float = field(init=False)
    hs_v_sq: float = field(init=False)
    k0: float = field(init=False)
    k1: float = field(init=False)
    l1: float = field(init=False)

    def __post_init__(self):
        if self.kind not in ("additive", "scalar_multiplicative"):
            raise ValueError(f"unknown diffusion kind {self.kind!r}")
        lam = np.asarray(self.q_eigenvalues, dtype=float)
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("covariance eigenvalues must be finite and nonnegative")
        g = self.grid
        n = g.n_modes
        m = np.asarray(self.modes, dtype=np.int64)
        eig = g.stokes_eigenvalues[m[:, 0] % n, m[:, 1] % n]
        trace = float(2 * np.sum(lam))
        hs_h = g.area * trace
        hs_v = g.area * float(2 * np.sum(lam * (1.0 + eig)))
        if self.kind == "additive":
            k0, l1 = hs_v, 0.0
        else:
            k0 = self.sigma**2 * self.modulation.bound**2 * hs_v
            l1 = self.sigma**2 * self.modulation.lipschitz**2 * hs_v
        for name, value in [("q_eigenvalues", lam), ("modes", m), ("trace_q", trace),
                            ("hs_h_sq", hs_h), ("hs_v_sq", hs_v), ("k0", k0),
                            ("k1", 0.0), ("l1", l1)]:
            object.__setattr__(self, name, value)

        # lattice positions of each pair and its conjugate, plus i k^perp / |k|
        norm = np.hypot(m[:, 0], m[:, 1])
        idx = {
            "pos": (m[:, 0] % n, m[:, 1] % n),
            "neg": ((-m[:, 0]) % n, (-m[:, 1]) % n),
            "d1": -1j * m[:, 1] / norm,
            "d2": 1j * m[:, 0] / norm,
        }
        object.__setattr__(self, "_index", idx)

    @property
    def n_pairs(self) -> int:
        return len(self.q_eigenvalues)

    def lattice_eigenvalues(self) -> np.ndarray:
        """lambda_k on the full n x n lattice (zero off the retained modes)."""
        out = np.zeros((self.grid.n_modes,) * 2)
        out[self._index["pos"]] = self.q_eigenvalues
        out[self._index["neg"]] = self.q_eigenvalues
        return out


def canonical_modes(grid: Grid) -> np.ndarray:
    """Canonical representatives of the retained Hermitian mode pairs, lexicographic."""
    c = grid.dealias_cutoff
    r = np.arange(-c, c + 1)
    k1, k2 = np.meshgrid(r, r, indexing="ij")
    keep = (k1 > 0) | ((k1 == 0) & (k2 > 0))
    return np.stack([k1[keep], k2[keep]], axis=1)


def build_noise_model(grid: Grid, amplitude: float = 1.0, exponent: float = 3.0,
                      kind: str = "additive", sigma: float = 1.0,
                      modulation=None, spectrum=None) -> NoiseModel:
    """Noise with lambda_k = amplitude * |k|^(-2 exponent) on the retained modes.

    ``spectrum`` may instead give lambda on the full lattice (FFT ordering);
    only its values on the retained modes are used, and lambda_0 must vanish.
    ``modulation`` is a :class:`Modulation` or one of ``"sin"``, ``"tanh"``.
    """
    if amplitude < 0:
        raise ValueError(f"amplitude must be nonnegative, got {amplitude}")
    if exponent < 0:
        raise ValueError(f"decay exponent must be nonnegative, got {exponent}")
    modes = canonical_modes(grid)
    if spectrum is not None:
        spec = np.asarray(spectrum, dtype=float)
        if spec.shape != (grid.n_modes,) * 2:
            raise ValueError("spectrum must cover the full lattice")
        if spec[0, 0] != 0:
            raise ValueError("spectrum must vanish on the zero mode")
        n = grid.n_modes
        lam = spec[modes[:, 0] % n, modes[:, 1] % n]
    else:
        ksq = (modes**2).sum(axis=1).astype(float)
        lam = amplitude * ksq ** (-exponent)
    if modulation is None:
        modulation = Modulation()
    elif isinstance(modulation, str):
        modulation = Modulation(modulation)
    return NoiseModel(grid, modes, lam, kind=kind, sigma=sigma, modulation=modulation)


@dataclass(frozen=True, eq=False)
class WienerPath:
    """Per-step, per-pair increments of one or several independent paths.

    ``increments`` has shape ``(n_fine, *batch, n_pairs)``; ``seed`` is an
    int for a single path or a tuple of ints, one per batch member.
    """

    seed: object
    n_fine: int
    dt_fine: float
    increments: np.ndarray

    @property
    def horizon(self) -> float:
        return self.n_fine * self.dt_fine

    @property
    def batch_shape(self) -> tuple:
        return self.increments.shape[1:-1]

    def terminal_value(self) -> np.ndarray:
        return coarsen_path(self, self.n_fine).increments[0]


def _quantize(x: np.ndarray, std: np.ndarray) -> np.ndarray:
    quantum = np.zeros_like(std)
    pos = std > 0
    quantum[pos] = np.exp2(np.floor(np.log2(std[pos])) - _QUANTUM_BITS)
    safe = np.where(pos, quantum, 1.0)
    return np.where(pos, np.round(x / safe) * safe, 0.0)


def _step_normals(seed: int, step: int, count: int) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, int(step), 0])
    z = np.random.Generator(bitgen).standard_normal(count)
    return np.clip(z, -_CLIP, _CLIP)


def sample_wiener_path(model: NoiseModel, horizon: float, n_fine: int, seed) -> WienerPath:
    """Draw increments with variance lambda_k * horizon / n_fine per pair and step.

    Passing a sequence of seeds returns a batch with one member per seed;
    member i equals the single path drawn with ``seed[i]``.
    """
    if n_fine < 1:
        raise ValueError("n_fine must be >= 1")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    seeds = tuple(int(s) for s in np.atleast_1d(seed))
    for s in seeds:
        if not 0 <= s < 2**64:
            raise ValueError(f"seed {s} is not a 64-bit unsigned integer")
    dt = horizon / n_fine
    std = np.sqrt(model.q_eigenvalues * dt / 2)
    p = model.n_pairs
    inc = np.zeros((n_fine, len(seeds), p), dtype=complex)
    if np.any(std > 0):
        for b, s in enumerate(seeds):
            for j in range(n_fine):
                z = _step_normals(s, j, 2 * p)
                inc[j, b].real = _quantize(std * z[:p], std)
                inc[j, b].imag = _quantize(std * z[p:], std)
    if np.ndim(seed) == 0:
        return WienerPath(seeds[0], n_fine, dt, inc[:, 0])
    return WienerPath(seeds, n_fine, dt, inc)


def coarsen_path(path: WienerPath, factor: int) -> WienerPath:
    """Sum consecutive blocks of ``factor`` fine increments (ascending order)."""
    factor = int(factor)
    if factor < 1 or path.n_fine % factor:
        raise ValueError(f"factor {factor} does not divide n_fine={path.n_fine}")
    if factor == 1:
        return path
    blocks = path.increments.reshape((path.n_fine // factor, factor) + path.increments.shape[1:])
    acc = blocks[:, 0].copy()
    for i in range(1, factor):
        acc += blocks[:, i]
    return WienerPath(path.seed, path.n_fine // factor, path.dt_fine * factor, acc)


def noise_field(model: NoiseModel, dW) -> SpectralField:
    """Divergence-free field with coefficient dW_k * i k^perp / |k| at each pair."""
    dW = np.asarray(dW, dtype=complex)
    if dW.shape[-1] != model.n_pairs:
        raise ValueError(f"increment has {dW.shape[-1]} modes, model has {model.n_pairs}")
    n = model.grid.n_modes
    ix = model._index
    c = np.zeros(dW.shape[:-1] + (2, n, n), dtype=complex)
    for comp, d in enumerate((ix["d1"], ix["d2"])):
        val = dW * d
        c[(..., comp) + ix["pos"]] = val
        c[(..., comp) + ix["neg"]] = np.conj(val)
    return SpectralField(model.grid, c)


def apply_g(model: NoiseModel, u: SpectralField, dW) -> SpectralField:
    """G(u) dW.

    Additive noise ignores ``u``.  The scalar-multiplicative kind scales the
    additive image by sigma * m(|u|_{L^2}) separately for each batch member.
    """
    if u.grid != model.grid:
        raise ValueError("field and noise model live on different grids")
    base = noise_field(model, dW)
    if model.kind == "additive":
        return base
    scale = model.sigma * model.modulation(norm_bundle(u).l2)
    return base * scale


def save_path(path_file, path: WienerPath) -> None:
    """Write "SNSW", u64 seed, u32 n_fine, f64 dt_fine, then (re, im) per step and pair."""
    if path.batch_shape:
        raise ValueError("only single paths can be dumped")
    with open(path_file, "wb") as fh:
        fh.write(PATH_MAGIC)
        fh.write(struct.pack("<QId", path.seed, path.n_fine, path.dt_fine))
        fh.write(np.ascontiguousarray(path.increments, dtype="<c16").tobytes())


def load_path(path_file, model: NoiseModel) -> WienerPath:
    with open(path_file, "rb") as fh:
        blob = fh.read()
    if blob[:4] != PATH_MAGIC:
        raise ValueError(f"{path_file}: not a Wiener path dump")
    seed, n_fine, dt = struct.unpack_from("<QId", blob, 4)
    inc = np.frombuffer(blob, dtype="<c16", offset=24).astype(np.complex128)
    return WienerPath(seed, n_fine, dt, inc.reshape(n_fine, model.n_pairs))
