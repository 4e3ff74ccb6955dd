"""
Fourier-Galerkin representation of divergence-free velocity fields on the torus.

A velocity field on [0, L]^2 is stored through its Fourier coefficients

    u(x) = sum_k  u_k exp(i (2 pi / L) k . x),      k in Z^2, |k_i| <= n/2

on the full n x n lattice in FFT ordering, with the two velocity components
along axis -3.  Coefficient arrays may carry arbitrary leading batch axes,
so an ensemble of independent fields is a single array of shape
``(..., 2, n, n)``.  All norms and pairings are physical (they include the
area factor L^2 from Parseval).

Nonlinear products are formed on the n x n collocation grid and truncated
with the 2/3 rule.  Because fields that live on the dealiased modes multiply
without aliasing onto the retained modes, the discrete trilinear form is
exactly antisymmetric in its last two arguments.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

__all__ = [
    "Grid",
    "SpectralField",
    "NormBundle",
    "new_grid",
    "leray_project",
    "dealias",
    "stokes_apply",
    "bilinear_b",
    "trilinear_form",
    "inner",
    "norm_bundle",
    "to_physical",
    "from_physical",
    "zero_field",
    "single_mode",
    "taylor_green",
    "random_field",
    "save_snapshot",
    "load_snapshot",
]

SNAPSHOT_MAGIC = b"SNS2"


@dataclass(frozen=True, eq=False)
class Grid:
    """Truncated Fourier lattice for the periodic box [0, L]^2.

    Attributes:
        n_modes: modes per dimension; the collocation grid is n x n.
        box_length: side length L of the periodic box.
        dealias_cutoff: largest retained |k_i| after the 2/3 rule.
    """

    n_modes: int
    box_length: float = 2 * np.pi
    dealias_cutoff: int = field(init=False)

    def __post_init__(self):
        n = self.n_modes
        if isinstance(n, bool) or int(n) != n:
            raise ValueError(f"n_modes must be an integer, got {n!r}")
        n = int(n)
        if n < 4 or n % 2:
            raise ValueError(f"n_modes must be an even integer >= 4, got {n}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")
        object.__setattr__(self, "n_modes", n)
        object.__setattr__(self, "box_length", float(self.box_length))
        object.__setattr__(self, "dealias_cutoff", n // 3)

        idx = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
        k1, k2 = np.meshgrid(idx, idx, indexing="ij")
        unit = 2 * np.pi / self.box_length
        ksq_int = k1**2 + k2**2
        eig = unit**2 * ksq_int.astype(float)
        inv_ksq = np.zeros_like(eig)
        inv_ksq[ksq_int > 0] = 1.0 / ksq_int[ksq_int > 0]

        c = n // 3
        mask = (np.abs(k1) <= c) & (np.abs(k2) <= c)
        nyq = (np.abs(k1) == n // 2) | (np.abs(k2) == n // 2)

        h = n // 2 + 1

        cache = {
            "k1": k1,
            "k2": k2,
            "ksq_int": ksq_int,
            "stokes_eig": eig,
            "inv_ksq": inv_ksq,
            "dealias_mask": mask,
            "nyquist_mask": nyq,
            "half": h,
            "half_k1": k1[:, :h] * unit,
            "half_k2": k2[:, :h] * unit,
            "half_inv_ksq": inv_ksq[:, :h],
            "half_drop": ~mask[:, :h],
        }
        object.__setattr__(self, "_cache", cache)

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.n_modes == other.n_modes and self.box_length == other.box_length

    def __hash__(self):
        return hash((self.n_modes, self.box_length))

    @property
    def wavenumber_unit(self) -> float:
        return 2 * np.pi / self.box_length

    @property
    def k1(self) -> np.ndarray:
        return self._cache["k1"]

    @property
    def k2(self) -> np.ndarray:
        return self._cache["k2"]

    @property
    def ksq_int(self) -> np.ndarray:
        """Integer |k|^2 per lattice point."""
        return self._cache["ksq_int"]

    @property
    def stokes_eigenvalues(self) -> np.ndarray:
        """|k|^2 (2 pi / L)^2 per lattice point."""
        return self._cache["stokes_eig"]

    @property
    def dealias_mask(self) -> np.ndarray:
        return self._cache["dealias_mask"]

    @property
    def area(self) -> float:
        return self.box_length**2

    @property
    def physical_points(self):
        """Collocation coordinates (x1, x2), each of shape (n, n)."""
        x = np.arange(self.n_modes) * (self.box_length / self.n_modes)
        return np.meshgrid(x, x, indexing="ij")

    def full_from_half(self, half: np.ndarray) -> np.ndarray:
        """Rebuild the full Hermitian lattice from an ``rfft2`` half spectrum."""
        h = self._cache["half"]
        out = np.empty(half.shape[:-1] + (self.n_modes,), dtype=complex)
        out[..., :h] = half
        # column j >= h is conj of half[(-i) % n, n - j]
        mirrored = np.flip(half[..., 1 : h - 1], axis=(-2, -1))
        np.conjugate(np.roll(mirrored, 1, axis=-2), out=out[..., h:])
        return out


def new_grid(n_modes: int, box_length: float = 2 * np.pi) -> Grid:
    """Create a grid with n_modes per dimension on [0, box_length]^2."""
    return Grid(n_modes, box_length)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Divergence-free, mean-zero velocity field (or batch of fields).

    ``coeffs`` has shape ``(..., 2, n, n)``.  Instances are treated as
    immutable values; every operation returns a new field.
    """

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        n = self.grid.n_modes
        c = np.asarray(self.coeffs, dtype=complex).view()
        if c.shape[-3:] != (2, n, n):
            raise ValueError(f"coeffs must have shape (..., 2, {n}, {n}), got {c.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def batch_shape(self) -> tuple:
        return self.coeffs.shape[:-3]

    def __add__(self, other):
        _check_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _check_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __neg__(self):
        return SpectralField(self.grid, -self.coeffs)

    def __mul__(self, scalar):
        s = np.asarray(scalar)
        if s.ndim:
            s = s[..., None, None, None]
        return SpectralField(self.grid, self.coeffs * s)

    __rmul__ = __mul__

    def member(self, index) -> "SpectralField":
        """Select one member (or a sub-batch) along the leading batch axes."""
        return SpectralField(self.grid, self.coeffs[index])

    def divergence_ratio(self) -> float:
        """max_k |k . u_k| / max_k |u_k| (0 for the zero field)."""
        g = self.grid
        div = g.k1 * self.coeffs[..., 0, :, :] + g.k2 * self.coeffs[..., 1, :, :]
        scale = np.max(np.abs(self.coeffs))
        if scale == 0:
            return 0.0
        return float(np.max(np.abs(div)) / scale)


@dataclass(frozen=True)
class NormBundle:
    """Norms of a field; entries are arrays when the field is batched.

    ``triple`` is the squared norm |grad u|^2 + |Au|^2.
    """

    l2: np.ndarray
    grad_l2: np.ndarray
    v: np.ndarray
    l4: np.ndarray
    stokes_l2: np.ndarray
    x_norm: np.ndarray
    triple: np.ndarray


def _check_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")


def zero_field(grid: Grid, batch_shape: tuple = ()) -> SpectralField:
    n = grid.n_modes
    return SpectralField(grid, np.zeros(tuple(batch_shape) + (2, n, n), dtype=complex))


def leray_project(grid: Grid, raw) -> SpectralField:
    """Project a Hermitian spectral vector field onto divergence-free, mean-zero fields.

    Per mode k != 0 the coefficient is multiplied by I - k k^T / |k|^2.  The
    zero mode and the Nyquist rows/columns (which have no symmetric
    wavevector) are set to zero.
    """
    f = np.asarray(raw, dtype=complex)
    inv = grid._cache["inv_ksq"]
    k1, k2 = grid.k1, grid.k2
    proj = (k1 * f[..., 0, :, :] + k2 * f[..., 1, :, :]) * inv
    out = np.empty(f.shape, dtype=complex)
    out[..., 0, :, :] = f[..., 0, :, :] - k1 * proj
    out[..., 1, :, :] = f[..., 1, :, :] - k2 * proj
    out[..., grid._cache["nyquist_mask"]] = 0
    out[..., 0, 0] = 0
    return SpectralField(grid, out)


def dealias(u: SpectralField) -> SpectralField:
    """Zero every mode with |k_i| > dealias_cutoff."""
    return SpectralField(u.grid, np.where(u.grid.dealias_mask, u.coeffs, 0))


def stokes_apply(u: SpectralField) -> SpectralField:
    """Apply the Stokes operator A = -Laplacian (diagonal in Fourier space)."""
    return SpectralField(u.grid, u.coeffs * u.grid.stokes_eigenvalues)


def to_physical(u: SpectralField) -> np.ndarray:
    """Velocity values on the collocation grid, shape (..., 2, n, n)."""
    g = u.grid
    n = g.n_modes
    return sfft.irfft2(u.coeffs[..., : g._cache["half"]], s=(n, n)) * (n * n)


def _forward(grid: Grid, phys: np.ndarray) -> np.ndarray:
    n = grid.n_modes
    return grid.full_from_half(sfft.rfft2(phys) / (n * n))


def from_physical(grid: Grid, values) -> np.ndarray:
    """Raw Fourier coefficients of real grid values of shape (..., 2, n, n).

    The result is not projected; pass it through :func:`leray_project` to
    obtain a :class:`SpectralField`.
    """
    return _forward(grid, np.asarray(values, dtype=float))


def bilinear_b(u: SpectralField, v: SpectralField) -> SpectralField:
    """Dealiased Leray projection of (u . grad) v.

    For divergence-free u, (u . grad) v = div(v u^T) exactly; the product is
    evaluated in divergence form on the collocation grid, truncated with the
    2/3 rule, and projected.
    """
    _check_grid(u, v)
    up = to_physical(u)
    vp = up if v is u else to_physical(v)
    return SpectralField(u.grid, _advection(u.grid, up, vp))


def _advection(grid: Grid, up: np.ndarray, vp: np.ndarray) -> np.ndarray:
    """Projected, dealiased coefficients of div(v u^T) from grid values of u and v."""
    u1, u2 = up[..., 0, :, :], up[..., 1, :, :]
    if vp is up:
        cross = u1 * u2
        prods = np.stack([u1 * u1, cross, u2 * u2], axis=-3)
    else:
        v1, v2 = vp[..., 0, :, :], vp[..., 1, :, :]
        prods = np.stack([u1 * v1, u2 * v1, u1 * v2, u2 * v2], axis=-3)
    n = grid.n_modes
    hat = sfft.rfft2(prods) / (n * n)
    c = grid._cache
    d1, d2 = 1j * c["half_k1"], 1j * c["half_k2"]
    if vp is up:
        f1 = d1 * hat[..., 0, :, :] + d2 * hat[..., 1, :, :]
        f2 = d1 * hat[..., 1, :, :] + d2 * hat[..., 2, :, :]
    else:
        f1 = d1 * hat[..., 0, :, :] + d2 * hat[..., 1, :, :]
        f2 = d1 * hat[..., 2, :, :] + d2 * hat[..., 3, :, :]
    # Leray projection on the half spectrum; scaled wavenumbers cancel in k k^T / |k|^2
    unit2 = grid.wavenumber_unit**2
    proj = (c["half_k1"] * f1 + c["half_k2"] * f2) * (c["half_inv_ksq"] / unit2)
    out = np.empty(f1.shape[:-2] + (2,) + f1.shape[-2:], dtype=complex)
    out[..., 0, :, :] = f1 - c["half_k1"] * proj
    out[..., 1, :, :] = f2 - c["half_k2"] * proj
    out[..., c["half_drop"]] = 0
    return grid.full_from_half(out)


def inner(u: SpectralField, v: SpectralField) -> np.ndarray:
    """Physical L^2 pairing (u, v) computed by Parseval."""
    _check_grid(u, v)
    s = np.sum((u.coeffs * np.conj(v.coeffs)).real, axis=(-3, -2, -1))
    return s * u.grid.area


def trilinear_form(u: SpectralField, v: SpectralField, w: SpectralField) -> np.ndarray:
    """b(u, v, w) = <B(u, v), w>."""
    _check_grid(u, v, w)
    return inner(bilinear_b(u, v), w)


def _weighted_sq(u: SpectralField, weight) -> np.ndarray:
    a = np.abs(u.coeffs) ** 2
    return np.sum(a * weight, axis=(-3, -2, -1)) * u.grid.area


def norm_bundle(u: SpectralField) -> NormBundle:
    """Compute |u|, |grad u|, ||u||_V, ||u||_L4, |Au| and the triple norm.

    The L4 norm uses collocation quadrature of |u|^4, which is exact for
    band-limited fields up to aliasing of the quartic.
    """
    eig = u.grid.stokes_eigenvalues
    l2_sq = _weighted_sq(u, 1.0)
    grad_sq = _weighted_sq(u, eig)
    stokes_sq = _weighted_sq(u, eig * eig)
    phys = to_physical(u)
    mod_sq = phys[..., 0, :, :] ** 2 + phys[..., 1, :, :] ** 2
    n = u.grid.n_modes
    l4 = (np.sum(mod_sq * mod_sq, axis=(-2, -1)) * u.grid.area / (n * n)) ** 0.25
    return NormBundle(
        l2=np.sqrt(l2_sq),
        grad_l2=np.sqrt(grad_sq),
        v=np.sqrt(l2_sq + grad_sq),
        l4=l4,
        stokes_l2=np.sqrt(stokes_sq),
        x_norm=l4,
        triple=grad_sq + stokes_sq,
    )


def single_mode(grid: Grid, k, amplitude=1.0) -> SpectralField:
    """Real field amplitude * d * cos((2 pi / L) k . x) with d the unit vector orthogonal to k."""
    k1, k2 = int(k[0]), int(k[1])
    norm = np.hypot(k1, k2)
    if norm == 0:
        raise ValueError("the zero mode carries no divergence-free field")
    n = grid.n_modes
    c = np.zeros((2, n, n), dtype=complex)
    d = np.array([-k2, k1]) / norm
    c[:, k1 % n, k2 % n] += 0.5 * amplitude * d
    c[:, (-k1) % n, (-k2) % n] += 0.5 * amplitude * d
    return SpectralField(grid, c)


def taylor_green(grid: Grid, amplitude=1.0) -> SpectralField:
    """Taylor-Green vortex a (sin x1 cos x2, -cos x1 sin x2) in scaled coordinates."""
    x1, x2 = grid.physical_points
    s = grid.wavenumber_unit
    phys = amplitude * np.stack(
        [np.sin(s * x1) * np.cos(s * x2), -np.cos(s * x1) * np.sin(s * x2)]
    )
    return leray_project(grid, from_physical(grid, phys))


def random_field(grid: Grid, rng, decay: float = 2.0, amplitude: float = 1.0,
                 batch_shape: tuple = ()) -> SpectralField:
    """Random smooth dealiased field u = curl(psi) with |psi_k| ~ |k|^(-decay-1).

    Each member is normalised to |u|_{L^2} = amplitude.
    """
    n = grid.n_modes
    noise = rng.standard_normal(tuple(batch_shape) + (n, n))
    psi = _forward(grid, noise)
    ksq = grid.ksq_int.astype(float)
    weight = np.zeros_like(ksq)
    nz = ksq > 0
    weight[nz] = ksq[nz] ** (-(decay + 1.0) / 2)
    psi = psi * np.where(grid.dealias_mask, weight, 0)
    c = np.empty(psi.shape[:-2] + (2, n, n), dtype=complex)
    c[..., 0, :, :] = -1j * grid.k2 * psi
    c[..., 1, :, :] = 1j * grid.k1 * psi
    u = leray_project(grid, c)
    l2 = norm_bundle(u).l2
    scale = np.where(l2 > 0, amplitude / np.where(l2 > 0, l2, 1.0), 0.0)
    return u * scale


def save_snapshot(path, u: SpectralField) -> None:
    """Write a single field: "SNS2", u32 n_modes, f64 L, then (re1, im1, re2, im2) per mode."""
    if u.batch_shape:
        raise ValueError("snapshots hold a single field")
    g = u.grid
    c = u.coeffs
    data = np.stack([c[0].real, c[0].imag, c[1].real, c[1].imag], axis=-1)
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<Id", g.n_modes, g.box_length))
        fh.write(np.ascontiguousarray(data, dtype="<f8").tobytes())


def load_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a field snapshot")
    n, length = struct.unpack_from("<Id", blob, 4)
    grid = Grid(n, length)
    data = np.frombuffer(blob, dtype="<f8", offset=16).astype(np.float64)
    c = data.view(np.complex128).reshape(n, n, 2)
    return SpectralField(grid, np.moveaxis(c, -1, 0).copy())
