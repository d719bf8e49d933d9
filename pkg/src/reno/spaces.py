"""Bandlimited periodic spaces P_K, their bases, and the sample/coefficient bridge.

Grids are ``x_n = 2n/M`` for ``n = -floor(M/2) .. ceil(M/2)-1``.  For odd
``M = 2K+1`` these are exactly the shifts of the Dirichlet basis, and the
length-M DFT of the samples of ``w`` in ``P_K`` is ``M * W_k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .frames import AmbientSpace, DimensionError, Frame, PeriodicFunction


class SubNyquistError(ValueError):
    """Raised when a grid has fewer than 2K+1 nodes for bandwidth K."""


@dataclass(frozen=True)
class BandlimitedSpace:
    K: int
    ambient: AmbientSpace

    def __post_init__(self):
        if self.K < 0:
            raise ValueError(f"K must be non-negative, got {self.K}")
        if self.K > self.ambient.k_max:
            raise DimensionError(f"P_{self.K} does not fit in ambient k_max={self.ambient.k_max}")

    @classmethod
    def of(cls, K: int, k_max: int | None = None) -> "BandlimitedSpace":
        return cls(K, AmbientSpace(K if k_max is None else k_max))

    @property
    def dim(self) -> int:
        return 2 * self.K + 1

    def contains(self, f: PeriodicFunction, atol: float = 1e-12) -> bool:
        if f.space != self.ambient:
            return False
        outside = np.abs(f.space.wavenumbers) > self.K
        return bool(np.all(np.abs(f.coeffs[outside]) <= atol * max(1.0, f.norm())))

    def random_function(self, rng: np.random.Generator, real: bool = True,
                        unit: bool = False) -> PeriodicFunction:
        """Random element with i.i.d. Gaussian coefficients on ``|k| <= K``."""
        half = rng.standard_normal(self.K + 1) + 1j * rng.standard_normal(self.K + 1)
        if real:
            half[0] = half[0].real
            c = np.concatenate([np.conj(half[:0:-1]), half])
        else:
            c = np.concatenate([rng.standard_normal(self.K) + 1j * rng.standard_normal(self.K), half])
        pad = self.ambient.k_max - self.K
        f = PeriodicFunction(np.pad(c, (pad, pad)), self.ambient)
        if unit and f.norm() > 0:
            f = f * (1.0 / f.norm())
        return f


@dataclass(frozen=True, eq=False)
class SampleGrid:
    M: int
    # explicit node override, for non-uniform sensor layouts
    custom_nodes: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"grid needs at least one node, got M={self.M}")
        if self.custom_nodes is not None:
            nodes = np.asarray(self.custom_nodes, dtype=float).reshape(-1)
            if nodes.shape[0] != self.M:
                raise DimensionError(f"expected {self.M} nodes, got {nodes.shape[0]}")
            object.__setattr__(self, "custom_nodes", nodes)

    @classmethod
    def random(cls, M: int, rng: np.random.Generator) -> "SampleGrid":
        return cls(M, np.sort(rng.uniform(-1.0, 1.0, M)))

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-(self.M // 2), -(-self.M // 2))

    @property
    def nodes(self) -> np.ndarray:
        if self.custom_nodes is not None:
            return self.custom_nodes
        return 2.0 * self.indices / self.M

    @property
    def is_uniform(self) -> bool:
        return self.custom_nodes is None

    def __eq__(self, other):
        if not isinstance(other, SampleGrid):
            return NotImplemented
        return self.M == other.M and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash((self.M, self.is_uniform))


@dataclass(frozen=True, eq=False)
class SampleVector:
    grid: SampleGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values)
        if v.ndim != 1 or v.shape[0] != self.grid.M:
            raise DimensionError(f"expected {self.grid.M} samples, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


# -- bases ------------------------------------------------------------------

@lru_cache(maxsize=256)
def fourier_basis(space: BandlimitedSpace) -> Frame:
    """Orthonormal exponentials ``exp(i pi k x)``, ``k = -K..K``."""
    amb = space.ambient
    m = np.zeros((amb.dim, space.dim), dtype=complex)
    for j, k in enumerate(range(-space.K, space.K + 1)):
        m[amb.index(k), j] = 1.0
    return Frame(m, amb, name=f"fourier(K={space.K})")


def sampling_frame(space: BandlimitedSpace, grid: SampleGrid) -> Frame:
    """Dirichlet kernels of order K shifted to the grid nodes, scaled by ``1/sqrt(M)``.

    Analysis against this frame returns ``f(x_n)/sqrt(M)``.  On a uniform grid
    with ``M >= 2K+1`` it is a Parseval frame for ``P_K``; with ``M = 2K+1`` it
    is the Dirichlet orthonormal basis.
    """
    amb = space.ambient
    k = np.arange(-space.K, space.K + 1)
    m = np.zeros((amb.dim, grid.M), dtype=complex)
    m[amb.index(-space.K):amb.index(space.K) + 1, :] = np.exp(-1j * np.pi * np.outer(k, grid.nodes))
    return Frame(m / np.sqrt(grid.M), amb, name=f"sampling(K={space.K}, M={grid.M})")


@lru_cache(maxsize=256)
def dirichlet_basis(space: BandlimitedSpace) -> Frame:
    """Orthonormal basis of shifted Dirichlet kernels ``d(. - 2n/(2K+1)) / sqrt(2K+1)``.

    Elements are ordered like the nodes of ``SampleGrid(2K+1)`` (n = -K..K),
    so ``analysis(dirichlet_basis, w) * sqrt(2K+1)`` is the sample vector of ``w``.
    """
    frame = sampling_frame(space, SampleGrid(space.dim))
    return Frame(frame.synthesis_matrix, frame.space, name=f"dirichlet(K={space.K})")


@lru_cache(maxsize=256)
def real_fourier_basis(space: BandlimitedSpace) -> Frame:
    """Real orthonormal basis ``1, sqrt(2) cos(pi k x), -sqrt(2) sin(pi k x)``.

    Element order matches :func:`pack_isometric`: constant first, then the
    cosine/sine pair for each k = 1..K (the sine sign makes the analysis
    coefficients equal ``pack_isometric`` of the Fourier coefficients).
    """
    amb = space.ambient
    m = np.zeros((amb.dim, space.dim), dtype=complex)
    m[amb.index(0), 0] = 1.0
    r = 1.0 / np.sqrt(2.0)
    for k in range(1, space.K + 1):
        m[amb.index(k), 2 * k - 1] = r
        m[amb.index(-k), 2 * k - 1] = r
        m[amb.index(k), 2 * k] = 1j * r
        m[amb.index(-k), 2 * k] = -1j * r
    return Frame(m, amb, name=f"real_fourier(K={space.K})")


# -- sampling ---------------------------------------------------------------

def _phase_matrix(nodes: np.ndarray, K: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.outer(nodes, np.arange(-K, K + 1)))


def sample(f: PeriodicFunction, grid: SampleGrid, real: bool | None = None) -> SampleVector:
    """Exact point values of ``f`` on ``grid``.

    Values are real when ``f`` is Hermitian-symmetric (or ``real=True``).
    """
    K = f.space.k_max
    values = _phase_matrix(grid.nodes, K) @ f.coeffs
    if real is None:
        real = f.is_real()
    if real:
        values = values.real
    return SampleVector(grid, values)


@lru_cache(maxsize=512)
def dft_matrix(M: int, K: int) -> np.ndarray:
    """Rows k = -K..K of the length-M DFT on the centred grid: ``sum_n s_n exp(-2 pi i k n / M)``."""
    n = SampleGrid(M).indices
    m = np.exp(-2j * np.pi * np.outer(np.arange(-K, K + 1), n) / M)
    m.setflags(write=False)
    return m


@lru_cache(maxsize=512)
def synthesis_on_grid(M: int, K: int) -> np.ndarray:
    """``(M, 2K+1)`` matrix evaluating coefficients ``k = -K..K`` at the nodes of ``SampleGrid(M)``."""
    m = _phase_matrix(SampleGrid(M).nodes, K)
    m.setflags(write=False)
    return m


def dft(s: SampleVector, K: int) -> np.ndarray:
    """Unnormalised DFT bins ``k = -K..K`` of a uniform sample vector."""
    if not s.grid.is_uniform:
        raise ValueError("DFT requires a uniform grid")
    return dft_matrix(s.grid.M, K) @ s.values


def samples_to_coeffs(s: SampleVector, K: int, ambient: AmbientSpace | None = None) -> PeriodicFunction:
    """Fourier coefficients ``W_k = DFT(s)[k] / M`` for ``|k| <= K``.

    Exact inverse of :func:`sample` for functions in ``P_K`` provided the grid
    has at least the Nyquist count ``2K+1`` of nodes.
    """
    M = s.grid.M
    if M < 2 * K + 1:
        raise SubNyquistError(f"{M} samples cannot resolve bandwidth K={K} (need >= {2 * K + 1})")
    amb = ambient or AmbientSpace(K)
    if amb.k_max < K:
        raise DimensionError(f"ambient k_max={amb.k_max} < K={K}")
    W = dft(s, K) / M
    if np.isrealobj(s.values):
        # exact Hermitian symmetry for real data
        W = 0.5 * (W + np.conj(W[::-1]))
    pad = amb.k_max - K
    return PeriodicFunction(np.pad(W, (pad, pad)), amb)


def evaluate(f: PeriodicFunction, x: float) -> complex:
    """``sum_k W_k exp(i pi k x)`` with ``x`` reduced modulo 2."""
    return complex(f(float(x)))


# -- real packings of Hermitian coefficient vectors ---------------------------

def pack_real(c: np.ndarray) -> np.ndarray:
    """``[Re c_0, Re c_1, Im c_1, ..., Re c_K, Im c_K]`` from coefficients ``k = -K..K``.

    Works along the last axis.
    """
    c = np.asarray(c)
    K = (c.shape[-1] - 1) // 2
    pos = c[..., K + 1:]
    out = np.empty(c.shape[:-1] + (2 * K + 1,))
    out[..., 0] = c[..., K].real
    out[..., 1::2] = pos.real
    out[..., 2::2] = pos.imag
    return out


def unpack_real(p: np.ndarray) -> np.ndarray:
    """Inverse of :func:`pack_real`, returning Hermitian-symmetric coefficients."""
    p = np.asarray(p, dtype=float)
    K = (p.shape[-1] - 1) // 2
    pos = p[..., 1::2] + 1j * p[..., 2::2]
    zero = p[..., :1].astype(complex)
    return np.concatenate([np.conj(pos[..., ::-1]), zero, pos], axis=-1)


def pack_isometric(c: np.ndarray) -> np.ndarray:
    """Like :func:`pack_real` but with ``sqrt(2)`` on the k >= 1 entries, so norms are preserved."""
    p = pack_real(c)
    p[..., 1:] *= np.sqrt(2.0)
    return p


def unpack_isometric(p: np.ndarray) -> np.ndarray:
    p = np.array(p, dtype=float)
    p[..., 1:] /= np.sqrt(2.0)
    return unpack_real(p)


@lru_cache(maxsize=512)
def packed_analysis_matrix(M: int, K: int) -> np.ndarray:
    """Real ``(2K+1, M)`` matrix: real samples on ``SampleGrid(M)`` -> ``pack_real`` of ``W_k``."""
    W = dft_matrix(M, K) / M
    m = pack_real(W.T).T
    m.setflags(write=False)
    return m


@lru_cache(maxsize=512)
def packed_synthesis_matrix(M: int, K: int) -> np.ndarray:
    """Real ``(M, 2K+1)`` matrix: ``pack_real`` coefficients -> samples on ``SampleGrid(M)``."""
    eye = np.eye(2 * K + 1)
    m = (synthesis_on_grid(M, K) @ unpack_real(eye).T).real
    m.setflags(write=False)
    return m
