"""Finite frame algebra over a periodic, bandlimited ambient space.

Functions are 2-periodic trigonometric polynomials stored by their Fourier
coefficients ``W_k`` for ``|k| <= k_max``.  The inner product is

    <f, g> = 1/2 * integral_{-1}^{1} f(x) conj(g(x)) dx

so the exponentials ``exp(i*pi*k*x)`` are orthonormal and inner products
reduce to Euclidean inner products of coefficient vectors.  This is the one
place the normalisation is fixed; every constant elsewhere follows from it
(e.g. the shifted Dirichlet kernels are normalised by ``1/sqrt(2K+1)``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

DEFAULT_SVD_RTOL = 1e-10


class DimensionError(ValueError):
    """Raised when coefficient lengths or ambient spaces do not match."""


class DegenerateFrameError(ValueError):
    """Raised when a frame has no nonzero element."""


@dataclass(frozen=True)
class AmbientSpace:
    k_max: int

    def __post_init__(self):
        if self.k_max < 0:
            raise ValueError(f"k_max must be non-negative, got {self.k_max}")

    @property
    def dim(self) -> int:
        return 2 * self.k_max + 1

    @property
    def wavenumbers(self) -> np.ndarray:
        return np.arange(-self.k_max, self.k_max + 1)

    def index(self, k: int) -> int:
        """Array position of wavenumber ``k``."""
        if abs(k) > self.k_max:
            raise DimensionError(f"wavenumber {k} outside ambient band {self.k_max}")
        return k + self.k_max


@dataclass(frozen=True, eq=False)
class PeriodicFunction:
    """A trigonometric polynomial ``sum_k coeffs[k] exp(i pi k x)``."""

    coeffs: np.ndarray
    space: AmbientSpace

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).reshape(-1)
        if c.shape[0] != self.space.dim:
            raise DimensionError(
                f"expected {self.space.dim} coefficients for k_max={self.space.k_max}, got {c.shape[0]}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def zeros(cls, space: AmbientSpace) -> "PeriodicFunction":
        return cls(np.zeros(space.dim, dtype=complex), space)

    @classmethod
    def from_modes(cls, space: AmbientSpace, modes: dict[int, complex]) -> "PeriodicFunction":
        c = np.zeros(space.dim, dtype=complex)
        for k, v in modes.items():
            c[space.index(k)] += v
        return cls(c, space)

    @property
    def bandwidth(self) -> int:
        """Largest ``|k|`` carrying a nonzero coefficient (0 for the zero function)."""
        nz = np.flatnonzero(np.abs(self.coeffs) > 0)
        if nz.size == 0:
            return 0
        return int(np.max(np.abs(self.space.wavenumbers[nz])))

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def inner(self, other: "PeriodicFunction") -> complex:
        _check_same_space(self.space, other.space)
        return complex(np.vdot(other.coeffs, self.coeffs))

    def is_real(self, rtol: float = 1e-12) -> bool:
        scale = max(self.norm(), 1.0)
        return bool(np.max(np.abs(self.coeffs - np.conj(self.coeffs[::-1])), initial=0.0) <= rtol * scale)

    def embed(self, space: AmbientSpace) -> "PeriodicFunction":
        """Zero-pad (or exactly truncate) into another ambient space."""
        if space.k_max >= self.space.k_max:
            pad = space.k_max - self.space.k_max
            return PeriodicFunction(np.pad(self.coeffs, (pad, pad)), space)
        if self.bandwidth > space.k_max:
            raise DimensionError(
                f"function has bandwidth {self.bandwidth} > target k_max {space.k_max}"
            )
        cut = self.space.k_max - space.k_max
        return PeriodicFunction(self.coeffs[cut:-cut], space)

    def truncate(self, K: int) -> "PeriodicFunction":
        """Zero every coefficient with ``|k| > K`` (stays in the same ambient space)."""
        c = np.where(np.abs(self.space.wavenumbers) <= K, self.coeffs, 0)
        return PeriodicFunction(c, self.space)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        phases = np.exp(1j * np.pi * np.multiply.outer(np.mod(x + 1.0, 2.0) - 1.0, self.space.wavenumbers))
        return phases @ self.coeffs

    def __add__(self, other: "PeriodicFunction") -> "PeriodicFunction":
        _check_same_space(self.space, other.space)
        return PeriodicFunction(self.coeffs + other.coeffs, self.space)

    def __sub__(self, other: "PeriodicFunction") -> "PeriodicFunction":
        _check_same_space(self.space, other.space)
        return PeriodicFunction(self.coeffs - other.coeffs, self.space)

    def __mul__(self, scalar: complex) -> "PeriodicFunction":
        return PeriodicFunction(scalar * self.coeffs, self.space)

    __rmul__ = __mul__

    def __neg__(self) -> "PeriodicFunction":
        return PeriodicFunction(-self.coeffs, self.space)

    def __repr__(self) -> str:
        return f"PeriodicFunction(k_max={self.space.k_max}, bandwidth={self.bandwidth}, norm={self.norm():.6g})"


@dataclass(frozen=True)
class FrameBounds:
    lower: float
    upper: float
    # unit-norm functions in the span attaining the bounds
    lower_witness: PeriodicFunction | None = field(default=None, compare=False, repr=False)
    upper_witness: PeriodicFunction | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (0 < self.lower <= self.upper * (1 + 1e-12)):
            raise ValueError(f"invalid frame bounds ({self.lower}, {self.upper})")


@dataclass(frozen=True, eq=False)
class Frame:
    """A finite frame sequence ``{v_i}`` in an ambient space.

    Columns of ``synthesis_matrix`` are the coefficient vectors of the
    elements, so ``T c = synthesis_matrix @ c`` and ``T* f = synthesis_matrix^H @ f``.
    """

    synthesis_matrix: np.ndarray
    space: AmbientSpace
    svd_rtol: float = DEFAULT_SVD_RTOL
    name: str = ""

    def __post_init__(self):
        m = np.array(self.synthesis_matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != self.space.dim:
            raise DimensionError(
                f"synthesis matrix must have {self.space.dim} rows, got shape {m.shape}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "synthesis_matrix", m)

    @classmethod
    def from_functions(cls, vectors: Sequence[PeriodicFunction], svd_rtol: float = DEFAULT_SVD_RTOL,
                       name: str = "") -> "Frame":
        if not vectors:
            raise DegenerateFrameError("a frame needs at least one element")
        space = vectors[0].space
        for v in vectors:
            _check_same_space(space, v.space)
        return cls(np.column_stack([v.coeffs for v in vectors]), space, svd_rtol, name)

    def __len__(self) -> int:
        return self.synthesis_matrix.shape[1]

    @property
    def vectors(self) -> list[PeriodicFunction]:
        return [PeriodicFunction(col, self.space) for col in self.synthesis_matrix.T]

    @cached_property
    def svd(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Thin SVD ``(U, s, Vh)`` with singular values below ``svd_rtol * s_max`` dropped."""
        u, s, vh = np.linalg.svd(self.synthesis_matrix, full_matrices=False)
        if s.size == 0 or s[0] == 0:
            return u[:, :0], s[:0], vh[:0]
        keep = s > self.svd_rtol * s[0]
        return u[:, keep], s[keep], vh[keep]

    @property
    def rank(self) -> int:
        return len(self.svd[1])

    @cached_property
    def pinv(self) -> np.ndarray:
        """Matrix of ``T^dagger`` extended to the whole ambient space."""
        u, s, vh = self.svd
        return (vh.conj().T / s) @ u.conj().T

    @cached_property
    def projector(self) -> np.ndarray:
        u = self.svd[0]
        return u @ u.conj().T


def _check_same_space(a: AmbientSpace, b: AmbientSpace):
    if a != b:
        raise DimensionError(f"ambient space mismatch: k_max {a.k_max} vs {b.k_max}")


def _coeff_vector(frame: Frame, coeffs) -> np.ndarray:
    c = np.asarray(coeffs, dtype=complex).reshape(-1)
    if c.shape[0] != len(frame):
        raise DimensionError(f"frame has {len(frame)} elements, got {c.shape[0]} coefficients")
    return c


def synthesis(frame: Frame, coeffs) -> PeriodicFunction:
    """``T c = sum_i c_i v_i``."""
    return PeriodicFunction(frame.synthesis_matrix @ _coeff_vector(frame, coeffs), frame.space)


def analysis(frame: Frame, f: PeriodicFunction) -> np.ndarray:
    """``T* f = (<f, v_i>)_i``."""
    _check_same_space(frame.space, f.space)
    return frame.synthesis_matrix.conj().T @ f.coeffs


def frame_operator(frame: Frame) -> np.ndarray:
    """Matrix of ``S = T T*`` on the ambient coefficient space."""
    m = frame.synthesis_matrix
    return m @ m.conj().T


def frame_bounds(frame: Frame) -> FrameBounds:
    """Optimal frame bounds of ``frame`` as a frame for its own span.

    These are the extreme nonzero eigenvalues of ``S``, i.e. squared nonzero
    singular values of the synthesis matrix.  The matching left singular
    vectors are returned as witnesses: they are unit-norm members of the span
    whose analysis energy equals the bound.
    """
    u, s, _ = frame.svd
    if s.size == 0:
        raise DegenerateFrameError("frame has no nonzero element")
    return FrameBounds(
        lower=float(s[-1] ** 2),
        upper=float(s[0] ** 2),
        lower_witness=PeriodicFunction(u[:, -1], frame.space),
        upper_witness=PeriodicFunction(u[:, 0], frame.space),
    )


def pseudo_inverse_coeffs(frame: Frame, f: PeriodicFunction) -> np.ndarray:
    """Minimal-norm ``c`` with ``T c`` equal to the projection of ``f`` onto the span."""
    _check_same_space(frame.space, f.space)
    return frame.pinv @ f.coeffs


def project(frame: Frame, f: PeriodicFunction) -> PeriodicFunction:
    _check_same_space(frame.space, f.space)
    return PeriodicFunction(frame.projector @ f.coeffs, frame.space)


def aliasing_error_fn(frame: Frame, f: PeriodicFunction) -> tuple[PeriodicFunction, float]:
    """Residual ``f - P_V f`` and its norm."""
    residual = f - project(frame, f)
    return residual, residual.norm()


def change_of_frame(source: Frame, target: Frame) -> np.ndarray:
    """Matrix of ``T_target^dagger T_source``.

    Maps coefficients over ``source`` to coefficients over ``target``; exact
    (``T_target M c = T_source c``) whenever span(source) lies in span(target).
    """
    _check_same_space(source.space, target.space)
    return target.pinv @ source.synthesis_matrix
