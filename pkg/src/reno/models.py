"""Operator-learning layers on periodic bandlimited data.

Grid models (CNN, FNO) act on real sample vectors; the SNO and DeepONet act
on coefficients.  Every model can be wrapped at an odd resolution ``M`` as a
map between coefficient sequences over ``dirichlet_basis(P_{(M-1)/2})``
(see :func:`resolution_map`), which is what the multi-resolution analysis
compares.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np

from . import autodiff as ad
from .frames import AmbientSpace, DimensionError, Frame, PeriodicFunction, synthesis
from .operators import ContinuousOperator, DiscreteMap
from .spaces import (
    BandlimitedSpace,
    SampleGrid,
    SampleVector,
    SubNyquistError,
    fourier_basis,
    pack_isometric,
    pack_real,
    packed_analysis_matrix,
    packed_synthesis_matrix,
    sample,
    samples_to_coeffs,
    synthesis_on_grid,
    unpack_isometric,
    unpack_real,
)

ActivationKind = Literal["relu", "gelu", "tanh", "identity"]


class NonUniformSensorWarning(UserWarning):
    """Sensor values did not come from the uniform grid the model assumes."""


def activate(kind: ActivationKind | None, values: np.ndarray) -> np.ndarray:
    if kind is None or kind == "identity":
        return values
    if kind == "relu":
        return np.maximum(values, 0.0)
    if kind == "tanh":
        return np.tanh(values)
    if kind == "gelu":
        return ad.gelu(values)
    raise ValueError(f"unknown activation {kind!r}")


# -- CNN --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvLayer:
    taps: np.ndarray
    activation: ActivationKind | None = None

    def __post_init__(self):
        t = np.array(self.taps, dtype=float).reshape(-1)
        if t.size % 2 == 0:
            raise ValueError(f"kernel length must be odd, got {t.size}")
        object.__setattr__(self, "taps", t)

    @property
    def half_width(self) -> int:
        return (self.taps.size - 1) // 2


def _circular_conv(values: np.ndarray, taps: np.ndarray) -> np.ndarray:
    s = (taps.size - 1) // 2
    out = np.zeros_like(values, dtype=float)
    for j, t in enumerate(taps):
        out = out + t * np.roll(values, j - s, axis=-1)
    return out


def conv_apply(layer: ConvLayer, s: SampleVector) -> SampleVector:
    """Periodic convolution ``out[m] = sum_i s[m - i] taps[i]``, then the activation."""
    if layer.taps.size > s.grid.M:
        raise DimensionError(f"kernel of length {layer.taps.size} exceeds grid of {s.grid.M} nodes")
    return SampleVector(s.grid, activate(layer.activation, _circular_conv(np.real(s.values), layer.taps)))


@dataclass(frozen=True, eq=False)
class CnnModel:
    layers: tuple[ConvLayer, ...]
    kind = "cnn"

    def apply_samples(self, values: np.ndarray, M: int | None = None) -> np.ndarray:
        out = np.asarray(values, dtype=float)
        for layer in self.layers:
            if layer.taps.size > out.shape[-1]:
                raise DimensionError(f"kernel of length {layer.taps.size} exceeds grid of {out.shape[-1]} nodes")
            out = activate(layer.activation, _circular_conv(out, layer.taps))
        return out

    def params(self) -> dict[str, np.ndarray]:
        return {f"conv{i}.taps": layer.taps.copy() for i, layer in enumerate(self.layers)}

    def with_params(self, params) -> "CnnModel":
        return CnnModel(tuple(replace(l, taps=params[f"conv{i}.taps"]) for i, l in enumerate(self.layers)))

    def shape_meta(self) -> dict:
        return {"kernel": [l.taps.size for l in self.layers], "activations": [l.activation for l in self.layers]}

    def build_tape(self, M: int) -> ad.Tape:
        tape = ad.Tape()
        h = tape.input("x", M)
        for i, layer in enumerate(self.layers):
            h = tape.conv(h, tape.parameter(f"conv{i}.taps", layer.taps))
            if layer.activation not in (None, "identity"):
                h = tape.activation(h, layer.activation)
        tape.mark_output(tape.mse(h, tape.input("y", M)))
        return tape


# -- FNO --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FnoLayer:
    """Fourier layer ``sigma(A v + b + F^{-1}(R . F v))`` with all terms kept to ``|k| <= K_out``.

    ``R`` and ``bias`` hold coefficients ``k = -K_out..K_out``.
    """

    K_in: int
    K_out: int
    R: np.ndarray
    A: float = 0.0
    bias: np.ndarray | None = None
    activation: ActivationKind | None = None

    def __post_init__(self):
        if self.K_out > self.K_in:
            raise ValueError(f"K_out={self.K_out} exceeds K_in={self.K_in}")
        n = 2 * self.K_out + 1
        R = np.array(self.R, dtype=complex).reshape(-1)
        b = np.zeros(n, dtype=complex) if self.bias is None else self.bias
        if isinstance(b, PeriodicFunction):
            if b.bandwidth > self.K_out:
                raise ValueError("bias must be bandlimited to K_out")
            b = b.embed(AmbientSpace(self.K_out)).coeffs
        b = np.array(b, dtype=complex).reshape(-1)
        if R.size != n or b.size != n:
            raise DimensionError(f"R and bias need {n} coefficients")
        for name, v in (("R", R), ("bias", b)):
            if np.max(np.abs(v - np.conj(v[::-1]))) > 1e-12 * max(1.0, np.max(np.abs(v))):
                raise ValueError(f"{name} must be Hermitian-symmetric")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "bias", b)
        object.__setattr__(self, "A", float(self.A))

    def coefficient_map(self, W: np.ndarray) -> np.ndarray:
        """Pre-activation output coefficients (``|k| <= K_out``) from input ones (``|k| <= K_in``)."""
        cut = self.K_in - self.K_out
        w = W[..., cut:W.shape[-1] - cut] if cut else W
        return self.R * w + self.A * w + self.bias


def fno_layer_samples(layer: FnoLayer, values: np.ndarray, M_out: int, K_eff: int) -> np.ndarray:
    M_in = values.shape[-1]
    k_use = min(K_eff, layer.K_in)
    W = values @ (packed_analysis_matrix(M_in, k_use)).T
    W = unpack_real(W)
    pad = layer.K_in - k_use
    if pad:
        W = np.pad(W, [(0, 0)] * (W.ndim - 1) + [(pad, pad)])
    z = layer.coefficient_map(W)
    k_out = min(layer.K_out, (M_out - 1) // 2)
    cut = layer.K_out - k_out
    if cut:
        z = z[..., cut:-cut]
    out = pack_real(z) @ packed_synthesis_matrix(M_out, k_out).T
    return activate(layer.activation, out)


def fno_apply(layer: FnoLayer, s: SampleVector, M_out: int | None = None) -> SampleVector:
    """One Fourier layer from samples on ``s.grid`` to samples on ``SampleGrid(M_out)``."""
    if s.grid.M < 2 * layer.K_in + 1:
        raise SubNyquistError(f"{s.grid.M} samples cannot carry K_in={layer.K_in}")
    M_out = s.grid.M if M_out is None else M_out
    if M_out < 2 * layer.K_out + 1:
        raise SubNyquistError(f"output grid of {M_out} nodes cannot carry K_out={layer.K_out}")
    return SampleVector(SampleGrid(M_out), fno_layer_samples(layer, np.real(s.values), M_out, layer.K_in))


@dataclass(frozen=True, eq=False)
class FnoModel:
    layers: tuple[FnoLayer, ...]
    kind = "fno"

    @property
    def K_in(self) -> int:
        return self.layers[0].K_in

    def apply_samples(self, values: np.ndarray, M: int | None = None) -> np.ndarray:
        """Run all layers at the input resolution.

        Below the Nyquist count of a layer the samples are read as a function of
        the largest bandwidth the grid carries (higher modes are lost).
        """
        out = np.asarray(values, dtype=float)
        M = out.shape[-1]
        for layer in self.layers:
            out = fno_layer_samples(layer, out, M, (M - 1) // 2)
        return out

    def params(self) -> dict[str, np.ndarray]:
        p = {}
        for i, l in enumerate(self.layers):
            p[f"fno{i}.R"] = pack_real(l.R)
            p[f"fno{i}.A"] = np.array([l.A])
            p[f"fno{i}.bias"] = pack_real(l.bias)
        return p

    def with_params(self, params) -> "FnoModel":
        return FnoModel(tuple(
            replace(l, R=unpack_real(params[f"fno{i}.R"]), A=float(params[f"fno{i}.A"][0]),
                    bias=unpack_real(params[f"fno{i}.bias"]))
            for i, l in enumerate(self.layers)
        ))

    def shape_meta(self) -> dict:
        return {"modes": [[l.K_in, l.K_out] for l in self.layers], "activations": [l.activation for l in self.layers]}

    def build_tape(self, M: int) -> ad.Tape:
        tape = ad.Tape()
        h = tape.input("x", M)
        for i, l in enumerate(self.layers):
            w = tape.linear(h, packed_analysis_matrix(M, l.K_out))
            spectral = tape.cmul_packed(tape.parameter(f"fno{i}.R", pack_real(l.R)), w)
            local = tape.scale_by(tape.parameter(f"fno{i}.A", [l.A]), w)
            z = tape.add_row(tape.add(spectral, local), tape.parameter(f"fno{i}.bias", pack_real(l.bias)))
            h = tape.linear(z, packed_synthesis_matrix(M, l.K_out))
            if l.activation not in (None, "identity"):
                h = tape.activation(h, l.activation)
        tape.mark_output(tape.mse(h, tape.input("y", M)))
        return tape


# -- MLP / SNO ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MlpParams:
    """Feed-forward net ``W_L s(... s(W_1 x - b_1) ...) - b_L`` (no activation on the last layer)."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    activation: ActivationKind = "gelu"

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: weight rows {W.shape[0]} != bias size {b.shape[0]}")
            if i and W.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i}: input size {W.shape[1]} != previous output {self.weights[i - 1].shape[0]}")

    @classmethod
    def init(cls, sizes: Sequence[int], rng: np.random.Generator, activation: ActivationKind = "gelu") -> "MlpParams":
        weights, biases = [], []
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(rng.standard_normal((n_out, n_in)) / np.sqrt(n_in))
            biases.append(np.zeros(n_out))
        return cls(tuple(weights), tuple(biases), activation)

    @classmethod
    def identity(cls, n: int, depth: int = 1) -> "MlpParams":
        return cls(tuple(np.eye(n) for _ in range(depth)), tuple(np.zeros(n) for _ in range(depth)), "identity")

    @property
    def in_size(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_size(self) -> int:
        return self.weights[-1].shape[0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        h = np.asarray(x, dtype=float)
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ W.T - b
            if i < last:
                h = activate(self.activation, h)
        return h

    def params(self, prefix: str = "mlp") -> dict[str, np.ndarray]:
        p = {}
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            p[f"{prefix}{i}.W"] = W.copy()
            p[f"{prefix}{i}.b"] = b.copy()
        return p

    def with_params(self, params, prefix: str = "mlp") -> "MlpParams":
        n = len(self.weights)
        return MlpParams(tuple(np.array(params[f"{prefix}{i}.W"]) for i in range(n)),
                         tuple(np.array(params[f"{prefix}{i}.b"]) for i in range(n)), self.activation)

    def add_to_tape(self, tape: ad.Tape, h: int, prefix: str = "mlp") -> int:
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            h = tape.dense(h, tape.parameter(f"{prefix}{i}.W", W), tape.parameter(f"{prefix}{i}.b", b))
            if i < last and self.activation != "identity":
                h = tape.activation(h, self.activation)
        return h


def encode_coeffs(c: np.ndarray) -> np.ndarray:
    """Real network input for coefficients ``k = -K..K``: ``sqrt(2K+1) * pack_isometric(c)``.

    The scale makes the Euclidean norm equal that of the ``2K+1`` grid samples.
    """
    c = np.asarray(c)
    return np.sqrt(c.shape[-1]) * pack_isometric(c)


def decode_coeffs(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return unpack_isometric(p / np.sqrt(p.shape[-1]))


@dataclass(frozen=True, eq=False)
class SnoModel:
    K_in: int
    K_out: int
    mlp: MlpParams
    kind = "sno"

    def __post_init__(self):
        if self.mlp.in_size != 2 * self.K_in + 1 or self.mlp.out_size != 2 * self.K_out + 1:
            raise DimensionError(
                f"mlp maps {self.mlp.in_size}->{self.mlp.out_size}, need {2 * self.K_in + 1}->{2 * self.K_out + 1}"
            )

    def apply_coeffs(self, c: np.ndarray) -> np.ndarray:
        """Coefficients ``|k| <= K_in`` -> coefficients ``|k| <= K_out`` (batched on leading axes)."""
        return decode_coeffs(self.mlp(encode_coeffs(c)))

    def apply_samples(self, values: np.ndarray, M: int | None = None) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        M = values.shape[-1]
        k_eff = min(self.K_in, (M - 1) // 2)
        W = values @ packed_analysis_matrix(M, k_eff).T
        pad = self.K_in - k_eff
        W = np.pad(unpack_real(W), [(0, 0)] * (W.ndim - 1) + [(pad, pad)])
        out = self.apply_coeffs(W)
        k_out = min(self.K_out, (M - 1) // 2)
        cut = self.K_out - k_out
        if cut:
            out = out[..., cut:-cut]
        return pack_real(out) @ packed_synthesis_matrix(M, k_out).T

    def params(self) -> dict[str, np.ndarray]:
        return self.mlp.params()

    def with_params(self, params) -> "SnoModel":
        return SnoModel(self.K_in, self.K_out, self.mlp.with_params(params))

    def shape_meta(self) -> dict:
        return {"K_in": self.K_in, "K_out": self.K_out,
                "sizes": [self.mlp.in_size] + [W.shape[0] for W in self.mlp.weights],
                "activation": self.mlp.activation}

    def build_tape(self, M: int | None = None) -> ad.Tape:
        tape = ad.Tape()
        h = self.mlp.add_to_tape(tape, tape.input("x", 2 * self.K_in + 1))
        tape.mark_output(tape.mse(h, tape.input("y", 2 * self.K_out + 1)))
        return tape


def sno_apply(model: SnoModel, f: PeriodicFunction) -> PeriodicFunction:
    """``T_{Psi_K'} o N o T*_{Psi_K}`` on a function in ``P_{K_in}``."""
    if f.bandwidth > model.K_in:
        raise DimensionError(f"input has bandwidth {f.bandwidth} > K_in={model.K_in}; project it first")
    c = f.embed(AmbientSpace(model.K_in)).coeffs
    out = model.apply_coeffs(c)
    amb = f.space if f.space.k_max >= model.K_out else AmbientSpace(model.K_out)
    return PeriodicFunction(out, AmbientSpace(model.K_out)).embed(amb)


# -- DeepONet ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DeepOnetModel:
    """Branch net on ``2N+1`` uniform sensor values, trunk frame for the output."""

    trunk: Frame
    branch: MlpParams
    N: int

    def __post_init__(self):
        if self.branch.out_size != len(self.trunk):
            raise DimensionError(f"branch emits {self.branch.out_size} values for {len(self.trunk)} trunk elements")
        if self.branch.in_size != 2 * self.N + 1:
            raise DimensionError(f"branch expects {self.branch.in_size} sensors, need {2 * self.N + 1}")


def deeponet_apply(model: DeepOnetModel, s: SampleVector) -> PeriodicFunction:
    if s.grid.M != 2 * model.N + 1:
        raise DimensionError(f"expected {2 * model.N + 1} sensor values, got {s.grid.M}")
    if not s.grid.is_uniform or not np.allclose(s.grid.nodes, SampleGrid(s.grid.M).nodes):
        warnings.warn("sensors are not on the uniform grid; output may carry aliasing errors",
                      NonUniformSensorWarning, stacklevel=2)
    return synthesis(model.trunk, model.branch(np.real(s.values)))


# -- activation spectra and continuous operators ---------------------------------------

@dataclass(frozen=True)
class ActivationSpectrum:
    wavenumbers: np.ndarray
    magnitudes: np.ndarray
    # tail_fraction[K] = energy with |k| > K divided by total, K = 0..K_probe
    tail_fraction: np.ndarray
    coeffs: np.ndarray = field(repr=False, default=None)


def apply_pointwise(f: PeriodicFunction, act: ActivationKind, K: int) -> PeriodicFunction:
    """Coefficients ``|k| <= K`` of ``act(f)`` from ``4K+1`` fine-grid samples."""
    grid = SampleGrid(4 * K + 1)
    s = sample(f, grid, real=True)
    return samples_to_coeffs(SampleVector(grid, activate(act, s.values)), K)


def activation_spectrum(f: PeriodicFunction, act: ActivationKind, K_probe: int) -> ActivationSpectrum:
    if K_probe < f.bandwidth:
        raise ValueError(f"K_probe={K_probe} is below the input bandwidth {f.bandwidth}")
    g = apply_pointwise(f, act, K_probe)
    c = g.coeffs
    k = g.space.wavenumbers
    energy = np.abs(c) ** 2
    total = energy.sum()
    tails = np.array([energy[np.abs(k) > K].sum() for K in range(K_probe + 1)])
    frac = tails / total if total > 0 else np.zeros_like(tails)
    return ActivationSpectrum(k, np.abs(c), frac, c)


def square_operator(K: int, ambient: AmbientSpace) -> ContinuousOperator:
    """``f -> |f|^2`` from ``P_K`` into ``P_2K``, computed by exact coefficient convolution."""
    if ambient.k_max < 2 * K:
        raise DimensionError(f"ambient k_max={ambient.k_max} cannot hold P_{2 * K}")

    def apply(f: PeriodicFunction) -> PeriodicFunction:
        if f.space != ambient:
            raise DimensionError("input lives in a different ambient space")
        b = f.bandwidth
        if 2 * b > ambient.k_max:
            raise DimensionError(f"|f|^2 has bandwidth {2 * b} > ambient {ambient.k_max}")
        c = f.coeffs[ambient.index(-b):ambient.index(b) + 1]
        sq = np.convolve(c, np.conj(c[::-1]))
        pad = ambient.k_max - 2 * b
        return PeriodicFunction(np.pad(sq, (pad, pad)), ambient)

    return ContinuousOperator(apply, fourier_basis(BandlimitedSpace(K, ambient)),
                              fourier_basis(BandlimitedSpace(2 * K, ambient)), name=f"square(K={K})")


def pointwise_operator(act: ActivationKind, K: int, ambient: AmbientSpace) -> ContinuousOperator:
    """``f -> act(f)`` on ``P_K``, kept to the ambient band (ambient truncation)."""
    def apply(f: PeriodicFunction) -> PeriodicFunction:
        return apply_pointwise(f, act, ambient.k_max).embed(ambient)

    return ContinuousOperator(apply, fourier_basis(BandlimitedSpace(K, ambient)),
                              fourier_basis(BandlimitedSpace(ambient.k_max, ambient)), name=f"{act}(K={K})")


def fourier_layer_operator(layer: FnoLayer, ambient: AmbientSpace) -> ContinuousOperator:
    """The continuous Fourier layer ``P_K_in -> P_K_out`` (activation included if set)."""
    if ambient.k_max < layer.K_in:
        raise DimensionError("ambient space too small for the layer input")

    def linear_part(f: PeriodicFunction) -> PeriodicFunction:
        W = f.coeffs[ambient.index(-layer.K_in):ambient.index(layer.K_in) + 1]
        return PeriodicFunction(layer.coefficient_map(W), AmbientSpace(layer.K_out)).embed(ambient)

    op = ContinuousOperator(linear_part, fourier_basis(BandlimitedSpace(layer.K_in, ambient)),
                            fourier_basis(BandlimitedSpace(layer.K_out, ambient)),
                            name=f"fourier_layer({layer.K_in}->{layer.K_out})",
                            linear=not np.any(layer.bias))
    if layer.activation in (None, "identity"):
        return op
    return op.then(pointwise_operator(layer.activation, layer.K_out, ambient))


# -- resolution wrapping -------------------------------------------------------------

GridModel = CnnModel | FnoModel | SnoModel


def resolution_map(model: GridModel, M: int) -> DiscreteMap:
    """The model run at ``M`` nodes, on coefficients over ``dirichlet_basis(P_{(M-1)/2})``.

    Coefficients are ``samples / sqrt(M)``.
    """
    if M < 1:
        raise ValueError("resolution must be positive")
    scale = np.sqrt(M)

    def run(c):
        return model.apply_samples(scale * np.real(c), M) / scale + 0j

    return DiscreteMap(M, M, run, name=f"{model.kind}@{M}")


def build_model_map_batched(model: GridModel, M: int):
    """Batched variant of :func:`resolution_map` on real coefficient arrays ``(B, M)``."""
    scale = np.sqrt(M)
    return lambda C: model.apply_samples(scale * C, M) / scale
