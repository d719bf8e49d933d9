"""Synthetic dataset, training loop and multi-resolution evaluation."""

from __future__ import annotations

import csv
import io
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .frames import AmbientSpace, PeriodicFunction, change_of_frame
from .models import (
    CnnModel,
    ConvLayer,
    FnoLayer,
    FnoModel,
    GridModel,
    MlpParams,
    SnoModel,
    build_model_map_batched,
    encode_coeffs,
    resolution_map,
)
from .operators import AliasingReport, DiscreteMap, discrete_aliasing_map
from .spaces import (
    BandlimitedSpace,
    SampleGrid,
    SampleVector,
    dirichlet_basis,
    samples_to_coeffs,
    synthesis_on_grid,
)

log = logging.getLogger(__name__)

GENERATOR = "numpy.random.Generator(PCG64).normal"
MODEL_KINDS = ("sno", "cnn", "fno")


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


class GridAlignmentError(ValueError):
    """Evaluation resolutions must be odd so that grids stay symmetric."""


def max_threads() -> int:
    raw = os.environ.get("RENO_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            log.warning("ignoring invalid RENO_THREADS=%r", raw)
    return os.cpu_count() or 1


# -- dataset ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    """Input/target pairs in ``P_K`` stored as Fourier coefficients ``k = -K..K``."""

    K: int
    seed: int
    inputs: np.ndarray   # (n, 2K+1) complex
    targets: np.ndarray  # (n, 2K+1) complex
    d: int = 1
    generator: str = GENERATOR

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def train_resolution(self) -> int:
        return 2 * self.K + 1

    @property
    def space(self) -> AmbientSpace:
        return AmbientSpace(self.K)

    @property
    def pairs(self) -> list[tuple[PeriodicFunction, PeriodicFunction]]:
        amb = self.space
        return [(PeriodicFunction(f, amb), PeriodicFunction(g, amb)) for f, g in zip(self.inputs, self.targets)]

    def samples(self, which: str = "inputs", M: int | None = None) -> np.ndarray:
        """Real sample values ``(n, M)`` on ``SampleGrid(M)`` (default: the training grid)."""
        M = self.train_resolution if M is None else M
        c = self.inputs if which == "inputs" else self.targets
        return (c @ synthesis_on_grid(M, self.K).T).real


def gen_dataset(K: int = 30, n: int = 128, seed: int = 0, d: int = 1) -> Dataset:
    """Draw grid values i.i.d. from N(0, 1/3) and convert them to coefficients.

    Each pair draws the input's ``2K+1`` values, then the target's.
    """
    if K < 0 or n < 1:
        raise ValueError(f"need K >= 0 and n >= 1, got K={K}, n={n}")
    if d != 1:
        raise NotImplementedError("only the one-dimensional dataset (d=1) is implemented")
    rng = np.random.default_rng(seed)
    M = 2 * K + 1
    grid = SampleGrid(M)
    amb = AmbientSpace(K)
    std = np.sqrt(1.0 / 3.0)
    inputs, targets = [], []
    for _ in range(n):
        for bucket in (inputs, targets):
            values = rng.normal(0.0, std, M)
            bucket.append(samples_to_coeffs(SampleVector(grid, values), K, amb).coeffs)
    return Dataset(K, seed, np.array(inputs), np.array(targets), d)


# -- models and training -------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128)
    activation: str = "gelu"
    conv_kernel: int = 5
    conv_layers: int = 3
    fno_layers: int = 2
    fno_modes: int | None = None  # None: K (keep every mode)
    grid_activation: str = "relu"

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def init_model(kind: str, K: int, config: TrainConfig = TrainConfig()) -> GridModel:
    """Seeded initial parameters for one of the model families."""
    rng = np.random.default_rng(config.seed)
    if kind == "sno":
        sizes = [2 * K + 1, *config.hidden, 2 * K + 1]
        return SnoModel(K, K, MlpParams.init(sizes, rng, config.activation))
    if kind == "cnn":
        layers = []
        for i in range(config.conv_layers):
            taps = rng.standard_normal(config.conv_kernel) / np.sqrt(config.conv_kernel)
            act = config.grid_activation if i < config.conv_layers - 1 else None
            layers.append(ConvLayer(taps, act))
        return CnnModel(tuple(layers))
    if kind == "fno":
        modes = K if config.fno_modes is None else config.fno_modes
        layers = []
        k_in = K
        for i in range(config.fno_layers):
            last = i == config.fno_layers - 1
            k_out = K if last else modes
            # spectral weights start near 1/2 with small random perturbations
            half = 0.5 + 0.1 * (rng.standard_normal(k_out + 1) + 1j * rng.standard_normal(k_out + 1))
            half[0] = half[0].real
            R = np.concatenate([np.conj(half[:0:-1]), half])
            A = 0.5 * rng.standard_normal()
            act = None if last else config.grid_activation
            layers.append(FnoLayer(k_in, k_out, R, A, None, act))
            k_in = k_out
        return FnoModel(tuple(layers))
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def training_arrays(model: GridModel, dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Network inputs and targets at the training resolution."""
    if isinstance(model, SnoModel):
        return encode_coeffs(dataset.inputs), encode_coeffs(dataset.targets)
    return dataset.samples("inputs"), dataset.samples("targets")


@dataclass
class TrainResult:
    model: GridModel
    loss_history: list[float]

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1]


def train_model(kind_or_model, dataset: Dataset, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Minimise the mean squared error at the training resolution ``2K+1``.

    ``loss_history[0]`` is the initial full-dataset loss and entry ``e`` the
    loss after epoch ``e``.
    """
    model = init_model(kind_or_model, dataset.K, config) if isinstance(kind_or_model, str) else kind_or_model
    M = dataset.train_resolution
    X, Y = training_arrays(model, dataset)
    tape = model.build_tape(M)
    params = tape.params
    opt = Adam(params, config.lr, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng(config.seed + 1)

    def full_loss() -> float:
        return float(ad.forward(tape, {"x": X, "y": Y}))

    history = [full_loss()]
    n = X.shape[0]
    bs = n if config.batch_size is None else min(config.batch_size, n)
    for epoch in range(1, config.epochs + 1):
        order = np.arange(n) if bs == n else rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            loss = float(ad.forward(tape, {"x": X[idx], "y": Y[idx]}))
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, loss)
            opt.step(params, ad.backward(tape))
        loss = full_loss()
        if not np.isfinite(loss):
            raise TrainingDivergedError(epoch, loss)
        history.append(loss)
        if epoch % 500 == 0:
            log.info("%s epoch %d loss %.6g", model.kind, epoch, loss)
    return TrainResult(model.with_params(params), history)


# -- multi-resolution evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class EvalCurve:
    resolutions: list[int]
    errors: list[float]
    model: str
    train_resolution: int
    reports: list[AliasingReport] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if len(self.resolutions) != len(self.errors):
            raise ValueError("resolutions and errors differ in length")
        if list(self.resolutions) != sorted(self.resolutions):
            raise ValueError("resolutions must be sorted ascending")

    def error_at(self, M: int) -> float:
        return self.errors[self.resolutions.index(M)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["resolution", "error", "model", "train_resolution"])
        for M, e in zip(self.resolutions, self.errors):
            w.writerow([M, repr(float(e)), self.model, self.train_resolution])
        return buf.getvalue()


def _batched_report(model: GridModel, C: np.ndarray, M_train: int, M: int, amb: AmbientSpace) -> AliasingReport:
    """Discrete aliasing map of ``model@M`` against ``model@M_train`` on every row of ``C``.

    Same computation as :func:`operators.discrete_aliasing_map` with Dirichlet
    frames, vectorised over the dataset.
    """
    K_train, K_alt = (M_train - 1) // 2, (M - 1) // 2
    psi = dirichlet_basis(BandlimitedSpace(K_train, amb))
    psi_alt = dirichlet_basis(BandlimitedSpace(K_alt, amb))
    m_in = change_of_frame(psi, psi_alt)
    m_out = change_of_frame(psi_alt, psi)
    u = build_model_map_batched(model, M_train)
    u_alt = build_model_map_batched(model, M)
    ref = u(C)
    alt_in = (C @ m_in.T)
    if np.max(np.abs(alt_in.imag), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(alt_in))):
        raise ValueError("change of frame produced complex sample coefficients")
    r = ref - (u_alt(alt_in.real) @ m_out.T)
    rows = [(f"pair[{i}]", float(np.linalg.norm(ri)), float(np.linalg.norm(fi))) for i, (ri, fi) in enumerate(zip(r, ref))]
    return AliasingReport.from_rows(rows)


def eval_multires(model: GridModel, dataset: Dataset, resolutions) -> EvalCurve:
    """Average discrete aliasing error of the model across evaluation resolutions.

    The model trained at ``M_train = 2K+1`` is compared, for each odd ``M``,
    with itself run at ``M`` through the Dirichlet-basis change of frame.
    Inputs are moved to the ``M``-grid by that change of frame, which
    projects them onto ``P_{(M-1)/2}`` when ``M < M_train``.
    """
    res = sorted(int(M) for M in resolutions)
    for M in res:
        if M < 3:
            raise ValueError(f"resolution {M} is below 3")
        if M % 2 == 0:
            raise GridAlignmentError(f"resolution {M} is even; use odd resolutions")
    M_train = dataset.train_resolution
    amb = AmbientSpace(max([dataset.K] + [(M - 1) // 2 for M in res]))
    C = dataset.samples("inputs") / np.sqrt(M_train)
    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        reports = list(pool.map(lambda M: _batched_report(model, C, M_train, M, amb), res))
    return EvalCurve(res, [r.mean_ratio for r in reports], model.kind, M_train, reports)


def aliasing_report_at(model: GridModel, dataset: Dataset, M: int) -> AliasingReport:
    """Per-pair discrete aliasing report between the training resolution and ``M``."""
    if M < 3 or M % 2 == 0:
        raise GridAlignmentError(f"resolution {M} must be odd and at least 3")
    M_train = dataset.train_resolution
    amb = AmbientSpace(max(dataset.K, (M - 1) // 2))
    psi = dirichlet_basis(BandlimitedSpace(dataset.K, amb))
    psi_alt = dirichlet_basis(BandlimitedSpace((M - 1) // 2, amb))
    probes = {f"pair[{i}]": c for i, c in enumerate(dataset.samples("inputs") / np.sqrt(M_train))}
    return discrete_aliasing_map(resolution_map(model, M_train), resolution_map(model, M),
                                 psi, psi, psi_alt, psi_alt, probes)
