"""Operator-level continuous/discrete equivalence checks.

An operator ``U`` and a discrete map ``u`` are compared through frames
``psi`` (inputs) and ``phi`` (outputs) via the aliasing error operator
``U - T_phi u T_psi^dagger``.  Operator norms of nonlinear maps are not
computable, so norms here are maxima of ``|eps(f)| / |f|`` over a finite
probe set: lower bounds, reported together with every probe.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .frames import (
    DimensionError,
    Frame,
    PeriodicFunction,
    change_of_frame,
    project,
    pseudo_inverse_coeffs,
    synthesis,
)
from .spaces import BandlimitedSpace

PASS_TOL = 1e-8
FAIL_THRESHOLD = 1e-2


class SpanConditionWarning(UserWarning):
    """Frames do not contain the declared domain or range of an operator."""


@dataclass(frozen=True, eq=False)
class ContinuousOperator:
    apply: Callable[[PeriodicFunction], PeriodicFunction]
    domain_span: Frame
    range_span: Frame
    name: str = ""
    linear: bool = False

    def __call__(self, f: PeriodicFunction) -> PeriodicFunction:
        return self.apply(f)

    def then(self, other: "ContinuousOperator") -> "ContinuousOperator":
        """``other o self``."""
        return ContinuousOperator(
            lambda f: other.apply(self.apply(f)),
            self.domain_span,
            other.range_span,
            name=f"{other.name} o {self.name}",
            linear=self.linear and other.linear,
        )


@dataclass(frozen=True, eq=False)
class DiscreteMap:
    in_len: int
    out_len: int
    fn: Callable[[np.ndarray], np.ndarray]
    parameters: np.ndarray = field(default_factory=lambda: np.zeros(0))
    name: str = ""
    notes: tuple[str, ...] = ()

    def __call__(self, c) -> np.ndarray:
        c = np.asarray(c)
        if c.shape != (self.in_len,):
            raise DimensionError(f"{self.name or 'map'} expects {self.in_len} inputs, got shape {c.shape}")
        out = np.asarray(self.fn(c))
        if out.shape != (self.out_len,):
            raise DimensionError(f"{self.name or 'map'} produced shape {out.shape}, expected ({self.out_len},)")
        return out

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, name: str = "") -> "DiscreteMap":
        m = np.asarray(matrix)
        return cls(m.shape[1], m.shape[0], lambda c: m @ c, name=name)

    @classmethod
    def zero(cls, in_len: int, out_len: int) -> "DiscreteMap":
        return cls(in_len, out_len, lambda c: np.zeros(out_len, dtype=complex), name="zero")

    def then(self, other: "DiscreteMap") -> "DiscreteMap":
        """``other o self``."""
        if other.in_len != self.out_len:
            raise DimensionError(f"cannot compose: {self.out_len} outputs into {other.in_len} inputs")
        return DiscreteMap(self.in_len, other.out_len, lambda c: other(self(c)),
                           name=f"{other.name} o {self.name}", notes=self.notes + other.notes)


Factory = Callable[[Frame, Frame], DiscreteMap]


def _contained(frame: Frame, sub: Frame, atol: float) -> bool:
    if frame.space != sub.space:
        return False
    residual = sub.synthesis_matrix - frame.projector @ sub.synthesis_matrix
    scale = max(1.0, float(np.max(np.abs(sub.synthesis_matrix), initial=0.0)))
    return float(np.max(np.abs(residual), initial=0.0)) <= atol * scale


def span_violations(U: ContinuousOperator, psi: Frame, phi: Frame, atol: float = 1e-9) -> list[str]:
    """Which of ``Dom U in span(psi)`` and ``Ran U in span(phi)`` fail."""
    out = []
    if not _contained(psi, U.domain_span, atol):
        out.append(f"domain of {U.name or 'U'} not contained in span({psi.name or 'psi'})")
    if not _contained(phi, U.range_span, atol):
        out.append(f"range of {U.name or 'U'} not contained in span({phi.name or 'phi'})")
    return out


def canonical_discretization(U: ContinuousOperator, psi: Frame, phi: Frame) -> DiscreteMap:
    """``T_phi^dagger o U o T_psi`` as a map on coefficient sequences."""
    if psi.space != U.domain_span.space or phi.space != U.range_span.space:
        raise DimensionError("frames and operator live in different ambient spaces")
    notes = tuple(span_violations(U, psi, phi))
    for note in notes:
        warnings.warn(note, SpanConditionWarning, stacklevel=2)
    return DiscreteMap(
        len(psi),
        len(phi),
        lambda c: pseudo_inverse_coeffs(phi, U(synthesis(psi, c))),
        name=f"canon[{U.name}]",
        notes=notes,
    )


def canonical_factory(U: ContinuousOperator) -> Factory:
    def factory(psi: Frame, phi: Frame) -> DiscreteMap:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", SpanConditionWarning)
            return canonical_discretization(U, psi, phi)
    return factory


def sampling_factory(fn: Callable[[np.ndarray, int, int], np.ndarray], name: str = "",
                     linear: bool = False) -> Factory:
    """Factory for maps that act on grid samples, whatever frame they are handed.

    ``fn(samples, M_in, M_out)`` maps real sample values on ``SampleGrid(M_in)``
    to values on ``SampleGrid(M_out)``.  Frame coefficients are read as
    ``samples / sqrt(M)``, i.e. the frames are taken to be sampling frames with
    ``M = len(frame)`` elements.  This is how grid-based layers are used in
    practice, and why they need not agree across frames.  A ``linear`` map is
    extended to complex coefficients by acting on real and imaginary parts;
    otherwise only the real part is used.
    """
    def factory(psi: Frame, phi: Frame) -> DiscreteMap:
        m_in, m_out = len(psi), len(phi)

        def real_run(x):
            return np.asarray(fn(np.sqrt(m_in) * x, m_in, m_out), dtype=float) / np.sqrt(m_out)

        def run(c):
            c = np.asarray(c)
            if linear and np.iscomplexobj(c) and np.any(c.imag):
                return real_run(c.real) + 1j * real_run(c.imag)
            return real_run(np.real(c)) + 0j

        return DiscreteMap(m_in, m_out, run, name=name)
    return factory


def aliasing_error_apply(U: ContinuousOperator, u: DiscreteMap, psi: Frame, phi: Frame,
                         f: PeriodicFunction) -> PeriodicFunction:
    """``U(f) - T_phi u T_psi^dagger f``."""
    if u.in_len != len(psi) or u.out_len != len(phi):
        raise DimensionError(
            f"map is {u.in_len}->{u.out_len} but frames have {len(psi)} and {len(phi)} elements"
        )
    return U(f) - synthesis(phi, u(pseudo_inverse_coeffs(psi, f)))


@dataclass(frozen=True)
class AliasingReport:
    per_test: list[tuple[str, float, float]]  # (test id, residual norm, input norm)
    norm_estimate: float
    test_count: int

    @staticmethod
    def ratio(residual: float, reference: float) -> float:
        if reference == 0.0:
            return 0.0 if residual == 0.0 else math.inf
        return residual / reference

    @classmethod
    def from_rows(cls, rows: list[tuple[str, float, float]]) -> "AliasingReport":
        ratios = [cls.ratio(r, n) for _, r, n in rows]
        return cls(rows, max(ratios, default=0.0), len(rows))

    @property
    def ratios(self) -> list[float]:
        return [self.ratio(r, n) for _, r, n in self.per_test]

    @property
    def mean_ratio(self) -> float:
        return float(np.mean(self.ratios)) if self.per_test else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["test_id", "residual_norm", "input_norm", "ratio"])
        for (tid, r, n), q in zip(self.per_test, self.ratios):
            w.writerow([tid, repr(r), repr(n), repr(q)])
        w.writerow(["norm_estimate", "", "", repr(self.norm_estimate)])
        return buf.getvalue()


def _named(tests) -> list[tuple[str, object]]:
    if isinstance(tests, Mapping):
        return list(tests.items())
    return [(f"t{i}", t) for i, t in enumerate(tests)]


def aliasing_norm(U: ContinuousOperator, u: DiscreteMap, psi: Frame, phi: Frame,
                  tests) -> AliasingReport:
    """Probe-based lower bound on the aliasing error operator norm."""
    named = _named(tests)
    if not named:
        raise ValueError("aliasing_norm needs at least one test function")
    rows = []
    for tid, f in named:
        n = f.norm()
        if n == 0.0:
            raise ValueError(f"test function {tid!r} is zero")
        rows.append((tid, aliasing_error_apply(U, u, psi, phi, f).norm(), n))
    return AliasingReport.from_rows(rows)


def standard_probes(space: BandlimitedSpace, n_random: int = 32, seed: int = 0,
                    witnesses: Mapping[str, PeriodicFunction] | None = None) -> dict[str, PeriodicFunction]:
    """Basis exponentials, seeded random unit-norm real functions and known witnesses."""
    amb = space.ambient
    probes = {f"exp[{k}]": PeriodicFunction.from_modes(amb, {k: 1.0}) for k in range(-space.K, space.K + 1)}
    rng = np.random.default_rng(seed)
    for i in range(n_random):
        probes[f"random[{i}]"] = space.random_function(rng, real=True, unit=True)
    for name, f in (witnesses or {}).items():
        probes[f"witness[{name}]"] = f
    return probes


def discrete_aliasing_map(u: DiscreteMap, u_alt: DiscreteMap, psi: Frame, phi: Frame,
                          psi_alt: Frame, phi_alt: Frame, probes) -> AliasingReport:
    """``u - T_phi^dagger T_phi' u' T_psi'^dagger T_psi`` evaluated on coefficient probes.

    Ratios are ``|r| / |u(c)|`` with 0/0 counted as 0.
    """
    m_in = change_of_frame(psi, psi_alt)
    m_out = change_of_frame(phi_alt, phi)
    rows = []
    for tid, c in _named(probes):
        c = np.asarray(c)
        if c.shape != (u.in_len,):
            raise DimensionError(f"probe {tid!r} has shape {c.shape}, map expects ({u.in_len},)")
        ref = u(c)
        r = ref - m_out @ u_alt(m_in @ c)
        rows.append((tid, float(np.linalg.norm(r)), float(np.linalg.norm(ref))))
    return AliasingReport.from_rows(rows)


def verdict(norm_estimate: float, tol: float = PASS_TOL, fail_threshold: float = FAIL_THRESHOLD) -> str:
    if norm_estimate <= tol:
        return "pass"
    if norm_estimate > fail_threshold:
        return "fail"
    return "inconclusive"


@dataclass(frozen=True)
class LayerVerdict:
    index: int
    name: str
    report: AliasingReport
    verdict: str
    violations: tuple[str, ...] = ()


@dataclass(frozen=True)
class RenoCheckResult:
    layers: list[LayerVerdict]
    composed: AliasingReport
    composed_verdict: str

    @property
    def all_layers_pass(self) -> bool:
        return all(lv.verdict == "pass" for lv in self.layers)

    @property
    def passed(self) -> bool:
        return self.all_layers_pass and self.composed_verdict == "pass"

    @property
    def consistent(self) -> bool:
        """Layer-wise equivalence must imply equivalence of the composition."""
        return not self.all_layers_pass or self.composed_verdict == "pass"

    def table(self) -> str:
        lines = [f"{'layer':<8}{'operator':<28}{'norm_estimate':>16}  verdict"]
        for lv in self.layers:
            lines.append(f"{lv.index:<8}{lv.name[:27]:<28}{lv.report.norm_estimate:>16.3e}  {lv.verdict}")
            lines.extend(f"{'':8}! {v}" for v in lv.violations)
        lines.append(f"{'stack':<8}{'composition':<28}{self.composed.norm_estimate:>16.3e}  {self.composed_verdict}")
        return "\n".join(lines)


def reno_check(layers: Sequence[tuple[ContinuousOperator, Factory]], frames: Sequence[Frame], tests,
               tol: float = PASS_TOL, fail_threshold: float = FAIL_THRESHOLD) -> RenoCheckResult:
    """Layer-wise and composed aliasing checks of a stack of layers.

    Layer ``l`` is discretised as ``factory_l(frames[l], frames[l+1])``.  Its
    probes are the images of ``tests`` under the preceding continuous layers
    together with the projections of ``tests`` onto its declared domain.
    """
    if len(frames) != len(layers) + 1:
        raise DimensionError(f"{len(layers)} layers need {len(layers) + 1} frames, got {len(frames)}")
    named = _named(tests)
    maps = []
    verdicts = []
    current = named
    for i, (G, factory) in enumerate(layers):
        psi, phi = frames[i], frames[i + 1]
        g = factory(psi, phi)
        if g.in_len != len(psi) or g.out_len != len(phi):
            raise DimensionError(f"layer {i} map is {g.in_len}->{g.out_len}, frames have {len(psi)}, {len(phi)}")
        maps.append(g)
        probes = [(tid, f) for tid, f in current if f.norm() > 0]
        if i > 0:
            for tid, f in named:
                if f.space == G.domain_span.space:
                    pf = project(G.domain_span, f)
                    if pf.norm() > 0:
                        probes.append((f"proj[{tid}]", pf))
        report = aliasing_norm(G, g, psi, phi, dict(probes))
        verdicts.append(LayerVerdict(i, G.name, report, verdict(report.norm_estimate, tol, fail_threshold),
                                     tuple(span_violations(G, psi, phi))))
        current = [(f"{tid}>{i}", G(f)) for tid, f in current]

    G_all = layers[0][0]
    g_all = maps[0]
    for (G, _), g in zip(layers[1:], maps[1:]):
        G_all = G_all.then(G)
        g_all = g_all.then(g)
    composed = aliasing_norm(G_all, g_all, frames[0], frames[-1], dict(named))
    return RenoCheckResult(verdicts, composed, verdict(composed.norm_estimate, tol, fail_threshold))


@dataclass(frozen=True)
class RecipeCheckResult:
    passed: bool
    max_error: float
    violations: tuple[str, ...]


def unique_recipe_identity_check(layer: tuple[ContinuousOperator, Factory], psi: Frame, phi: Frame,
                                 psi_alt: Frame, phi_alt: Frame, tests,
                                 tol: float = 1e-9) -> RecipeCheckResult:
    """Check ``g(psi', phi') = T_phi'^dagger T_phi g(psi, phi) T_psi^dagger T_psi'`` on probes.

    Probes are ``T_psi'^dagger f`` for each test function ``f``.  Span
    condition violations are reported alongside the verdict.
    """
    U, factory = layer
    violations = tuple(span_violations(U, psi, phi) + span_violations(U, psi_alt, phi_alt))
    g = factory(psi, phi)
    g_alt = factory(psi_alt, phi_alt)
    m_in = change_of_frame(psi_alt, psi)
    m_out = change_of_frame(phi, phi_alt)
    worst = 0.0
    for _, f in _named(tests):
        c_alt = pseudo_inverse_coeffs(psi_alt, f)
        lhs = g_alt(c_alt)
        rhs = m_out @ g(m_in @ c_alt)
        err = float(np.linalg.norm(lhs - rhs))
        worst = max(worst, AliasingReport.ratio(err, float(np.linalg.norm(lhs))))
    return RecipeCheckResult(worst <= tol and not violations, worst, violations)
