"""Command-line entry point.

Subcommands: gen-data, train, eval, aliasing-map, spectrum, check.
Exit status is 0 on success, 1 on validation errors (bad flags, bad
files), 2 on numerical failures (divergence, non-finite values).
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import container
from .frames import AmbientSpace, project
from .models import (
    FnoLayer,
    fno_layer_samples,
    activate,
    activation_spectrum,
    fourier_layer_operator,
    pointwise_operator,
    square_operator,
)
from .operators import (
    ContinuousOperator,
    RenoCheckResult,
    canonical_factory,
    reno_check,
    sampling_factory,
    standard_probes,
)
from .spaces import BandlimitedSpace, dirichlet_basis, fourier_basis
from .svg import line_chart
from .train import (
    MODEL_KINDS,
    TrainConfig,
    TrainingDivergedError,
    aliasing_report_at,
    eval_multires,
    gen_dataset,
    train_model,
)

log = logging.getLogger("reno")


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def parse_resolutions(text: str) -> list[int]:
    """``start:stop:step`` (inclusive stop) or a comma-separated list."""
    try:
        if ":" in text:
            parts = [int(p) for p in text.split(":")]
            if len(parts) == 2:
                parts.append(2)
            start, stop, step = parts
            if step <= 0:
                raise ValueError
            return list(range(start, stop + 1, step))
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid resolution spec {text!r}") from None


def _int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _out_path(path: str) -> Path:
    p = Path(path).resolve()
    if not p.parent.is_dir():
        raise UsageError(f"output directory {p.parent} does not exist")
    return p


# -- subcommands -----------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = _out_path(args.out)
    ds = gen_dataset(args.K, args.n, args.seed, args.d)
    container.save_dataset(out, ds)
    print(f"wrote {ds.n} pairs in P_{ds.K} (seed {ds.seed}) to {out}")
    return 0


def cmd_train(args) -> int:
    out = _out_path(args.out)
    ds = container.load_dataset(args.data)
    config = TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed, hidden=args.hidden,
                         activation=args.activation, batch_size=args.batch_size)
    try:
        result = train_model(args.model, ds, config)
    except TrainingDivergedError as exc:
        raise NumericalError(str(exc)) from exc
    container.save_model(out, result.model, {"train_resolution": ds.train_resolution,
                                             "final_loss": result.final_loss,
                                             "initial_loss": result.loss_history[0],
                                             "epochs": args.epochs, "seed": args.seed})
    if args.history:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for e, loss in enumerate(result.loss_history):
            w.writerow([e, repr(loss)])
        _out_path(args.history).write_text(buf.getvalue())
    print(f"{args.model}: initial loss {result.loss_history[0]!r}, final loss {result.final_loss!r}")
    return 0


def cmd_eval(args) -> int:
    out = _out_path(args.out)
    ds = container.load_dataset(args.data)
    curves = []
    for path in args.model:
        model = container.load_model(path)
        curve = eval_multires(model, ds, args.resolutions)
        if not all(np.isfinite(curve.errors)):
            raise NumericalError(f"non-finite errors for {path}")
        curves.append(curve)
    text = curves[0].to_csv()
    for c in curves[1:]:
        text += "".join(c.to_csv().splitlines(keepends=True)[1:])
    out.write_text(text)
    svg = Path(args.svg) if args.svg else out.with_suffix(".svg")
    series = {c.model: (c.resolutions, c.errors) for c in curves}
    svg.write_text(line_chart(series, "Discrete aliasing error vs resolution", "resolution M",
                              "mean relative error", logy=True))
    for c in curves:
        print(f"{c.model}: " + ", ".join(f"{M}:{e:.2e}" for M, e in zip(c.resolutions, c.errors)))
    return 0


def cmd_aliasing_map(args) -> int:
    out = _out_path(args.out)
    ds = container.load_dataset(args.data)
    model = container.load_model(args.model)
    report = aliasing_report_at(model, ds, args.resolution)
    out.write_text(report.to_csv())
    print(f"{model.kind} at M={args.resolution}: norm estimate {report.norm_estimate:.3e}, "
          f"mean {report.mean_ratio:.3e} over {report.test_count} pairs")
    return 0


def cmd_spectrum(args) -> int:
    out = _out_path(args.out)
    space = BandlimitedSpace.of(args.K)
    f = space.random_function(np.random.default_rng(args.seed), real=True, unit=True)
    spec = activation_spectrum(f, args.act, args.probe)
    base = activation_spectrum(f, "identity", args.probe)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "input_magnitude", "output_magnitude", "tail_fraction"])
    for k, a, b in zip(spec.wavenumbers, base.magnitudes, spec.magnitudes):
        tail = repr(float(spec.tail_fraction[k])) if k >= 0 else ""
        w.writerow([int(k), repr(float(a)), repr(float(b)), tail])
    out.write_text(buf.getvalue())
    pos = spec.wavenumbers >= 0
    ks = [int(k) for k in spec.wavenumbers[pos]]
    out.with_suffix(".svg").write_text(line_chart(
        {"f": (ks, list(base.magnitudes[pos])), f"{args.act}(f)": (ks, list(spec.magnitudes[pos]))},
        f"Spectrum of {args.act}(f), f in P_{args.K}", "wavenumber k", "|coefficient|", logy=True))
    print(f"{args.act}: tail energy fraction above K={args.K}: {spec.tail_fraction[args.K]:.3e}")
    return 0


CHECK_LAYERS = ("fourier", "truncate", "relu", "square")


def build_check_stack(names: list[str], K: int, basis: str = "dirichlet", seed: int = 0):
    """Layers, frames and probes for the ``check`` subcommand.

    ``fourier`` is a Fourier layer ``R . F`` on ``P_K`` (random Hermitian
    ``R``), ``truncate`` halves the bandwidth, ``relu`` applies ReLU pointwise
    and keeps ``P_K`` as range frame, ``square`` maps ``P_K`` to ``P_2K``.
    With the Dirichlet basis, the Fourier and ReLU layers are discretised as
    they run on grid samples; everything else uses the canonical discretisation.
    """
    bands = [K]
    for name in names:
        if name not in CHECK_LAYERS:
            raise UsageError(f"unknown layer {name!r}; choose from {', '.join(CHECK_LAYERS)}")
        k = bands[-1]
        bands.append({"truncate": k // 2, "square": 2 * k}.get(name, k))
    amb = AmbientSpace(max(max(bands), 2 * K) if "relu" not in names else 4 * max(bands))
    make_basis = dirichlet_basis if basis == "dirichlet" else fourier_basis
    frames = [make_basis(BandlimitedSpace(k, amb)) for k in bands]
    rng = np.random.default_rng(seed)
    layers: list[tuple[ContinuousOperator, object]] = []
    for name, k_in, k_out in zip(names, bands[:-1], bands[1:]):
        if name == "fourier":
            half = rng.standard_normal(k_in + 1) + 1j * rng.standard_normal(k_in + 1)
            half[0] = half[0].real
            layer = FnoLayer(k_in, k_in, np.concatenate([np.conj(half[:0:-1]), half]))
            U = fourier_layer_operator(layer, amb)
            if basis == "dirichlet":
                def fn(v, m_in, m_out, layer=layer):
                    return fno_layer_samples(layer, v, m_out, (m_in - 1) // 2)
                layers.append((U, sampling_factory(fn, "fourier-layer", linear=True)))
            else:
                layers.append((U, canonical_factory(U)))
        elif name == "relu":
            U = pointwise_operator("relu", k_in, amb)
            factory = sampling_factory(lambda v, m_in, m_out: activate("relu", v), "relu") \
                if basis == "dirichlet" else canonical_factory(U)
            layers.append((U, factory))
        elif name == "truncate":
            src = fourier_basis(BandlimitedSpace(k_in, amb))
            dst = fourier_basis(BandlimitedSpace(k_out, amb))
            U = ContinuousOperator(lambda f, dst=dst: project(dst, f), src, dst, name=f"truncate({k_in}->{k_out})",
                                   linear=True)
            layers.append((U, canonical_factory(U)))
        else:
            U = square_operator(k_in, amb)
            layers.append((U, canonical_factory(U)))
    probes = standard_probes(BandlimitedSpace(K, amb), n_random=32, seed=seed)
    return layers, frames, probes


def cmd_check(args) -> int:
    names = [n.strip() for n in args.layers.split(",") if n.strip()]
    if not names:
        raise UsageError("--layers needs at least one layer")
    layers, frames, probes = build_check_stack(names, args.K, args.basis, args.seed)
    result: RenoCheckResult = reno_check(layers, frames, probes, tol=args.tol)
    print(result.table())
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "operator", "norm_estimate", "verdict"])
        for lv in result.layers:
            w.writerow([lv.index, lv.name, repr(lv.report.norm_estimate), lv.verdict])
        w.writerow(["stack", "composition", repr(result.composed.norm_estimate), result.composed_verdict])
        _out_path(args.out).write_text(buf.getvalue())
    return 0


# -- parser ------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reno", description="Frame-theoretic representation-equivalence toolkit.")
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate the synthetic operator dataset")
    g.add_argument("--K", type=int, default=30)
    g.add_argument("--n", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--d", type=int, default=1, choices=[1])
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model at the dataset's native resolution")
    t.add_argument("--data", required=True)
    t.add_argument("--model", choices=MODEL_KINDS, default="sno")
    t.add_argument("--epochs", type=int, default=2000)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--hidden", type=_int_tuple, default=(128, 128))
    t.add_argument("--activation", choices=["relu", "gelu", "tanh"], default="gelu")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--history", help="optional CSV of the loss history")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="multi-resolution discrete aliasing curve")
    e.add_argument("--model", required=True, action="append", help="checkpoint (repeatable)")
    e.add_argument("--data", required=True)
    e.add_argument("--resolutions", type=parse_resolutions, default=parse_resolutions("31:201:10"))
    e.add_argument("--out", required=True)
    e.add_argument("--svg", help="SVG path (default: --out with .svg suffix)")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("aliasing-map", help="per-pair discrete aliasing report at one resolution")
    a.add_argument("--model", required=True)
    a.add_argument("--data", required=True)
    a.add_argument("--resolution", type=int, required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_aliasing_map)

    s = sub.add_parser("spectrum", help="spectrum of an activation applied to a random P_K function")
    s.add_argument("--act", choices=["relu", "gelu", "tanh", "identity"], default="relu")
    s.add_argument("--K", type=int, default=20)
    s.add_argument("--probe", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    c = sub.add_parser("check", help="layer-wise representation-equivalence check")
    c.add_argument("--layers", default="fourier,truncate",
                   help=f"comma-separated layers from: {', '.join(CHECK_LAYERS)}")
    c.add_argument("--K", type=int, default=8)
    c.add_argument("--basis", choices=["dirichlet", "fourier"], default="dirichlet")
    c.add_argument("--tol", type=float, default=1e-8)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="optional CSV of the verdict table")
    c.set_defaults(func=cmd_check)
    return p


def dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, container.ContainerError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
