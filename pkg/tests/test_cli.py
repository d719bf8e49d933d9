import subprocess
import sys

import pytest

from reno import container
from reno.cli import build_check_stack, dispatch, parse_resolutions
from reno.operators import reno_check


def run(*args):
    return dispatch([str(a) for a in args])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("gen-data", "--K", 6, "--n", 8, "--seed", 7, "--out", d / "data.rno") == 0
    assert run("train", "--data", d / "data.rno", "--model", "sno", "--epochs", 30, "--hidden", "16",
               "--out", d / "sno.ckpt", "--history", d / "loss.csv") == 0
    return d


def test_resolution_grammar():
    assert parse_resolutions("31:61:10") == [31, 41, 51, 61]
    assert parse_resolutions("5,7,9") == [5, 7, 9]


def test_gen_data_and_train_are_byte_identical(workdir, tmp_path):
    assert run("gen-data", "--K", 6, "--n", 8, "--seed", 7, "--out", tmp_path / "again.rno") == 0
    assert (tmp_path / "again.rno").read_bytes() == (workdir / "data.rno").read_bytes()
    assert run("train", "--data", workdir / "data.rno", "--model", "sno", "--epochs", 30, "--hidden", "16",
               "--out", tmp_path / "sno.ckpt", "--history", tmp_path / "loss.csv") == 0
    assert (tmp_path / "sno.ckpt").read_bytes() == (workdir / "sno.ckpt").read_bytes()
    assert (tmp_path / "loss.csv").read_text() == (workdir / "loss.csv").read_text()
    extra = container.read_model_extra(workdir / "sno.ckpt")
    assert extra["train_resolution"] == 13 and extra["final_loss"] < extra["initial_loss"]


def test_eval_writes_csv_and_svg_deterministically(workdir, tmp_path):
    args = ["eval", "--model", workdir / "sno.ckpt", "--data", workdir / "data.rno", "--resolutions", "7:21:2"]
    assert run(*args, "--out", tmp_path / "a.csv") == 0
    assert run(*args, "--out", tmp_path / "b.csv") == 0
    a = (tmp_path / "a.csv").read_text()
    assert a == (tmp_path / "b.csv").read_text()
    assert (tmp_path / "a.svg").read_text() == (tmp_path / "b.svg").read_text()
    assert a.splitlines()[0] == "resolution,error,model,train_resolution"
    rows = [line.split(",") for line in a.splitlines()[1:]]
    assert [int(r[0]) for r in rows] == list(range(7, 22, 2))
    errors = {int(r[0]): float(r[1]) for r in rows}
    assert errors[13] <= 1e-10 and errors[21] <= 1e-6 and errors[7] > 1e-2
    assert (tmp_path / "a.svg").read_text().startswith("<svg")


def test_aliasing_map(workdir, tmp_path):
    assert run("aliasing-map", "--model", workdir / "sno.ckpt", "--data", workdir / "data.rno",
               "--resolution", 25, "--out", tmp_path / "am.csv") == 0
    lines = (tmp_path / "am.csv").read_text().splitlines()
    assert lines[0] == "test_id,residual_norm,input_norm,ratio" and len(lines) == 10
    assert run("aliasing-map", "--model", workdir / "sno.ckpt", "--data", workdir / "data.rno",
               "--resolution", 24, "--out", tmp_path / "x.csv") == 1


def test_spectrum(tmp_path):
    for name in ("a", "b"):
        assert run("spectrum", "--act", "relu", "--K", 20, "--probe", 200, "--out", tmp_path / f"{name}.csv") == 0
    text = (tmp_path / "a.csv").read_text()
    assert text == (tmp_path / "b.csv").read_text()
    assert (tmp_path / "a.svg").read_bytes() == (tmp_path / "b.svg").read_bytes()
    rows = text.splitlines()
    assert rows[0] == "k,input_magnitude,output_magnitude,tail_fraction" and len(rows) == 402
    tail20 = [r for r in rows[1:] if r.startswith("20,")][0].split(",")[3]
    assert float(tail20) > 1e-4


@pytest.mark.parametrize("layers,basis", [("fourier,truncate", "dirichlet"), ("fourier,relu", "dirichlet"),
                                          ("truncate,square", "fourier"), ("relu", "fourier")])
def test_check_table_matches_library(layers, basis, capsys, tmp_path):
    assert run("check", "--layers", layers, "--K", 6, "--basis", basis, "--out", tmp_path / "t.csv") == 0
    printed = capsys.readouterr().out.strip()
    expected = reno_check(*build_check_stack(layers.split(","), 6, basis, 0), tol=1e-8)
    assert printed == expected.table()
    rows = (tmp_path / "t.csv").read_text().splitlines()[1:]
    assert [r.split(",")[-1] for r in rows] == [lv.verdict for lv in expected.layers] + [expected.composed_verdict]


def test_check_verdicts():
    passing = reno_check(*build_check_stack(["fourier", "truncate"], 6, "dirichlet", 0))
    assert passing.passed
    failing = reno_check(*build_check_stack(["fourier", "relu"], 6, "dirichlet", 0))
    assert [lv.verdict for lv in failing.layers] == ["pass", "fail"]


def test_usage_errors(tmp_path, capsys):
    assert run("check", "--bogus") == 1
    assert "usage:" in capsys.readouterr().err
    assert run("check", "--layers", "attention") == 1
    assert run("eval", "--model", tmp_path / "none.ckpt", "--data", tmp_path / "none.rno",
               "--out", tmp_path / "c.csv") == 1
    assert run("gen-data", "--out", tmp_path / "missing" / "d.rno") == 1
    assert run() == 1


def test_wrong_record_type(workdir, tmp_path):
    assert run("eval", "--model", workdir / "data.rno", "--data", workdir / "data.rno",
               "--out", tmp_path / "c.csv") == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(workdir, tmp_path):
    assert run("train", "--data", workdir / "data.rno", "--model", "cnn", "--epochs", 20, "--lr", "1e250",
               "--out", tmp_path / "cnn.ckpt") == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "reno.cli", "check", "--layers", "truncate", "--K", "4"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "pass" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "reno.cli", "--nope"], capture_output=True, text=True)
    assert proc.returncode == 1
