import json
from pathlib import Path

import pytest

from edof.cli import main
from edof.corpus import write_corpus
from workflow import run_with_threads, tree


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def error_of(err: str) -> dict:
    return json.loads(err.strip().splitlines()[-1])


@pytest.fixture(scope="module")
def workflow_runs(tmp_path_factory):
    return [run_with_threads(tmp_path_factory.mktemp(f"run{i}"), t) for i, t in enumerate(("1", "2", "1"))]


def test_workflow_is_byte_identical(workflow_runs):
    a, b, c = (tree(d) for d in workflow_runs)
    assert a.keys() == b.keys() == c.keys()
    for name in a:
        assert a[name] == b[name], f"{name} differs across thread counts"
        assert a[name] == c[name], f"{name} differs across repeated runs"


def test_manifests_written(workflow_runs):
    root = workflow_runs[0]
    for primary in ("raw/chelsea.pgm", "d.eddc", "solve.png", "n.ednn", "n.edfx", "rec.png", "inf.png",
                    "eval.csv", "cycles.json"):
        man = json.loads((root / (primary + ".manifest.json")).read_text())
        assert {"config", "config_sha256", "versions", "outputs", "seed"} <= set(man)
        assert Path(primary).name in man["outputs"]


def test_reports(workflow_runs):
    root = workflow_runs[0]
    rec = json.loads((root / "rec.json").read_text())
    assert rec["mode"] == "float" and rec["patches"] == 15 * 15 and rec["psnr_db"] > 0
    assert "seconds" not in rec
    assert json.loads((root / "inf.json").read_text())["mode"] == "fixed"
    rows = (root / "eval.csv").read_text().splitlines()
    assert rows[0] == "image,method,psnr_db"
    assert {r.split(",")[1] for r in rows[1:]} == {"blurred_bilinear", "network", "network_fixed"}


def test_reconstruct_stdout_has_timing(workflow_runs, capsys, monkeypatch):
    monkeypatch.chdir(workflow_runs[0])
    code, out, _ = run(capsys, "reconstruct", "--raw", "raw/chelsea.pgm", "--net", "n.ednn", "--out",
                       str(workflow_runs[0] / "again.png"))
    rep = json.loads(out)
    assert code == 0 and {"psnr_db", "seconds", "patches", "mode"} <= set(rep)


def test_cycles_stdout(capsys):
    code, out, _ = run(capsys, "cycles", "--T", "4", "--width", "1920", "--height", "1080", "--stride", "8",
                       "--clock", "125e6")
    rep = json.loads(out)
    assert code == 0 and rep["fps"] == pytest.approx(20.1, abs=0.05) and rep["patches_per_frame"] == 32400


def test_cycles_clock_preset(capsys):
    code, out, _ = run(capsys, "cycles", "--T", "4", "--clock", "100MHz")
    assert code == 0 and json.loads(out)["clock_hz"] == 100e6


class TestErrors:
    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "dict", "inspect", tmp_path / "none.eddc")
        e = error_of(err)
        assert code == 2 and e["error"] == "missing-file" and e["path"].endswith("none.eddc")

    def test_schema(self, capsys, tmp_path):
        bad = tmp_path / "bad.eddc"
        bad.write_bytes(b"EDNN\1\0\0\0")
        code, _, err = run(capsys, "dict", "inspect", bad)
        assert code == 2 and error_of(err)["error"] == "schema"

    def test_usage(self, capsys):
        code, _, err = run(capsys, "cycles")
        assert code == 2 and error_of(err)["error"] == "usage"

    def test_invalid_stride(self, capsys):
        code, _, err = run(capsys, "cycles", "--T", "4", "--stride", "3")
        assert code == 2 and error_of(err)["error"] == "invalid-argument"

    def test_psi_off_grid(self, capsys, tmp_path):
        write_corpus(tmp_path, ["chelsea"], crop=16)
        code, _, err = run(capsys, "simulate", "--input", tmp_path / "chelsea.png", "--psi", "8.5",
                           "--out", tmp_path / "x.pgm")
        assert code == 2 and "grid" in error_of(err)["message"]

    def test_noise_needs_seed(self, capsys, tmp_path):
        write_corpus(tmp_path, ["chelsea"], crop=16)
        code, _, err = run(capsys, "simulate", "--input", tmp_path / "chelsea.png", "--psi", "8",
                           "--noise-sigma", "0.01", "--out", tmp_path / "x.pgm")
        assert code == 2 and "seed" in error_of(err)["message"]

    def test_bad_thread_env(self, capsys, monkeypatch):
        monkeypatch.setenv("EDOF_NUM_THREADS", "many")
        code, _, err = run(capsys, "cycles", "--T", "4")
        assert code == 2 and error_of(err)["error"] == "invalid-argument"

    def test_bad_config_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text('{"colour": 1}')
        code, _, err = run(capsys, "dict", "build", "--config", cfg, "--out", tmp_path / "d.eddc")
        assert code == 2 and error_of(err)["error"] == "schema"


def test_config_flags_change_output(capsys, tmp_path):
    write_corpus(tmp_path, ["chelsea"], crop=16)
    outs = []
    for extra in ([], ["--mask", "off"], ["--optics.kernel_size", "11"]):
        out = tmp_path / f"x{len(outs)}.pgm"
        code, _, err = run(capsys, "simulate", "--input", tmp_path / "chelsea.png", "--psi", "8", "--out", out, *extra)
        assert code == 0, err
        outs.append(out.read_bytes())
    assert len(set(outs)) == 3
