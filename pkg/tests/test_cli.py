import json
import shutil
import subprocess
import sys

import pandas as pd
import pytest

from synthgen.cli import main


def _cfg(path, body):
    path.write_text(json.dumps(dict(body, version=1)))
    return str(path)


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    p = lambda name: str(d / name)  # noqa: E731
    sim = _cfg(d / "sim.json", {"n": 400})
    vae = _cfg(d / "vae.json", {"epochs": 3})
    steps = [
        ["simulate", "--config", sim, "--seed", "2", "--out", p("data.csv"), "--schema-out", p("schema.json")],
        ["fit-pretransform", "--data", p("data.csv"), "--schema", p("schema.json"), "--out", p("pipe.json")],
        ["train", "--data", p("data.csv"), "--schema", p("schema.json"), "--pipeline", p("pipe.json"),
         "--config", vae, "--seed", "1", "--out", p("model.bin"), "--plot", p("curve.png")],
        ["propensity", "--data", p("data.csv"), "--schema", p("schema.json"), "--ridge", "0.5", "--out", p("ps.json")],
        ["latent-map", "--model", p("model.bin"), "--data", p("data.csv"), "--ps", p("ps.json"),
         "--delta", "0.3", "--out", p("heat.csv"), "--plot", p("heat.png")],
        ["generate", "--model", p("model.bin"), "--n", "300", "--seed", "4", "--weights", p("heat.csv"),
         "--out", p("synth_w.csv")],
        ["generate", "--model", p("model.bin"), "--n", "300", "--seed", "4", "--out", p("synth.csv")],
        ["evaluate", "--original", p("data.csv"), "--synthetic", p("synth.csv"), "--schema", p("schema.json"),
         "--n-perm", "2", "--seed", "0", "--out", p("report.json")],
    ]
    codes = [main(s) for s in steps]
    return d, codes


def test_chain_succeeds(chain):
    d, codes = chain
    assert codes == [0] * len(codes)
    for name in ["data.csv", "schema.json", "pipe.json", "model.bin", "curve.png", "ps.json", "heat.csv",
                 "heat.png", "synth_w.csv", "synth.csv", "report.json", "report.marginals.csv",
                 "report.marginals.png"]:
        assert (d / name).exists(), name
        assert (d / f"{name}.manifest.json").exists(), name


def test_outputs_content(chain):
    d, _ = chain
    data = pd.read_csv(d / "data.csv")
    assert len(data) == 400 and data.columns[-1] == "y"
    synth = pd.read_csv(d / "synth_w.csv")
    assert len(synth) == 300 and "E" not in synth.columns
    report = json.loads((d / "report.json").read_text())
    assert report["utility"]["n_perm"] == 2
    manifest = json.loads((d / "synth.csv.manifest.json").read_text())
    assert manifest["command"][:2] == ["synthgen", "generate"]
    assert str(d / "model.bin") in manifest["inputs"]


def test_generate_is_seeded(chain, tmp_path):
    d, _ = chain
    out = tmp_path / "again.csv"
    assert main(["generate", "--model", str(d / "model.bin"), "--n", "300", "--seed", "4", "--out", str(out)]) == 0
    assert out.read_bytes() == (d / "synth.csv").read_bytes()


def test_evaluate_without_plots(chain, tmp_path):
    d, _ = chain
    out = tmp_path / "r.json"
    code = main(["evaluate", "--original", str(d / "data.csv"), "--synthetic", str(d / "synth.csv"),
                 "--schema", str(d / "schema.json"), "--n-perm", "1", "--no-plots", "--out", str(out)])
    assert code == 0
    assert (tmp_path / "r.marginals.csv").exists()
    assert not (tmp_path / "r.marginals.png").exists()


def test_usage_errors(capsys):
    assert main([]) == 1
    assert main(["simulate", "--bogus", "--out", "x"]) == 1
    assert "--bogus" in capsys.readouterr().err
    assert main(["generate", "--model", "m", "--n", "-3", "--out", "x"]) == 1
    assert main(["nope"]) == 1
    assert main(["--version"]) == 0


def test_data_errors(tmp_path, capsys):
    assert main(["fit-pretransform", "--data", str(tmp_path / "missing.csv"), "--schema",
                 str(tmp_path / "s.json"), "--out", str(tmp_path / "p.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 9}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "d.csv"),
                 "--schema-out", str(tmp_path / "s.json")]) == 2
    assert "version" in capsys.readouterr().err
    bad.write_text(json.dumps({"version": 1, "rows": 5}))
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "d.csv"),
                 "--schema-out", str(tmp_path / "s.json")]) == 2


def test_run_subcommand(tmp_path):
    cfg = _cfg(tmp_path / "run.json", {
        "data": {"simulate": {"n": 300}}, "vae": {"epochs": 2}, "propensity": {"ridge": 0.5},
        "evaluate": {"n_perm": 2}, "plots": False,
    })
    assert main(["run", "--config", cfg, "--out-dir", str(tmp_path / "out"), "--seed", "5"]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["seed"] == 5


@pytest.mark.skipif(shutil.which("synthgen") is None, reason="console script not installed")
def test_console_script_exit_code():
    res = subprocess.run(["synthgen", "train"], capture_output=True, text=True)
    assert res.returncode == 1
    res = subprocess.run([sys.executable, "-m", "synthgen.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
