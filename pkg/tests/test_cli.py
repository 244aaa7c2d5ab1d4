"""Config handling, artifact layout, exit codes, and rerun determinism."""

import json

import pytest

from mvfbm.cli import ConfigError, load_config, main, run, validate_config
from mvfbm.reporting import config_hash

CONFIG_TEXT = """
[model]
preset = linear-meanfield
a = 0.4
beta = 0.3

[simulation]
hurst = 0.7
horizon = 1.0
n_steps = 32
n_particles = 600
n_paths = 600
seed = 99

[experiment]
name = bismut

[output]
directory = {outdir}
plots = false
"""


def write_config(tmp_path, **kw):
    path = tmp_path / "run.ini"
    path.write_text(CONFIG_TEXT.format(outdir=str(tmp_path / "out"), **kw))
    return str(path)


class TestConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None, [], None)
        assert cfg["experiment"]["name"] == "validate"
        assert cfg["simulation"]["seed"] == "12345"

    def test_file_and_overrides(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path, ["--sim.seed=7", "--model.a=0.2"], "picard")
        assert cfg["simulation"]["seed"] == "7"
        assert cfg["model"]["a"] == "0.2"
        assert cfg["experiment"]["name"] == "picard"

    def test_section_aliases(self):
        cfg = load_config(None, ["--exp.name=tv", "--out.directory=z"], None)
        assert cfg["experiment"]["name"] == "tv"
        assert cfg["output"]["directory"] == "z"

    def test_bad_override_rejected(self):
        with pytest.raises(ConfigError):
            load_config(None, ["--seed=7"], None)
        with pytest.raises(ConfigError):
            load_config(None, ["--nosection.key=1"], None)

    def test_validation_errors(self):
        for bad in (["--sim.hurst=0.4"], ["--sim.n_steps=8"], ["--exp.name=bogus"],
                    ["--model.preset=unknown"], ["--sim.horizon=-1"]):
            cfg = load_config(None, bad, None)
            with pytest.raises(ConfigError):
                validate_config(cfg)

    def test_unknown_model_param_rejected(self):
        from mvfbm.cli import build_model

        cfg = load_config(None, ["--model.preset=pure-noise", "--model.beta=1"], None)
        with pytest.raises(ConfigError):
            build_model(cfg)

    def test_missing_file_is_config_error(self):
        with pytest.raises(ConfigError):
            load_config("/nonexistent/path.ini", [], None)


class TestRun:
    def test_bismut_run_artifacts(self, tmp_path):
        path = write_config(tmp_path)
        code = main([
            "bismut", "--config", path, "--no-plots",
        ])
        assert code == 0
        outdir = tmp_path / "out"
        report = json.loads((outdir / "report.json").read_text())
        manifest = json.loads((outdir / "manifest.json").read_text())
        assert report["experiment"] == "bismut"
        assert {"model", "f", "phi", "n_paths", "seed", "estimate", "se",
                "oracle", "oracle_se", "pass"} <= set(report)
        assert report["config_hash"] == manifest["config_hash"]
        assert manifest["config_hash"] == config_hash(manifest["config"])
        assert (outdir / "fd_quotients.csv").exists()
        header = (outdir / "fd_quotients.csv").read_text().splitlines()[0]
        assert header == "eps,value,std_error"

    def test_rerun_byte_identical_and_worker_invariant(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["bismut", "--config", path, "--no-plots", "--workers", "1"]) == 0
        first = (tmp_path / "out" / "report.json").read_bytes()
        assert main(["bismut", "--config", path, "--no-plots", "--workers", "4"]) == 0
        second = (tmp_path / "out" / "report.json").read_bytes()
        assert first == second

    def test_config_error_exit_code(self, tmp_path):
        path = write_config(tmp_path)
        assert main(["bismut", "--config", path, "--sim.hurst=1.3"]) == 2

    def test_plots_rendered_by_default(self, tmp_path):
        path = write_config(tmp_path)
        cfg = load_config(path, ["--out.plots=true"], "picard")
        assert run(cfg, workers=1, plots=True) == 0
        assert (tmp_path / "out" / "picard_errors.png").exists()
        assert (tmp_path / "out" / "picard_errors.csv").exists()

    def test_simulate_emits_dumps(self, tmp_path):
        path = write_config(tmp_path)
        code = main(["simulate", "--config", path, "--no-plots",
                     "--model.preset=pure-noise", "--model.a=", "--model.beta="])
        # empty overrides for a/beta are invalid floats -> config error
        assert code == 2
        code = main(["simulate", "--config", path, "--no-plots",
                     "--sim.n_particles=200", "--exp.n_dump_paths=2"])
        assert code == 0
        outdir = tmp_path / "out"
        assert (outdir / "states.npy").exists()
        assert (outdir / "states.json").exists()
        assert (outdir / "terminal_snapshot.csv").exists()
        assert (outdir / "path_000.csv").exists()
        assert (outdir / "path_001.csv").exists()

    def test_failed_flag_exits_one(self, tmp_path, monkeypatch):
        # force a failing pass flag through an impossible tolerance target
        from mvfbm import experiments

        def fake_experiment(model, sim, exp, outdir, plots):
            return {"experiment": "bismut", "pass": False}

        monkeypatch.setitem(experiments.EXPERIMENTS, "bismut", fake_experiment)
        monkeypatch.setattr("mvfbm.cli.EXPERIMENTS", experiments.EXPERIMENTS)
        path = write_config(tmp_path)
        assert main(["bismut", "--config", path, "--no-plots"]) == 1

    def test_numerical_abort_exits_three(self, tmp_path, monkeypatch):
        from mvfbm import experiments
        from mvfbm.solver import NonFiniteStateError

        def exploding(model, sim, exp, outdir, plots):
            raise NonFiniteStateError("state", 7, 3)

        monkeypatch.setitem(experiments.EXPERIMENTS, "bismut", exploding)
        monkeypatch.setattr("mvfbm.cli.EXPERIMENTS", experiments.EXPERIMENTS)
        path = write_config(tmp_path)
        assert main(["bismut", "--config", path, "--no-plots"]) == 3
