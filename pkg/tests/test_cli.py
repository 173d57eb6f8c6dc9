import json

import numpy as np
from scipy.integrate import quad

from fermat.cli import main


def run_cli(*args):
    return main([str(a) for a in args])


class TestSampleAndFit:
    def test_sample_writes_csv_and_sidecar(self, tmp_path, capsys):
        out = tmp_path / "pts.csv"
        assert run_cli("sample", "--dataset", "circle", "--n", 200,
                       "--seed", 4, "--out", out) == 0
        data = np.loadtxt(out, delimiter=",", skiprows=1)
        assert data.shape == (200, 2)
        meta = json.loads((tmp_path / "pts.csv.meta.json").read_text())
        assert meta["invocation"]["seed"] == 4

    def test_sample_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        run_cli("sample", "--dataset", "spiral", "--n", 100, "--seed", 9, "--out", a)
        run_cli("sample", "--dataset", "spiral", "--n", 100, "--seed", 9, "--out", b)
        assert a.read_bytes() == b.read_bytes()

    def test_fit_gmm_round_trip(self, tmp_path):
        pts = tmp_path / "pts.csv"
        model = tmp_path / "m.json"
        run_cli("sample", "--dataset", "gmm3", "--n", 500, "--seed", 0, "--out", pts)
        assert run_cli("fit-gmm", "--data", pts, "--components", 3,
                       "--seed", 1, "--out", model) == 0
        payload = json.loads(model.read_text())
        assert len(payload["weights"]) == 3


class TestGraphCommands:
    def test_build_graph_and_shortest_path(self, tmp_path, capsys):
        pts = tmp_path / "pts.csv"
        graph = tmp_path / "g.txt"
        run_cli("sample", "--dataset", "standard_normal", "--n", 300,
                "--seed", 2, "--out", pts)
        assert run_cli("build-graph", "--data", pts, "--k", 8, "--weighting", "power",
                       "--beta", 1.0, "--out", graph) == 0
        out = tmp_path / "path.csv"
        assert run_cli("shortest-path", "--graph", graph, "--source", 0,
                       "--target", 100, "--out", out) == 0
        stdout = capsys.readouterr().out
        assert "log-distance" in stdout
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        assert rows[0, 0] == 0 and rows[-1, 0] == 100

    def test_density_weighting_needs_model(self, tmp_path):
        pts = tmp_path / "pts.csv"
        run_cli("sample", "--dataset", "standard_normal", "--n", 50,
                "--seed", 2, "--out", pts)
        code = run_cli("build-graph", "--data", pts, "--k", 5,
                       "--weighting", "density", "--beta", 1.0,
                       "--out", tmp_path / "g.txt")
        assert code == 1  # no --model/--dataset given


class TestDistanceCommand:
    def test_analytic_standard_normal(self, tmp_path, capsys):
        out = tmp_path / "geo.csv"
        code = run_cli("distance", "--dataset", "standard_normal", "--dim", 2,
                       "--x1=-2,0", "--x2", "2,0", "--beta", 1.0, "--out", out)
        assert code == 0
        stdout = capsys.readouterr().out
        value = float(stdout.split("log-distance", 1)[1].split()[0])
        truth, _ = quad(lambda x: 2 * np.pi * np.exp(x * x / 2), -2, 2)
        assert abs(np.exp(value) / truth - 1.0) < 1e-4
        table = np.loadtxt(out, delimiter=",", skiprows=1)
        assert table.shape[1] == 2 and len(table) == 1025

    def test_beta_validation_names_field(self, capsys):
        code = run_cli("distance", "--dataset", "standard_normal",
                       "--x1", "0,0", "--x2", "1,1", "--beta", -1.0)
        assert code != 0
        assert "beta" in capsys.readouterr().err

    def test_coincident_points(self, tmp_path, capsys):
        code = run_cli("distance", "--dataset", "standard_normal",
                       "--x1", "1,1", "--x2", "1,1", "--beta", 1.0,
                       "--out", tmp_path / "geo.csv")
        assert code == 0
        assert "-inf" in capsys.readouterr().out


class TestRelaxAndLpr:
    def test_relax_then_lpr(self, tmp_path, capsys):
        path_file = tmp_path / "path.csv"
        assert run_cli("relax", "--dataset", "standard_normal", "--x1", "2,0",
                       "--x2", "0,2", "--beta", 1.0, "--n-points", 128,
                       "--out", path_file) == 0
        stdout = capsys.readouterr().out
        assert "converged=True" in stdout
        log_len = float(stdout.split("log-length", 1)[1].split()[0])
        assert run_cli("lpr", "--path", path_file, "--dataset", "standard_normal",
                       "--beta", 1.0, "--true-distance", log_len) == 0
        lpr_out = capsys.readouterr().out
        assert abs(float(lpr_out.split("lpr", 1)[1])) < 1e-9


class TestExpCommand:
    def test_kde_default_config_ordering(self, tmp_path, capsys):
        out = tmp_path / "kde.csv"
        assert run_cli("exp", "kde", "--out", out, "--seed", 0) == 0
        rows = np.loadtxt(out, delimiter=",", skiprows=1)
        bw, mise_logp, mise_score = rows[:, 0], rows[:, 1], rows[:, 2]
        assert bw[mise_logp.argmin()] < bw[mise_score.argmin()]
        assert (tmp_path / "kde.csv.meta.json").exists()

    def test_convergence_with_config_file(self, tmp_path):
        from fermat.experiments import ExperimentConfig

        cfg = ExperimentConfig(
            dataset="standard_normal",
            methods=("power", "density_gt"),
            sample_sizes=(200,),
            n_pairs=8,
            gt_n_points=256,
            seed=1,
        )
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(cfg.to_json())
        out = tmp_path / "conv.csv"
        assert run_cli("exp", "convergence", "--config", cfg_file, "--out", out,
                       "--threads", 2) == 0
        text = out.read_text().splitlines()
        assert text[0].startswith("dataset,method,sample_size")
        assert len(text) == 3

    def test_scaled_fig_writes_paths(self, tmp_path):
        from fermat.experiments import ExperimentConfig

        cfg = ExperimentConfig(dims=(2, 4), gt_n_points=256, seed=2)
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(cfg.to_json())
        out = tmp_path / "fig.csv"
        assert run_cli("exp", "scaled-fig", "--config", cfg_file, "--out", out) == 0
        assert (tmp_path / "fig_path_D2_scaled.csv").exists()
        assert (tmp_path / "fig_path_D4_unscaled.csv").exists()

    def test_invalid_beta_override(self, capsys):
        code = run_cli("exp", "kde", "--beta", -0.5)
        assert code != 0
        assert "beta" in capsys.readouterr().err


class TestUsageErrors:
    def test_unknown_subcommand(self):
        assert run_cli("warp") == 2

    def test_unknown_flag(self):
        assert run_cli("sample", "--dataset", "circle", "--n", 10, "--warp", 1) == 2

    def test_missing_required(self):
        assert run_cli("sample", "--dataset", "circle") == 2
