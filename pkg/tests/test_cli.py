import csv
import io
import json
import math

import jsonschema
import pytest

from susylab import cli


@pytest.fixture(scope="module")
def schema():
    with open(cli.SCHEMA_PATH, encoding="utf-8") as fh:
        return json.load(fh)


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def report(capsys, schema, *argv):
    code, out, err = run_cli(capsys, *argv)
    assert code == 0, err
    rep = json.loads(out)
    jsonschema.validate(rep, schema)
    return rep


class TestDetk:
    def test_identity(self, capsys, schema):
        rep = report(capsys, schema, "detk", "--matrix", "[[1,0],[0,1]]")
        assert rep["results"]["det"] == [4.0, 0.0]
        assert rep["results"]["det_k"][0] == pytest.approx(4 * math.exp(-2))

    def test_complex_entries(self, capsys, schema):
        rep = report(capsys, schema, "detk", "--matrix", "[[[0,1]]]", "--k", "1")
        assert rep["results"]["det"] == pytest.approx([1.0, 1.0])

    def test_smoothing_operator(self, capsys, schema):
        rep = report(capsys, schema, "detk", "--operator", "smoothing", "--N", "4")
        assert rep["results"]["schatten_norms"]["1"] == pytest.approx(10.309934097550197)

    def test_needs_exactly_one_source(self, capsys):
        assert run_cli(capsys, "detk")[0] == 2
        assert run_cli(capsys, "detk", "--matrix", "[[1]]", "--operator", "smoothing")[0] == 2

    def test_non_square(self, capsys):
        assert run_cli(capsys, "detk", "--matrix", "[[1,2]]")[0] == 2


class TestFindim:
    def test_zsq_degree(self, capsys, schema):
        rep = report(capsys, schema, "findim", "--map", "zsq", "--mode", "degree")
        assert rep["results"]["degree"] == 2

    def test_zeros(self, capsys, schema):
        rep = report(capsys, schema, "findim", "--map", "zcube", "--mode", "zeros", "--y", "[0.5, 0.2]")
        assert rep["results"]["degree"] == 3 and len(rep["results"]["preimages"]) == 3

    def test_phase(self, capsys, schema):
        rep = report(capsys, schema, "findim", "--map", "zbar", "--mode", "phase", "--n-samples", "200")
        assert rep["results"]["holds"] and rep["results"]["lhs"] == pytest.approx(-1, abs=1e-6)

    def test_numerical_failure_exit(self, capsys):
        code, _, err = run_cli(capsys, "findim", "--map", "identity", "--radius", "2")
        assert code == 3 and "InsufficientDecay" in err

    def test_degenerate_exit(self, capsys):
        assert run_cli(capsys, "findim", "--map", "zsq", "--mode", "zeros", "--y", "[0, 0]")[0] == 3

    def test_unknown_map(self, capsys):
        assert run_cli(capsys, "findim", "--map", "nope")[0] == 2


class TestGaussian:
    def test_charfun(self, capsys, schema):
        rep = report(capsys, schema, "gaussian", "--N", "4", "--n", "20000", "--seed", "3")
        assert rep["results"]["exact"] == pytest.approx(math.exp(-0.5))
        assert rep["results"]["within_3_stderr"]

    def test_cm(self, capsys, schema):
        rep = report(capsys, schema, "gaussian", "--mode", "cm", "--N", "3", "--s", "1", "--n", "20000")
        assert rep["results"]["within_3_stderr"]


class TestWzlg:
    ARGS = ("wzlg", "--N", "3", "--samples", "3", "--starts", "4")

    def test_report(self, capsys, schema):
        rep = report(capsys, schema, *self.ARGS)
        r = rep["results"]
        assert r["target"] == 2 and r["mass"]["n"] == 3
        assert set(r["phase_integral"]) == {"frechet", "literal"}

    def test_literal_undefined_reported(self, capsys, schema):
        rep = report(capsys, schema, "wzlg", "--N", "4", "--samples", "1", "--starts", "2")
        assert "undefined" in rep["results"]["phase_integral"]["literal"]

    def test_quadratic(self, capsys, schema):
        rep = report(capsys, schema, "wzlg", "--poly", "0,0,0.5", "--N", "3", "--samples", "3", "--starts", "2")
        ph = rep["results"]["phase_integral"]["frechet"]
        assert ph["mean_re"] == 1 and ph["stderr"] == 0
        assert rep["results"]["branch_histogram"] == {"1": 3}

    def test_bad_poly(self, capsys):
        assert run_cli(capsys, "wzlg", "--poly", "1,2")[0] == 2
        assert run_cli(capsys, "wzlg", "--poly", "a,b")[0] == 2

    def test_worker_count_invariance(self, capsys):
        a = json.loads(run_cli(capsys, *self.ARGS, "--workers", "1")[1])
        b = json.loads(run_cli(capsys, *self.ARGS, "--workers", "2")[1])
        assert json.dumps(cli.deterministic_part(a), sort_keys=True) == json.dumps(cli.deterministic_part(b), sort_keys=True)
        assert a["execution"]["workers"] == 1 and b["execution"]["workers"] == 2


class TestFz:
    def test_report(self, capsys, schema):
        rep = report(capsys, schema, "fz", "--n", "2", "--matrix-size", "2")
        assert rep["results"]["relative_error"] < 1e-8
        assert rep["results"]["completeness"]["sl"]["relative_error"] > 1e-3
        assert rep["results"]["configurations"] == 3

    def test_scenario_file(self, capsys, schema, tmp_path):
        cfg = {
            "command": "fz",
            "n": 1,
            "matrix_size": 2,
            "matrices": [[[1, 0], [0, -1]]],
            "points": [[0, 0], [1, 2], [3, 1]],
            "s": 2,
            "N": 3,
            "algebra": "gl",
            "seed": 5,
        }
        path = tmp_path / "fz.json"
        path.write_text(json.dumps(cfg))
        rep = report(capsys, schema, "fz", "--config", str(path))
        assert rep["seed"] == 5 and rep["seed_source"] == "config"
        assert rep["inputs"]["matrices"] == [[[1, 0], [0, -1]]]

    def test_bad_scenario(self, capsys):
        assert run_cli(capsys, "fz", "--n", "2", "--points", "[[0,0]]")[0] == 2
        assert run_cli(capsys, "fz", "--n", "1", "--matrices", "[[[0,1],[0,0]]]")[0] == 2


class TestConfig:
    def test_malformed_json(self, capsys, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert run_cli(capsys, "detk", "--config", str(path))[0] == 2

    def test_unknown_key(self, capsys, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"matrix": [[1]], "colour": "red"}))
        code, _, err = run_cli(capsys, "detk", "--config", str(path))
        assert code == 2 and "colour" in err

    def test_wrong_command(self, capsys, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"command": "fz"}))
        assert run_cli(capsys, "detk", "--config", str(path))[0] == 2

    def test_flag_overrides_config(self, capsys, schema, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"matrix": [[1]], "k": 3, "seed": 4}))
        rep = report(capsys, schema, "detk", "--config", str(path), "--k", "1", "--seed", "9")
        assert rep["inputs"]["k"] == 1 and rep["seed"] == 9

    def test_range_checks(self, capsys):
        assert run_cli(capsys, "gaussian", "--t", "-1")[0] == 2
        assert run_cli(capsys, "gaussian", "--n", "1")[0] == 2
        assert run_cli(capsys, "detk", "--matrix", "[[1]]", "--seed", "-3")[0] == 2
        assert run_cli(capsys, "detk", "--matrix", "[[1]]", "--k", "1.5")[0] == 2

    def test_env_seed_echoed(self, capsys, schema, monkeypatch):
        monkeypatch.setenv(cli.SEED_ENV, "1234")
        rep = report(capsys, schema, "detk", "--matrix", "[[1]]")
        assert rep["seed"] == 1234 and rep["seed_source"] == "env"

    def test_output_file(self, capsys, schema, tmp_path):
        out = tmp_path / "r.json"
        assert run_cli(capsys, "detk", "--matrix", "[[2]]", "--output", str(out))[0] == 0
        jsonschema.validate(json.loads(out.read_text()), schema)

    def test_version_in_report(self, capsys, schema):
        rep = report(capsys, schema, "detk", "--matrix", "[[1]]")
        assert rep["version"].startswith("0.1.0")


class TestSweep:
    def rows(self, out):
        return list(csv.DictReader(io.StringIO(out)))

    def test_schatten_n_sweep(self, capsys):
        code, out, _ = run_cli(
            capsys, "sweep", "--command", "detk", "--axis", "N", "--values", "4,8,16",
            "--base", '{"operator": "smoothing"}',
        )
        assert code == 0
        col = [float(r["schatten_norms.3"]) for r in self.rows(out)]
        assert col == sorted(col) and len(col) == 3

    def test_t_sweep_wzlg(self, capsys):
        code, out, _ = run_cli(
            capsys, "sweep", "--command", "wzlg", "--axis", "t", "--values", "1,4,16",
            "--base", '{"N": 2, "samples": 2, "starts": 2, "variant": "frechet"}',
        )
        assert code == 0
        rows = self.rows(out)
        assert [float(r["t"]) for r in rows] == [1, 4, 16]
        assert "phase_integral.frechet.mean_re" in rows[0] and "phase_integral.frechet.stderr" in rows[0]

    def test_empty_values(self, capsys):
        assert run_cli(capsys, "sweep", "--command", "detk", "--axis", "N", "--values", "")[0] == 2

    def test_non_numeric_axis(self, capsys):
        assert run_cli(capsys, "sweep", "--command", "findim", "--axis", "map", "--values", "1")[0] == 2
