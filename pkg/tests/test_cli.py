import json

import numpy as np
import pytest
import yaml

from pardyn.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, main
from pardyn.io import load_model, read_csv

from conftest import SMALL

SMALL_ARGS = {bid: ["--elements", str(e), "--tau", str(t), "--T", str(T)] for bid, (e, t, T, _) in SMALL.items()}


@pytest.fixture(scope="module")
def rd_model(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "rd.bin"
    rc = main(["offline", "--benchmark", "reaction-diffusion", *SMALL_ARGS["reaction-diffusion"],
               "--n-train", "6", "--n-max", "3", "--out", str(path)])
    assert rc == EXIT_OK
    return path


def test_offline_writes_model_manifest_and_trace(rd_model):
    assert rd_model.exists()
    man = json.loads(rd_model.with_name(rd_model.name + ".json").read_text())
    assert man["n_terms"] == 3 and man["config"]["train_seed"] == 1
    header, rows = read_csv(str(rd_model) + ".trace.csv")
    assert header[:2] == ["step", "anchor_index"] and header[-3:] == ["delta_max", "strategy", "seconds"]
    assert len(rows) == 4 and rows[0][1] == "0"


def test_offline_from_yaml_config(tmp_path):
    from pardyn.benchmarks import build

    p, _ = build("burgers")
    cfg = {"problem": p.to_config(), "elements": 20, "tau": 2e-3, "T": 0.1, "n_train": 4, "train_seed": 3}
    (tmp_path / "c.yaml").write_text(yaml.safe_dump(cfg))
    rc = main(["offline", "--config", str(tmp_path / "c.yaml"), "--n-max", "2", "--out", str(tmp_path / "m.bin")])
    assert rc == EXIT_OK
    m = load_model(tmp_path / "m.bin")
    assert m.n_terms == 2 and m.grid.T == 0.1 and m.mesh.elements == (20,)


def test_offline_estimator_strategy_with_seed(tmp_path, capsys):
    rc = main(["offline", "--benchmark", "heat2d", "--tier", "ci", *SMALL_ARGS["heat2d"], "--n-train", "5",
               "--n-max", "10", "--strategy", "estimator", "--seed", "7", "--out", str(tmp_path / "h.bin")])
    assert rc == EXIT_OK
    m = load_model(tmp_path / "h.bin")
    assert m.n_terms <= 10 and m.config["strategy"] == "estimator" and m.config["train_seed"] == 7
    assert "terms" in capsys.readouterr().out


def test_offline_early_stop_is_reported(tmp_path, capsys):
    rc = main(["offline", "--benchmark", "reaction-diffusion", *SMALL_ARGS["reaction-diffusion"], "--n-train", "6",
               "--n-max", "6", "--eps", "1e3", "--out", str(tmp_path / "e.bin")])
    assert rc == EXIT_OK
    assert "below eps" in capsys.readouterr().out
    _, rows = read_csv(str(tmp_path / "e.bin") + ".trace.csv")
    assert rows[-1][1] == "-1" and len(rows) == 2


@pytest.mark.parametrize("argv", [
    ["offline", "--benchmark", "wave", "--out", "x.bin"],
    ["offline", "--out", "x.bin"],
    ["offline", "--benchmark", "burgers"],
    ["online"],
    ["bogus"],
    [],
    ["benchmark", "--id", "burgers", "--compare", "vs", "--m", "2"],
])
def test_usage_errors(argv, tmp_path, monkeypatch, capsys):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == EXIT_USAGE


def test_online_single_parameter(rd_model, tmp_path):
    rc = main(["online", "--model", str(rd_model), "--params", "1.5,2.0,1.2,2.5", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    header, rows = read_csv(tmp_path / "online.csv")
    assert header == ["sample", "xi1", "xi2", "xi3", "xi4"] and len(rows) == 1
    th, tr = read_csv(tmp_path / "online_timing.csv")
    assert th[0] == "samples" and tr[0][0] == "1"


def test_online_wrong_length_and_out_of_box(rd_model, tmp_path):
    assert main(["online", "--model", str(rd_model), "--params", "1.5,2.0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["online", "--model", str(rd_model), "--params", "9,2,2,2", "--out", str(tmp_path)]) == EXIT_USAGE


def test_online_at_anchor_beats_recorded_error(rd_model, tmp_path):
    model = load_model(rd_model)
    k = 1
    step = model.trace[k]            # selection that produced term k + 1
    anchor = model.training[step.anchor_index]
    rc = main(["online", "--model", str(rd_model), "--params", ",".join(repr(float(v)) for v in anchor),
               "--with-fom", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    header, rows = read_csv(tmp_path / "online.csv")
    err = float(rows[0][header.index("rel_error")])
    assert err < step.relative[step.anchor_index]


def test_online_random_batch_with_fom_and_reconstruction(rd_model, tmp_path):
    rc = main(["online", "--model", str(rd_model), "--m", "2", "--seed", "4", "--with-fom", "--fixed-times", "0.5",
               "--reconstruct", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    header, rows = read_csv(tmp_path / "online.csv")
    assert header[-2:] == ["rel_error", "eps_t0.5"] and len(rows) == 2
    fh, frows = read_csv(tmp_path / "field_0.csv")
    assert fh == ["t", "node", "x1", "u"]
    xi4 = float(rows[0][4])
    first = [r for r in frows if r[1] == "0"]
    assert float(first[3][3]) == pytest.approx(2 * xi4, rel=1e-5)
    zh, zrows = read_csv(tmp_path / "zetas.csv")
    assert zh == ["sample", "term", "t", "zeta"]


def test_stripped_model_online(tmp_path):
    path = tmp_path / "s.bin"
    assert main(["offline", "--benchmark", "burgers", *SMALL_ARGS["burgers"], "--n-train", "4", "--n-max", "2",
                 "--strip", "--out", str(path)]) == EXIT_OK
    assert not load_model(path).has_fields
    assert main(["online", "--model", str(path), "--m", "3", "--out", str(tmp_path)]) == EXIT_OK
    assert main(["online", "--model", str(path), "--m", "1", "--reconstruct", "--out", str(tmp_path)]) == EXIT_USAGE


def test_version_mismatch_exit_code(rd_model, tmp_path, capsys):
    import shutil
    import struct

    p = tmp_path / "new.bin"
    shutil.copy(rd_model, p)
    data = bytearray(p.read_bytes())
    data[8:12] = struct.pack("<I", 99)
    p.write_bytes(bytes(data))
    assert main(["online", "--model", str(p), "--m", "1", "--out", str(tmp_path)]) == EXIT_IO
    err = capsys.readouterr().err
    assert "99.0" in err and "header" in err
    assert main(["inspect", "--model", str(p)]) == EXIT_IO
    assert main(["inspect", "--model", str(tmp_path / "missing.bin")]) == EXIT_IO


def test_inspect(rd_model, capsys):
    assert main(["inspect", "--model", str(rd_model)]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["n_terms"] == 3 and out["container_version"] == "1.0"


def test_benchmark_tables_are_reproducible(tmp_path):
    args = ["benchmark", "--id", "burgers", *SMALL_ARGS["burgers"], "--n-train", "5", "--n", "2,4", "--m", "3"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--jobs", "2"]) == EXIT_OK
    header, rows = read_csv(tmp_path / "a" / "burgers_table.csv")
    assert header == ["N", "eps_mean", "eps_max"] and [r[0] for r in rows] == ["2", "4"]
    for kind in ("table", "curve", "density"):
        assert (tmp_path / "a" / f"burgers_{kind}.csv").read_bytes() == \
            (tmp_path / "b" / f"burgers_{kind}.csv").read_bytes()
    th, _ = read_csv(tmp_path / "a" / "burgers_timing.csv")
    assert th == ["N", "offline_seconds", "online_total_seconds", "online_mean_seconds", "fom_mean_seconds"]
    man = json.loads((tmp_path / "a" / "burgers_manifest.json").read_text())
    assert man["benchmark"]["n_test"] == 3 and man["n_list"] == [2, 4]


def test_benchmark_compare_vs(tmp_path, monkeypatch):
    monkeypatch.setenv("PARDYN_JOBS", "1")
    rc = main(["benchmark", "--id", "heat2d", *SMALL_ARGS["heat2d"], "--n-train", "4", "--n", "2", "--m", "2",
               "--compare", "vs", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    header, rows = read_csv(tmp_path / "heat2d_table.csv")
    assert header == ["N", "eps_mean", "eps_max", "vs_eps_mean", "vs_eps_max", "ratio_vs_over_dvs"]
    r = [float(v) for v in rows[0]]
    assert r[5] == pytest.approx(r[3] / r[1], rel=1e-5)
    _, curve = read_csv(tmp_path / "heat2d_curve.csv")
    assert len(curve[0]) == 3


def test_bad_jobs_environment(rd_model, tmp_path, monkeypatch):
    monkeypatch.setenv("PARDYN_JOBS", "many")
    assert main(["online", "--model", str(rd_model), "--m", "1", "--with-fom", "--out", str(tmp_path)]) == EXIT_USAGE


def test_numerical_failure_exit_code(tmp_path):
    cfg = {
        "problem": {
            "name": "blowup", "domain": {"lo": [0.0], "hi": [1.0]}, "T": 1.0, "parameter_box": [[1.0, 2.0]],
            "linear_terms": [{"name": "g", "coef": {"scale": 50.0, "powers": [[0, 1]]}, "operator": "mass"}],
            "initial_terms": [{"name": "b", "coef": 1.0, "field": {"kind": "bubble"}}],
        },
        "elements": 8, "tau": 0.01, "n_train": 2,
    }
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    from pardyn.cli import EXIT_NUMERICAL

    rc = main(["offline", "--config", str(tmp_path / "c.json"), "--out", str(tmp_path / "m.bin")])
    assert rc == EXIT_NUMERICAL
    assert not (tmp_path / "m.bin").exists()
