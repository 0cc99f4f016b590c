import csv
import json

import pytest
import yaml

from reslat import cli

SMALL = {
    "experiments": {
        "dyson": {"levels": [4, 5], "n_max": 3, "rtol": 1e-8},
        "cocycle": {"levels": [4, 5, 6]},
        "kms": {"levels": [4], "pairs": 3},
        "araki": {"levels": [4, 5]},
        "threshold": {},
        "ground": {"levels": [4, 5]},
    }
}


def _write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def test_defaults_cover_every_experiment():
    cfg = cli.config_from_dict({})
    assert set(cfg["experiments"]) == set(cli.EXPERIMENTS)
    assert set(cli.SCHEMA_OF) == set(cli.EXPERIMENTS)
    assert cfg == cli.parse_config("configs/acceptance.yaml")


def test_list_of_ids_selects_experiments():
    cfg = cli.config_from_dict({"experiments": ["kms", "threshold"]})
    assert list(cfg["experiments"]) == ["kms", "threshold"]
    assert cfg["experiments"]["kms"] == cli.DEFAULTS["experiments"]["kms"]


@pytest.mark.parametrize("raw,path", [
    ({"bogus": 1}, "bogus"),
    ({"lattice": {"omega": -1}}, "lattice.omega"),
    ({"lattice": {"sides": [3, 3]}}, "lattice.sides"),
    ({"lattice": {"potential": {"kind": "coulomb"}}}, "lattice.potential"),
    ({"experiments": {"nope": {}}}, "experiments.nope"),
    ({"experiments": {"dyson": {"refine": "magic"}}}, "experiments.dyson.refine"),
    ({"experiments": {"dyson": {"nodes": 3}}}, "experiments.dyson.nodes"),
    ({"experiments": {"kms": {"beta": [0.1, -1]}}}, "experiments.kms.beta[1]"),
    ({"experiments": {"bounds": {"pairs": [[-0.1, 0.4]]}}}, "experiments.bounds.pairs[0]"),
    ({"experiments": {"lemma62": {"kappa": [0.6]}}}, "experiments.lemma62.kappa[0]"),
    ({"experiments": {"lemma62": {"M": 1023}}}, "experiments.lemma62.M"),
    ({"experiments": {"nogo": {"c": 0}}}, "experiments.nogo.c"),
    ({"threads": 0}, "threads"),
    ([1, 2], "<root>"),
])
def test_config_errors_name_the_path(raw, path):
    with pytest.raises(cli.ConfigError) as e:
        cli.config_from_dict(raw)
    assert e.value.path == path


def test_parse_config_file_errors(tmp_path):
    with pytest.raises(cli.ConfigError):
        cli.parse_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    with pytest.raises(cli.ConfigError):
        cli.parse_config(bad)


def test_config_hash_stable():
    a = cli.config_from_dict({"seed": 3})
    b = cli.config_from_dict({"seed": 3})
    assert cli.config_hash(a) == cli.config_hash(b)
    assert cli.config_hash(a) != cli.config_hash(cli.config_from_dict({"seed": 4}))


def test_fmt():
    assert cli._fmt(None) == ""
    assert cli._fmt(True) == "true"
    assert cli._fmt(0.1) == "0.1"
    assert cli._fmt(3) == "3"


def test_main_rejects_bad_config(tmp_path, capsys):
    p = _write(tmp_path, {"lattice": {"omega": 0}})
    assert cli.main(["--config", str(p), "--out-dir", str(tmp_path / "o")]) == 2
    assert "lattice.omega" in capsys.readouterr().err
    p = _write(tmp_path, {"experiments": ["kms"]}, "k.yaml")
    assert cli.main(["--config", str(p), "--out-dir", str(tmp_path / "o"), "--experiment", "dyson"]) == 2
    assert cli.main(["--config", str(p), "--out-dir", str(tmp_path / "o"), "--threads", "0"]) == 2


def test_small_run_outputs(tmp_path):
    p = _write(tmp_path, SMALL)
    out = tmp_path / "run"
    code = cli.main(["--config", str(p), "--out-dir", str(out), "--plot", "dyson_distance"])
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["experiments"]) == set(SMALL["experiments"])
    assert manifest["config_hash"] == cli.config_hash(cli.parse_config(p))
    assert code == (0 if manifest["all_passed"] else 1)
    for name, m in manifest["experiments"].items():
        with open(out / m["csv"], newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == cli.SCHEMAS[cli.SCHEMA_OF[name]]
        assert len(rows) > 1
        assert all(c["error"] == "" for c in m["cells"])
        assert {r[rows[0].index("pass")] for r in rows[1:]} <= {"true", "false", "n/a"}
    plot = (out / "dyson_distance.plot.csv").read_text().splitlines()
    assert plot[0] == "x,y,series" and len(plot) == 1 + 2 * 3


def test_threads_do_not_change_csv_bytes(tmp_path):
    p = _write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    cli.main(["--config", str(p), "--out-dir", str(a), "--threads", "1"])
    cli.main(["--config", str(p), "--out-dir", str(b), "--threads", "4"])
    for f in sorted(a.glob("*.csv")):
        assert f.read_bytes() == (b / f.name).read_bytes()
    ma, mb = (json.loads((d / "manifest.json").read_text()) for d in (a, b))
    assert ma["config_hash"] == mb["config_hash"]


def test_cell_errors_are_recorded(tmp_path):
    cfg = cli.config_from_dict({"dim_cap": 10, "experiments": {"ground": {"levels": [4, 5]}}})
    m = cli.run_suite(cfg, tmp_path)
    assert not m["all_passed"]
    assert any("DimensionError" in c["error"] for c in m["experiments"]["ground"]["cells"])


def test_plotdata_unknown_quantity():
    with pytest.raises(ValueError):
        cli.emit_plotdata({}, "nonsense")
    assert cli.emit_plotdata({}, "dyson_distance") == "x,y,series\n"
