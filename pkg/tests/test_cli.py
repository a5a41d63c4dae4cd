import csv
import json

import pytest

from latentcomp import cli
from latentcomp.models.data import load_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert cli.main(["make-dataset", "--seed", "4", "--n", "20", "--out", str(out)]) == 0
    return out


def _compose_args(ds, out, *extra):
    e = json.loads((ds / "dataset.json").read_text())["samples"][0]
    return ["compose", "--bg", str(ds / e["bg"]), "--fg", str(ds / e["fg"]), "--obj-mask", str(ds / e["obj_mask"]),
            "--user-box", e["user_box"], "--prompt", e["prompt"], "--out", str(out), *extra]


def test_make_dataset_round_trip(dataset):
    ds = load_dataset(dataset)
    assert len(ds) == 20 and ds[0].background.ndim == 3


def test_compose_outputs_and_exit_codes(dataset, tmp_path):
    assert cli.main(_compose_args(dataset, tmp_path / "a")) == 0
    for name in ("result.ppm", "user_mask.pgm", "object_mask.pgm", "manifest.json"):
        assert (tmp_path / "a" / name).exists()
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["backend"]["weights"] is None
    assert cli.main(_compose_args(dataset, tmp_path / "b", "--t-prime", "25")) == 2
    args = _compose_args(dataset, tmp_path / "c")
    args[args.index("--bg") + 1] = str(tmp_path / "missing.ppm")
    assert cli.main(args) == 3
    assert cli.main(["compose", "--out", str(tmp_path / "d")]) == 2  # usage: inputs not given


def test_config_file_and_preset(dataset, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("preset = same-domain\nseed = 9  # trailing comment\n")
    assert cli.main(_compose_args(dataset, tmp_path / "o", "--config", str(conf))) == 0
    cfg = json.loads((tmp_path / "o" / "manifest.json").read_text())["config"]
    assert cfg["seed"] == 9 and cfg["skip_optimization"] and cfg["T_prime"] == 6
    conf.write_text("bogus = 1\n")
    assert cli.main(_compose_args(dataset, tmp_path / "p", "--config", str(conf))) == 2


def test_ablate_rows(dataset, tmp_path, capsys):
    out = tmp_path / "abl"
    code = cli.main(["ablate", "--sweep", "t-prime=16,12,8,4", "--dataset", str(dataset), "--out", str(out),
                     "--workers", "4"])
    assert code == 0
    rows = list(csv.reader((out / "ablation.csv").open()))
    assert len(rows) == 81 and rows[0][:2] == ["sweep_key", "sweep_value"]
    assert {r[1] for r in rows[1:]} == {"16", "12", "8", "4"}
    assert cli.main(["ablate", "--sweep", "nope=1", "--dataset", str(dataset), "--out", str(out)]) == 2


def test_metrics_on_saved_results(dataset, tmp_path):
    res = tmp_path / "res"
    e = json.loads((dataset / "dataset.json").read_text())["samples"][0]
    assert cli.main(_compose_args(dataset, res / e["id"])) == 0
    assert cli.main(["metrics", "--results", str(res), "--dataset", str(dataset), "--out", str(tmp_path / "m.csv")]) == 0
    rows = list(csv.DictReader((tmp_path / "m.csv").open()))
    assert len(rows) == 1 and 0.0 < float(rows[0]["style_proxy"]) <= 1.0


def test_gradcheck_and_invert(dataset, tmp_path, capsys):
    assert cli.main(["gradcheck", "--cases", "3", "--size", "8"]) == 0
    e = json.loads((dataset / "dataset.json").read_text())["samples"][0]
    assert cli.main(["invert", "--image", str(dataset / e["bg"]), "--out", str(tmp_path / "inv.json")]) == 0
    rep = json.loads((tmp_path / "inv.json").read_text())
    assert "relative_error" in json.dumps(rep)


def test_train_toy_small(tmp_path):
    w = tmp_path / "w.pt"
    assert cli.main(["train-toy", "--n", "4", "--epochs", "2", "--hidden", "8", "--out", str(w)]) == 0
    assert w.exists() and (tmp_path / "w.pt.json").exists()
