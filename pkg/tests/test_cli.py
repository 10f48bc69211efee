import csv
import hashlib
import json
import sys

import numpy as np
import pytest
import yaml

from riemann_free import cli
from riemann_free.cli import ConfigError, build_config, expand_cells, main, parse_config, parse_grid
from riemann_free.manifolds import Sphere


def _write(tmp_path, tree, name="run.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(tree))
    return p


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- config ----------------------------------------------------------------


def test_minimal_config_gets_defaults():
    cfg = build_config({"experiment": "rayleigh", "optimizers": ["rdog"]})
    assert cfg.problem == {"d": 50, "q": 55}
    assert cfg.T == 1000 and cfg.replications == 1 and cfg.seed == 0
    assert cfg.optimizers[0].param_name == "eps"
    assert cfg.optimizers[0].grid == tuple(np.logspace(-8, 0, 10))
    rs = build_config({"experiment": "rayleigh", "optimizers": ["rsgd"]})
    assert rs.optimizers[0].param_name == "lr" and rs.optimizers[0].grid == tuple(np.logspace(-8, 6, 20))


def test_grid_grammar():
    assert parse_grid([1e-3, 1e-1], "eps") == (1e-3, 1e-1)
    assert parse_grid(0.5, "eps") == (0.5,)
    assert parse_grid({"logspace": [-8, 0, 9]}, "eps") == tuple(np.logspace(-8, 0, 9))
    assert parse_grid("logspace:-2:2:5", "lr") == tuple(np.logspace(-2, 2, 5))
    assert parse_grid("0.1,0.2", "lr") == (0.1, 0.2)
    for bad in ([0.0, 1.0], {"logspace": [1, 2]}, "logspace:1:2", [], "a,b"):
        with pytest.raises(ConfigError):
            parse_grid(bad, "eps")


def test_nonpositive_eps_rejected():
    with pytest.raises(ConfigError, match="eps"):
        build_config({"experiment": "rayleigh", "optimizers": [{"name": "rdog", "eps": [-1.0, 1.0]}]})


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown config keys"):
        build_config({"experiment": "rayleigh", "optimizers": ["rdog"], "iters": 5})
    with pytest.raises(ConfigError, match="problem"):
        build_config({"experiment": "rayleigh", "problem": {"dim": 3}, "optimizers": ["rdog"]})
    with pytest.raises(ConfigError):
        build_config({"experiment": "rayleigh", "optimizers": [{"name": "rdog", "momentum": 0.9}]})
    with pytest.raises(ConfigError):
        build_config({"experiment": "rayleigh", "optimizers": ["adamw"]})
    with pytest.raises(ConfigError):
        build_config({"experiment": "tsne", "optimizers": ["rdog"]})
    with pytest.raises(ConfigError):
        build_config({"experiment": "rayleigh"})


def test_flag_overrides_file(tmp_path):
    path = _write(tmp_path, {"experiment": "rayleigh", "T": 100, "optimizers": ["rdog", "rsgd"]})
    cfg = parse_config(path, {"T": 500, "eps": "0.1,1", "lr": "logspace:-1:0:2"})
    assert cfg.T == 500
    assert cfg.optimizers[0].grid == (0.1, 1.0)
    assert cfg.optimizers[1].grid == tuple(np.logspace(-1, 0, 2))
    cfg = parse_config(path, {"optimizer": "nrdog"})
    assert [b.name for b in cfg.optimizers] == ["nrdog"]


def test_dowg_form_flag(tmp_path):
    path = _write(tmp_path, {"experiment": "rayleigh", "optimizers": ["rdowg", "rdog"]})
    cfg = parse_config(path, {"dowg_form": "maintext"})
    assert cfg.optimizers[0].fixed["dowg_form"] == "maintext"
    assert "dowg_form" not in cfg.optimizers[1].fixed


def test_env_seed_fallback(tmp_path, monkeypatch):
    path = _write(tmp_path, {"experiment": "rayleigh", "optimizers": ["rdog"]})
    monkeypatch.setenv("RIEMANN_FREE_SEED", "17")
    assert parse_config(path).seed == 17
    assert parse_config(path, {"seed": 3}).seed == 3
    monkeypatch.setenv("RIEMANN_FREE_SEED", "x")
    with pytest.raises(ConfigError):
        parse_config(path)


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        parse_config(tmp_path / "missing.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed\n")
    with pytest.raises(ConfigError, match="malformed"):
        parse_config(bad)


def test_hash_ignores_output_location():
    a = build_config({"experiment": "rayleigh", "optimizers": ["rdog"], "out": "a"})
    b = build_config({"experiment": "rayleigh", "optimizers": ["rdog"], "out": "b", "workers": 3})
    c = build_config({"experiment": "rayleigh", "optimizers": ["rdog"], "seed": 1})
    assert a.hash() == b.hash() != c.hash()


def test_cell_seeds_independent_of_other_cells():
    one = {"name": "rdog", "eps": 0.1}
    small = build_config({"experiment": "rayleigh", "optimizers": [one], "replications": 2})
    big = build_config({"experiment": "rayleigh", "optimizers": [one, {"name": "rdowg", "eps": 0.1}],
                        "replications": 3})
    s = [cli.cell_seeds(small, c) for c in expand_cells(small)]
    b = [cli.cell_seeds(big, c) for c in expand_cells(big)]
    assert s == b[:2]
    # data and initial point shared across optimizers within a replication
    assert b[0]["init"] == b[3]["init"] and b[0]["oracle"] != b[3]["oracle"]


# --- runs ------------------------------------------------------------------


def _small(tmp_path, **kw):
    tree = {"experiment": "rayleigh", "problem": {"d": 3, "q": 4}, "T": 50,
            "optimizers": [{"name": "rdog", "eps": 1e-3}],
            "out": str(tmp_path / "out"), "workers": 1}
    tree.update(kw)
    return tree


def test_single_cell_run(tmp_path):
    path = _write(tmp_path, _small(tmp_path))
    assert main(["--config", str(path)]) == 0
    out = tmp_path / "out"
    traces = list((out / "traces").glob("*.jsonl"))
    assert len(traces) == 1
    lines = traces[0].read_text().splitlines()
    assert len(lines) == 50
    rec = json.loads(lines[0])
    assert {"t", "eta", "r_bar", "grad_norm", "f_raw", "f_avg", "dist_raw", "dist_avg"} <= set(rec)
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert len(rows) == 1 and list(rows[0]) == list(cli.SUMMARY_COLUMNS)
    assert rows[0]["status"] == "ok" and float(rows[0]["final_metric"]) < 1e-2
    man = json.loads((out / "manifest.json").read_text())
    assert {"config_hash", "rng_algorithm", "seed", "versions", "cells"} <= set(man)
    assert set(man["cells"][0]["seeds"]) == {"data", "init", "oracle"}
    assert (out / "aggregate.csv").exists() and (out / "config.resolved.yaml").exists()


def test_grid_counting(tmp_path):
    tree = _small(tmp_path, replications=2,
                  optimizers=[{"name": "rdog", "eps": [1e-4, 1e-2, 1.0]}, {"name": "rsgd", "lr": [1e-3, 1e-2, 1e-1]}])
    assert main(["--config", str(_write(tmp_path, tree))]) == 0
    assert len(list((tmp_path / "out" / "traces").glob("*.jsonl"))) == 12
    agg = list(csv.DictReader((tmp_path / "out" / "aggregate.csv").open()))
    assert len(agg) == 6 and all(r["n"] == "2" for r in agg)


def test_rerun_identical_summary_and_parallel_agrees(tmp_path):
    tree = _small(tmp_path, replications=2,
                  optimizers=[{"name": "rdog", "eps": [1e-3, 1.0]}, {"name": "nrdog", "eps": 0.1}])
    path = _write(tmp_path, tree)
    assert main(["--config", str(path)]) == 0
    first = _sha(tmp_path / "out" / "summary.csv")
    man1 = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert main(["--config", str(path), "--out", str(tmp_path / "out2"), "--workers", "3"]) == 0
    assert _sha(tmp_path / "out2" / "summary.csv") == first
    man2 = json.loads((tmp_path / "out2" / "manifest.json").read_text())
    assert man1["config_hash"] == man2["config_hash"]
    assert [c["seeds"] for c in man1["cells"]] == [c["seeds"] for c in man2["cells"]]


def test_cli_flags_only(tmp_path):
    rc = main(["--experiment", "rayleigh", "--optimizer", "rdog,rdowg", "--T", "20", "--eps", "0.01",
               "--reps", "1", "--out", str(tmp_path / "o"), "--workers", "1", "--record-every", "10"])
    assert rc == 0
    lines = next((tmp_path / "o" / "traces").glob("rayleigh_rdowg*.jsonl")).read_text().splitlines()
    assert [json.loads(x)["t"] for x in lines] == [10, 20]


def test_exit_codes(tmp_path, capsys):
    assert main([]) == 2
    bad = _write(tmp_path, {"experiment": "rayleigh", "optimizers": [{"name": "rdog", "eps": 0}]})
    assert main(["--config", str(bad)]) == 2
    assert "config error" in capsys.readouterr().err
    blocker = tmp_path / "file"
    blocker.write_text("x")
    ok = _write(tmp_path, _small(tmp_path, out=str(blocker / "sub")), "ok.yaml")
    assert main(["--config", str(ok)]) == 3


CRASHY = '''
import numpy as np
from riemann_free.manifolds import Euclidean

class Crashy:
    def __init__(self, limit=5.0):
        self.manifold = Euclidean(2)
        self.limit = limit

    def initial_point(self, rng):
        return np.ones(2)

    def loss(self, x):
        return float(np.sum(x * x))

    def grad(self, x, rng):
        if np.linalg.norm(x) > self.limit:
            raise RuntimeError("left the trusted region")
        return -x  # ascent: large steps run away

def make(limit=5.0):
    return Crashy(limit)
'''


def test_crash_isolation(tmp_path, monkeypatch):
    (tmp_path / "crashy_mod.py").write_text(CRASHY)
    monkeypatch.syspath_prepend(str(tmp_path))
    tree = {"experiment": "custom", "problem": {"factory": "crashy_mod:make", "kwargs": {"limit": 5.0}},
            "T": 10, "optimizers": [{"name": "rsgd", "lr": [1e-3, 10.0]}], "out": str(tmp_path / "out"),
            "workers": 1}
    assert main(["--config", str(_write(tmp_path, tree))]) == 0
    rows = list(csv.DictReader((tmp_path / "out" / "summary.csv").open()))
    assert [r["status"] for r in rows] == ["ok", "error"]
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert "iteration" in man["cells"][1]["error"]


def test_custom_factory_errors(tmp_path):
    with pytest.raises(ConfigError):
        build_config({"experiment": "custom", "optimizers": ["rdog"]})
    tree = {"experiment": "custom", "problem": {"factory": "no_such_module:x"}, "T": 5,
            "optimizers": ["rdog"], "out": str(tmp_path / "o"), "workers": 1}
    assert main(["--config", str(_write(tmp_path, tree))]) == 2


def test_pca_and_embed_cells(tmp_path):
    pca = {"experiment": "pca", "problem": {"n": 200, "d": 6}, "T": 200,
           "optimizers": [{"name": "rdog", "eps": 1e-3}, {"name": "rsgd", "lr": [1e-3, 1e-1]}],
           "out": str(tmp_path / "pca"), "workers": 1}
    assert main(["--config", str(_write(tmp_path, pca, "p.yaml"))]) == 0
    rows = list(csv.DictReader((tmp_path / "pca" / "summary.csv").open()))
    assert all(r["status"] == "ok" for r in rows)
    emb = {"experiment": "embed", "problem": {"depth": 2, "neg_count": 5, "epochs": 3}, "T": 999,
           "optimizers": [{"name": "rdog", "eps": 1e-6}, {"name": "rsgd", "lr": 0.1}], "burn_in": {"epochs": 1},
           "out": str(tmp_path / "emb"), "workers": 1}
    assert main(["--config", str(_write(tmp_path, emb, "e.yaml"))]) == 0
    rows = list(csv.DictReader((tmp_path / "emb" / "summary.csv").open()))
    assert all(r["status"] == "ok" and 0 <= float(r["final_metric"]) <= 1 for r in rows)
    assert len(rows) == 2
    # epochs fixes the horizon: 10 relations / batch 10 -> one batch per epoch
    lines = next((tmp_path / "emb" / "traces").glob("embed_rdog*.jsonl")).read_text().splitlines()
    assert json.loads(lines[-1])["t"] == 3


# --- verify ----------------------------------------------------------------


def test_verify_passes(capsys):
    assert main(["--verify", "--quick"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["passed"] and not report["failed"]
    names = {r["name"] for r in report["results"]}
    assert {"sphere/log_exp_roundtrip", "poincare/triangle_bound", "gradcheck/embed",
            "euclidean_reduction/rdowg"} <= names


def test_verify_fault_injection(monkeypatch, capsys):
    good = Sphere.log

    def flipped(self, x, y):
        return -good(self, x, y)

    monkeypatch.setattr(Sphere, "log", flipped)
    assert main(["--verify", "--quick"]) == 1
    captured = capsys.readouterr()
    report = json.loads(captured.out)
    assert "sphere/log_exp_roundtrip" in report["failed"]
    assert "FAILED: sphere/log_exp_roundtrip" in captured.err


def test_verify_tolerance_override(capsys):
    assert main(["--verify", "--quick", "--tolerance", "gradcheck=1e-30"]) == 1
    report = json.loads(capsys.readouterr().out)
    assert report["tolerances"]["gradcheck"] == 1e-30
    assert any(n.startswith("gradcheck/") for n in report["failed"])
    assert main(["--verify", "--tolerance", "bogus=1"]) == 2


def test_module_entry_point(tmp_path):
    import subprocess

    r = subprocess.run([sys.executable, "-m", "riemann_free.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "--verify" in r.stdout
