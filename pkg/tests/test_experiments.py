import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from lfi_forge import cli, experiments
from lfi_forge.inference import RoundAbortedError

TINY_BCNN = """
problem = "ma2"
method = "bcnn"
seeds = [0, 1]

[bcnn]
G = 2
N = 64
S = 5

[bcnn.train]
epochs = 2

[mcmc]
steps = 10000

[metrics]
n_eval = 200
"""


def _cfg(text=TINY_BCNN):
    return experiments.parse_config(text)


def test_defaults_follow_problem():
    cfg = experiments.parse_config('problem = "lv"\nmethod = "bcnn"\n[bcnn]\n')
    assert (cfg.bcnn.G, cfg.bcnn.N, cfg.bcnn.B) == (8, 1000, 5)
    cfg = experiments.parse_config('problem = "ma2"\nmethod = "bcnn"\n[bcnn]\n')
    assert (cfg.bcnn.G, cfg.bcnn.N, cfg.bcnn.B) == (6, 3000, 4)
    assert cfg.bcnn.delta.base == 0.05
    assert cfg.mcmc is not None
    np.testing.assert_allclose(cfg.truth(), [0.6, 0.2])
    lv = experiments.parse_config('problem = "lv"\nmethod = "bcnn"\n[bcnn]\n')
    np.testing.assert_allclose(lv.truth(), [0.0, math.log(0.005), 0.0])


@pytest.mark.parametrize("text,where", [
    ('problem = "ma2"\nmethod = "bcnn"\ncolour = 1\n[bcnn]\n', "colour"),
    ('problem = "ma2"\nmethod = "bcnn"\n[bcnn]\nG = 2\nbogus = 3\n', "bcnn.bogus"),
    ('problem = "ma2"\nmethod = "bcnn"\n[bcnn.train]\nepoch = 3\n', "bcnn.train.epoch"),
    ('problem = "ma2"\nmethod = "bcnn"\n[bcnn.delta]\nkind = "linear"\n', "bcnn.delta"),
    ('problem = "ma3"\nmethod = "bcnn"\n[bcnn]\n', "problem"),
    ('problem = "ma2"\nmethod = "abc-smc"\n', "smc"),
    ('problem = "ma2"\nmethod = "bcnn"\nseeds = [1, 1]\n[bcnn]\n', "seeds"),
    ('problem = "ma2"\nmethod = "bcnn"\nseeds = []\n[bcnn]\n', "seeds"),
    ('problem = "lv"\nmethod = "mcmc-ref"\n[mcmc]\n', "method"),
    ('problem = "ma2\n', "malformed"),
])
def test_config_errors_name_the_field(text, where):
    with pytest.raises(experiments.ConfigError) as err:
        experiments.parse_config(text)
    assert where in str(err.value)


def test_config_hash_is_stable():
    assert _cfg().digest() == _cfg().digest()
    assert _cfg().digest() != _cfg(TINY_BCNN.replace("N = 64", "N = 65")).digest()


def test_observation_is_deterministic(tmp_path):
    cfg = _cfg()
    a = experiments.observe(cfg, tmp_path / "a").read_bytes()
    b = experiments.observe(cfg, tmp_path / "b").read_bytes()
    assert a == b
    meta = json.loads((tmp_path / "a" / "observation.json").read_text())
    assert meta["seed"] == cfg.observation_seed
    with pytest.raises(ValueError):
        experiments.generate_observation(cfg.build_problem(), [3.0, 0.0], 0)


def test_lv_observation_shape():
    cfg = experiments.parse_config('problem = "lv"\nmethod = "bcnn"\n[bcnn]\n')
    obs = experiments.generate_observation(cfg.build_problem(), cfg.truth(), 7)
    assert obs.values.shape == (51, 2)
    np.testing.assert_array_equal(obs.values[0], [50, 100])


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    manifest = experiments.run(_cfg(), out)
    return out, manifest


def test_run_writes_round_files(tiny_run):
    out, manifest = tiny_run
    assert manifest["status"] == "ok"
    for seed in ("0", "1"):
        info = manifest["seeds"][seed]
        for f in info["files"]:
            assert (out / f).exists()
        names = {Path(f).name for f in info["files"]}
        assert names == {"round_1.json", "round_1_samples.csv", "round_2.json", "round_2_samples.csv",
                         "metrics.json"}
        # cumulative simulation counts equal g * N
        assert info["sim_counts"] == [64, 128]
    rnd = json.loads((out / "bcnn" / "seed_0" / "round_2.json").read_text())
    assert len(rnd["pairs"]) == 1
    assert len(rnd["pairs"][0]["weights"]) == 16
    assert (out / "manifest.json").exists()


def test_run_metrics_records(tiny_run):
    out, _ = tiny_run
    recs = json.loads((out / "bcnn" / "seed_1" / "metrics.json").read_text())
    assert [r["round"] for r in recs] == [1, 2]
    for r in recs:
        assert set(r) >= {"method", "round", "seed", "emd", "log_mean_emd", "mmd2", "mse", "sim_count"}
        assert r["emd"] > 0 and r["mmd2"] >= 0 and r["mse"] > 0


def test_run_is_byte_reproducible(tiny_run, tmp_path):
    out, _ = tiny_run
    experiments.run(_cfg(), tmp_path, jobs=2)
    for f in sorted((out / "bcnn").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / f.relative_to(out)).read_bytes(), f
    assert (out / "manifest.json").read_bytes() == (tmp_path / "manifest.json").read_bytes()


def test_aggregate_run(tiny_run):
    out, _ = tiny_run
    summary = experiments.aggregate(experiments.discover_manifests(out), out)
    assert ("bcnn", 2, "emd") in summary
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert {r["metric"] for r in rows} == {"emd", "log_mean_emd", "mmd2", "mse"}
    assert all(r["n"] == "2" for r in rows)
    long = list(csv.DictReader((out / "metrics_long.csv").open()))
    assert set(long[0]) == {"method", "round", "seed", "metric", "value"}
    assert len(long) == 2 * 2 * 4
    assert (out / "plotdata" / "emd_bcnn.csv").read_text().startswith("x,y,std\n1,")


def _fake_manifest(tmp_path, name, problem, values):
    seeds = {}
    for seed, v in enumerate(values):
        p = tmp_path / f"{name}_{seed}.json"
        p.write_text(json.dumps([{"method": "bcnn", "round": 1, "seed": seed, "emd": v, "log_mean_emd": None,
                                  "mmd2": None, "mse": v, "sim_count": 10}]))
        seeds[str(seed)] = {"status": "ok", "files": [], "sim_counts": [10], "metrics": p.name}
    return {"problem": problem, "method": "bcnn", "seeds": seeds, "root": str(tmp_path)}


def test_aggregate_two_seed_arithmetic(tmp_path):
    summary = experiments.aggregate([_fake_manifest(tmp_path, "m", "ma2", [2.0, 4.0])], tmp_path)
    mean, std, n = summary[("bcnn", 1, "mse")]
    assert mean == 3.0 and std == pytest.approx(math.sqrt(2)) and n == 2


def test_aggregate_one_seed_std_zero(tmp_path):
    summary = experiments.aggregate([_fake_manifest(tmp_path, "m", "ma2", [2.5])], tmp_path)
    assert summary[("bcnn", 1, "mse")] == (2.5, 0.0, 1)


def test_aggregate_rejects_mixed_problems(tmp_path):
    with pytest.raises(ValueError):
        experiments.aggregate([_fake_manifest(tmp_path, "a", "ma2", [1.0]),
                               _fake_manifest(tmp_path, "b", "lv", [1.0])], tmp_path)


def test_partial_failure_marks_manifest(tmp_path, monkeypatch):
    def broken(cfg, on_round=None, **kw):
        raise RoundAbortedError("round 1 failed: simulated", [])
    monkeypatch.setattr(experiments, "run_inference", broken)
    text = TINY_BCNN.replace("seeds = [0, 1]", "seeds = [0]")
    (tmp_path / "c.toml").write_text(text)
    manifest = experiments.run(_cfg(text), tmp_path)
    assert manifest["status"] == "partial"
    assert manifest["seeds"]["0"]["status"].startswith("failed")
    assert cli.main(["run", "--config", str(tmp_path / "c.toml"), "--out", str(tmp_path)]) == 1


def test_abc_smc_run(tmp_path):
    text = """
problem = "ma2"
method = "abc-smc"
seeds = [0]
[smc]
n_particles = 50
rounds = 2
[mcmc]
steps = 10000
[metrics]
n_eval = 200
"""
    manifest = experiments.run(experiments.parse_config(text), tmp_path)
    info = manifest["seeds"]["0"]
    assert manifest["status"] == "ok"
    assert len(info["sim_counts"]) == 2 and info["sim_counts"][0] < info["sim_counts"][1]
    header = (tmp_path / "abc-smc" / "seed_0" / "round_2_samples.csv").read_text().splitlines()[0]
    assert header == "theta0,theta1,weight,distance"


def test_mcmc_reference_run(tmp_path):
    text = 'problem = "ma2"\nmethod = "mcmc-ref"\nseeds = [4]\n[mcmc]\nsteps = 10000\n'
    manifest = experiments.run(experiments.parse_config(text), tmp_path)
    rec = json.loads((tmp_path / manifest["seeds"]["4"]["metrics"]).read_text())[0]
    assert 0 < rec["acceptance_rate"] < 1
    assert rec["sim_count"] == 0


def test_cli_subcommands(tmp_path, capsys):
    cfgp = tmp_path / "smc.toml"
    cfgp.write_text('problem = "ma2"\nmethod = "abc-smc"\nseeds = [0, 1]\n'
                    '[smc]\nn_particles = 30\nrounds = 2\n[mcmc]\nsteps = 10000\n[metrics]\nn_eval = 100\n')
    out = tmp_path / "out"
    assert cli.main(["observe", "--config", str(cfgp), "--out", str(out)]) == 0
    assert (out / "observation.csv").exists()
    assert cli.main(["run", "--config", str(cfgp), "--out", str(out), "--jobs", "2"]) == 0
    assert cli.main(["aggregate", "--out", str(out)]) == 0
    assert (out / "summary.csv").exists()
    assert (out / "plotdata" / "mse_abc-smc.csv").exists()
    capsys.readouterr()


def test_cli_reports_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text('problem = "ma2"\nmethod = "bcnn"\n[bcnn]\nGG = 1\n')
    assert cli.main(["run", "--config", str(bad), "--out", str(tmp_path)]) == 2
    assert "bcnn.GG" in capsys.readouterr().err
    assert cli.main(["run"]) == 2
    assert cli.main(["aggregate", "--out", str(tmp_path / "empty")]) == 2
    assert cli.main(["run", "--config", str(bad), "--jobs", "0"]) == 2


def test_cli_oracle(capsys):
    assert cli.main(["oracle"]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 10
    assert "[FAIL]" not in out


@pytest.mark.parametrize("path", sorted((Path(__file__).resolve().parents[1] / "configs").glob("*.toml")),
                         ids=lambda p: p.name)
def test_shipped_configs_parse(path):
    cfg = experiments.load_config(path)
    assert cfg.seeds
