import csv
import json

import numpy as np
import pytest

from edgeflow.checkpoint import save_checkpoint
from edgeflow.cli import main
from edgeflow.config import TrainConfig
from edgeflow.trainer import build_state

CONFIG = """
[graph]
n = 4
rho = 0.6666666666666666
m = {m}

[policy]
h_g = 8
h_c = 8
hidden = 8

[decoder]
d_dim = 4
s_c = 4

[diffusion]
t_steps = 10
hidden = 8
freeze_denoiser = true

[reward]
mode = "analytic"
center_sets = [[1, 2], [5, 6]]
widths = [0.5]

[train]
beta = 0.0
max_steps = {steps}
seed = 0
log_every = 0
checkpoint_every = 0

[eval]
samples = 200
diversity_calls = 4
enumeration_cap = {cap}
tv_threshold = {tv}
residual_threshold = 100.0
"""


def write_config(tmp_path, m=4, steps=30, cap=200000, tv=0.99, name="c.toml"):
    path = tmp_path / name
    path.write_text(CONFIG.format(m=m, steps=steps, cap=cap, tv=tv))
    return path


def metrics(out):
    with open(out / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert json.loads((out / "metrics.json").read_text()) == [
        {**r, "seed": int(r["seed"])} for r in rows
    ]
    return {r["metric"]: r["value"] for r in rows}


@pytest.fixture
def trained(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(write_config(tmp_path)), "--out-dir", str(out)]) == 0
    return out


def test_train_writes_artifacts(trained):
    assert (trained / "checkpoint.bin").exists()
    assert (trained / "train_log.csv").read_text().count("\n") == 31
    assert set(metrics(trained)) == {"l_gfn", "l_ldm", "l_total"}


def test_train_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    for run in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--out-dir", str(tmp_path / run)]) == 0
    for name in ("checkpoint.bin", "metrics.csv", "metrics.json", "train_log.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_sample(trained, tmp_path):
    ckpt = str(trained / "checkpoint.bin")
    for run in ("s1", "s2"):
        assert main(["sample", "--checkpoint", ckpt, "--seed", "5", "--out-dir", str(tmp_path / run)]) == 0
    a = (tmp_path / "s1" / "samples.csv").read_text()
    assert a == (tmp_path / "s2" / "samples.csv").read_text()
    assert len(a.splitlines()) == 5
    assert main(["sample", "--checkpoint", ckpt, "--samples", "1", "--out-dir", str(tmp_path / "one")]) == 0
    assert len((tmp_path / "one" / "samples.csv").read_text().splitlines()) == 2


def test_sample_illegal_extra_edges(trained, tmp_path):
    ckpt = str(trained / "checkpoint.bin")
    assert main(["sample", "--checkpoint", ckpt, "--extra-edges", "9", "--out-dir", str(tmp_path)]) == 2
    assert main(["sample", "--checkpoint", ckpt, "--extra-edges", "a,b", "--out-dir", str(tmp_path)]) == 2
    # every trajectory holds two of six edges; repeating all six must collide
    assert main(["sample", "--checkpoint", ckpt, "--extra-edges", "1,2,3,4,5,6", "--out-dir", str(tmp_path)]) == 2


def test_eval_suites(trained, tmp_path):
    out = tmp_path / "ev"
    assert main(["eval", "--checkpoint", str(trained / "checkpoint.bin"), "--out-dir", str(out)]) == 0
    m = metrics(out)
    assert {"tv_distance", "db_mean_square", "vendi_mean", "mode_coverage_mean"} <= set(m)
    assert 0.0 <= float(m["tv_distance"]) <= 1.0


def test_eval_acceptance_failure(tmp_path):
    out = tmp_path / "strict"
    assert main(["train", "--config", str(write_config(tmp_path, tv=1e-9)), "--out-dir", str(out)]) == 0
    code = main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--suite", "proportionality",
                 "--out-dir", str(out)])
    assert code == 4


def test_eval_skip_marker(tmp_path):
    out = tmp_path / "cap"
    assert main(["train", "--config", str(write_config(tmp_path, cap=5)), "--out-dir", str(out)]) == 0
    assert main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--suite", "residuals",
                 "--out-dir", str(out)]) == 0
    assert metrics(out)["db_mean_square"] == "skipped"
    assert main(["enumerate-check", "--checkpoint", str(out / "checkpoint.bin"), "--out-dir", str(out)]) == 0
    assert metrics(out)["target_sum"] == "skipped"


def test_diversity_single_trajectory_reports_one(tmp_path):
    out = tmp_path / "m1"
    assert main(["train", "--config", str(write_config(tmp_path, m=1, steps=2)), "--out-dir", str(out)]) == 0
    assert main(["eval", "--checkpoint", str(out / "checkpoint.bin"), "--suite", "diversity",
                 "--out-dir", str(out)]) == 0
    assert float(metrics(out)["vendi_mean"]) == 1.0


def test_enumerate_check(tmp_path, capsys):
    out = tmp_path / "en"
    assert main(["enumerate-check", "--config", str(write_config(tmp_path)), "--out-dir", str(out)]) == 0
    m = metrics(out)
    assert m["terminal_sets"] == "15" and abs(float(m["target_sum"]) - 1.0) <= 1e-12
    assert len([l for l in capsys.readouterr().out.splitlines() if l.strip()]) == 15


def test_grad_check_command(tmp_path):
    out = tmp_path / "gc"
    cfg = tmp_path / "g.toml"
    cfg.write_text("[graph]\nn = 4\nrho = 0.5\nm = 2\n[policy]\nh_g = 3\nh_c = 3\nhidden = 3\n"
                   "[decoder]\nd_dim = 3\ns_c = 3\n[diffusion]\nt_steps = 5\nhidden = 3\n")
    assert main(["grad-check", "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert float(metrics(out)["grad_check_max_rel_err"]) < 1e-4


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[graph]\nn = 1\nrho = 0.5\n")
    assert main(["train", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    bad.write_text("[graph]\nn = 4\nrho = 0.5\nwidth = 3\n")
    assert main(["train", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert main(["train", "--config", str(tmp_path / "absent.toml"), "--out-dir", str(tmp_path)]) == 2
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["eval", "--checkpoint", str(tmp_path / "junk.bin"), "--out-dir", str(tmp_path)]) == 2


def test_numeric_failure_exit_code(tmp_path):
    cfg = TrainConfig.from_dict({"graph": {"n": 4, "rho": 0.5, "m": 2},
                                 "policy": {"h_g": 3, "h_c": 3, "hidden": 3}})
    state = build_state(cfg)
    state.policy.forward_head.layers[-1].bias.data[:] = np.nan
    save_checkpoint(state, tmp_path / "nan.bin")
    assert main(["sample", "--checkpoint", str(tmp_path / "nan.bin"), "--out-dir", str(tmp_path)]) == 3
