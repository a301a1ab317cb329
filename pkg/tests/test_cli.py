import json
import math

import numpy as np
import pytest

from resolvent_pnp.cli import main
from resolvent_pnp.inverse import load_problem
from resolvent_pnp.io import load_checkpoint, load_ntf, read_csv, save_checkpoint
from resolvent_pnp.net import Network, build_conv_network


@pytest.fixture
def smoke_config(tmp_path):
    cfg = tmp_path / "smoke.cfg"
    cfg.write_text("# tiny smoke run\nlam=0\niterations=50\nbatch_size=2\ndepth=3\nwidth=4\n"
                   "data=toy\ndata_count=8\ndata_size=16\n")
    return cfg


@pytest.fixture
def zero_net_path(tmp_path):
    net = build_conv_network(depth=3, width=4, rng=0)
    net = Network([l.replace(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers], True)
    path = tmp_path / "zero.nnc"
    save_checkpoint(path, net)
    return path


def test_train_smoke_and_determinism(tmp_path, smoke_config):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        assert main(["train", "--config", str(smoke_config), "--seed", "3", "--out", str(out)]) == 0
    a, b = ((o / "model.nnc").read_bytes() for o in outs)
    assert a == b
    rows = read_csv(outs[0] / "train_log.csv")
    assert len(rows) == 50
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["seed"] == 3
    assert manifest["input_hash"] == json.loads((outs[1] / "manifest.json").read_text())["input_hash"]


def test_train_usage_errors(tmp_path):
    assert main(["train", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("lam=-1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("no_such_key=1\n")
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["train", "--out", str(tmp_path / "o")]) == 2


def test_train_nonfinite_exits_3(tmp_path):
    cfg = tmp_path / "hot.cfg"
    cfg.write_text("lam=0\niterations=20\nbatch_size=2\ndepth=2\nwidth=2\nlr=1e300\nclip_norm=0\n"
                   "data_count=2\ndata_size=8\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_certify_zero_residual_net_is_accepted(tmp_path, zero_net_path):
    out = tmp_path / "cert"
    assert main(["certify", str(zero_net_path), "--probes", "4", "--size", "8", "--out", str(out)]) == 0
    rows = read_csv(out / "certify.csv")
    assert rows[-1]["probe"] == "max"
    assert float(rows[-1]["sigma2"]) == pytest.approx(1.0, abs=1e-12)


def test_certify_expansive_net_fails(tmp_path):
    net = build_conv_network(depth=3, width=4, rng=1).scaled(10.0)
    path = tmp_path / "hot.nnc"
    save_checkpoint(path, net)
    assert main(["certify", str(path), "--probes", "3", "--size", "8", "--out", str(tmp_path / "c")]) == 1


def test_certify_usage_errors(tmp_path, zero_net_path):
    assert main(["certify", str(zero_net_path), "--probes", "0", "--out", str(tmp_path / "c")]) == 2
    junk = tmp_path / "junk.nnc"
    junk.write_bytes(b"nope")
    assert main(["certify", str(junk), "--out", str(tmp_path / "c")]) == 2
    assert main(["certify", str(tmp_path / "absent.nnc"), "--out", str(tmp_path / "c")]) == 2


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["deblur", "x", "--baseline", "bm3d"])
    assert exc.value.code == 2


def test_make_problem_and_delta_tv_identity(tmp_path):
    prob_dir = tmp_path / "delta"
    assert main(["make-problem", "--kernel", "delta", "--noise", "0", "--size", "16", "--out", str(prob_dir)]) == 0
    prob = load_problem(prob_dir)
    assert np.array_equal(prob.observation, prob.truth)
    out = tmp_path / "rec"
    code = main(["deblur", str(prob_dir), "--baseline", "tv", "--lambda", "0", "--iters", "5", "--out", str(out)])
    assert code == 0
    assert np.array_equal(load_ntf(out / "reconstruction.ntf"), prob.observation)
    rows = {r["image"]: r for r in read_csv(out / "metrics.csv")}
    assert rows["reconstruction"]["psnr"] == "inf"
    assert math.isinf(float(rows["reconstruction"]["psnr"]))
    assert (out / "reconstruction.pgm").read_bytes().startswith(b"P5")
    assert len(read_csv(out / "report.csv")) == 5


def test_deblur_step_bound(tmp_path):
    prob_dir = tmp_path / "p"
    main(["make-problem", "--kernel", "gaussian", "--size", "16", "--out", str(prob_dir)])
    for gamma in ("3", "2", "0", "-1"):
        assert main(["deblur", str(prob_dir), "--baseline", "l1", "--gamma", gamma, "--out", str(tmp_path / "o")]) == 2
    assert main(["deblur", str(prob_dir), "--out", str(tmp_path / "o")]) == 2  # pnp without checkpoint
    assert main(["deblur", str(tmp_path / "nowhere"), "--baseline", "l1", "--out", str(tmp_path / "o")]) == 2
    assert main(["make-problem", "--kernel", "blobby", "--out", str(tmp_path / "q")]) == 2


def test_deblur_expansive_net_diverges(tmp_path):
    prob_dir = tmp_path / "p"
    main(["make-problem", "--kernel", "gaussian", "--size", "16", "--out", str(prob_dir)])
    path = tmp_path / "hot.nnc"
    save_checkpoint(path, build_conv_network(depth=3, width=4, rng=2).scaled(10.0))
    code = main(["deblur", str(prob_dir), "--checkpoint", str(path), "--iters", "200", "--out", str(tmp_path / "o")])
    assert code == 3


def test_deblur_and_bench_are_reproducible(tmp_path, zero_net_path):
    prob_dir = tmp_path / "p"
    main(["make-problem", "--kernel", "motion", "--size", "16", "--seed", "5", "--out", str(prob_dir)])
    for name in ("a", "b"):
        args = ["deblur", str(prob_dir), "--baseline", "l1", "--lambda", "0.01", "--iters", "20", "--out", str(tmp_path / name)]
        assert main(args) == 0
    assert (tmp_path / "a" / "reconstruction.ntf").read_bytes() == (tmp_path / "b" / "reconstruction.ntf").read_bytes()
    out = tmp_path / "bench"
    args = ["bench", "--checkpoint", str(zero_net_path), "--baseline", "pnp,tv", "--iters", "10", "--count", "2",
            "--size", "16", "--out", str(out)]
    assert main(args) == 0
    table = read_csv(out / "table.csv")
    assert [r["method"] for r in table] == ["observation", "pnp", "tv"]
    assert len(read_csv(out / "instances.csv")) == 4 * 3 * 2
    assert main(["bench", "--baseline", "pnp", "--out", str(out)]) == 2
    assert main(["bench", "--baseline", "l1,nlm", "--out", str(out)]) == 2


def test_demo_approx_identity_target(tmp_path):
    out = tmp_path / "demo"
    assert main(["demo-approx", "--target", "identity", "--seed", "0", "--out", str(out)]) == 0
    curve = read_csv(out / "sup_error.csv")
    assert float(curve[-1]["sup_error"]) < 1e-3
    cert = read_csv(out / "certification.csv")[0]
    assert float(cert["max_violation"]) <= 1e-6
    net = load_checkpoint(out / "model.nnc")
    assert net.kind == "dense"


def test_demo_approx_usage_error(tmp_path):
    assert main(["demo-approx", "--dim", "7", "--out", str(tmp_path / "d")]) == 2
