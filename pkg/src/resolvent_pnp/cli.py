"""Command-line driver: ``resolvent-pnp <command> [options]``.

Commands
    train         train a denoiser from a key=value config file
    certify       Jacobian-norm certification of a checkpoint on noisy probes
    deblur        forward-backward deblurring of a stored problem
    demo-approx   fit a small net to a scalar prox under the penalty
    bench         mean-PSNR table over standard kernels and methods
    make-problem  write a synthetic blur problem directory

Exit codes: 0 success or certified, 1 certification failed, 2 usage or
input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .approx import ApproxConfig, certify_fit, fit_resolvent, make_target
from .data import load_image_dir, make_toy_images
from .inverse import load_problem, make_blur_problem, recommend_params, save_problem
from .io import FormatError, load_checkpoint, load_keyvalue, save_checkpoint, save_ntf, save_pnm, write_csv
from .metrics import metrics, write_table
from .mmo import write_cert_reports
from .net import image_denoiser, jacobian_spectral_norms
from .solve import SolveConfig, baseline_resolvent, fb_solve
from .tensor import STANDARD_KERNELS, make_rng, split_rng
from .train import TrainConfig, TrainingError, train

EXIT_OK, EXIT_UNCERTIFIED, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# floating-point slack on the sigma^2 <= 1 verdict
CERT_SLACK = 1e-9

DATA_KEYS = ("data", "data_count", "data_size", "data_seed")

log = logging.getLogger("resolvent_pnp")


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    argv: list
    seed: int = None
    config_path: str = None
    input_hash: str = ""
    out_dir: str = ""
    started: float = 0.0
    finished: float = 0.0
    exit_code: int = None
    outputs: list = field(default_factory=list)
    version: str = __version__

    def write(self, out):
        Path(out, "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def content_hash(paths, params):
    """sha256 over input file contents (sorted by name) and the parameters."""
    h = hashlib.sha256()
    files = []
    for p in paths:
        p = Path(p)
        files.extend(sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p])
    for f in files:
        h.update(f.name.encode())
        h.update(f.read_bytes())
    h.update(json.dumps(params, sort_keys=True, default=str).encode())
    return h.hexdigest()


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_net(path):
    try:
        return load_checkpoint(path)
    except (OSError, FormatError, ValueError) as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _train_setup(args):
    if not args.config:
        raise UsageError("train needs --config")
    try:
        raw = load_keyvalue(args.config)
    except OSError as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    except ValueError as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from exc
    data = {k: raw.pop(k) for k in DATA_KEYS if k in raw}
    if args.seed is not None:
        raw["seed"] = str(args.seed)
    if args.lam is not None:
        raw["lam"] = str(args.lam)
    if args.iters is not None:
        raw["iterations"] = str(args.iters)
    if args.sigma is not None:
        raw["sigma"] = str(args.sigma)
    try:
        cfg = TrainConfig.from_mapping(raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config {args.config}: {exc}") from exc
    source = data.get("data", "toy")
    try:
        if source == "toy":
            images = make_toy_images(int(data.get("data_count", 64)), int(data.get("data_size", 32)),
                                     int(data.get("data_seed", 0)))
        else:
            folder = Path(source)
            if not folder.is_absolute():
                folder = Path(args.config).parent / folder
            images = load_image_dir(folder)
    except (OSError, FormatError, ValueError) as exc:
        raise UsageError(f"cannot load dataset {source!r}: {exc}") from exc
    return cfg, images, data


def cmd_train(args, manifest):
    cfg, images, data = _train_setup(args)
    out = _out_dir(args.out)
    manifest.seed = cfg.seed
    manifest.input_hash = content_hash([args.config], {**cfg.to_mapping(), **data})
    net, tlog = train(images, cfg)
    save_checkpoint(out / "model.nnc", net)
    tlog.to_csv(out / "train_log.csv")
    manifest.outputs += ["model.nnc", "train_log.csv"]
    if tlog.loss:
        print(f"trained {len(tlog.loss)} steps; final loss {tlog.loss[-1]:.6g}")
    else:
        print("no training steps configured")
    return EXIT_OK


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def certify_network(net, probes, iters, seed):
    """``sigma_hat`` per probe (power iteration on the reflected map's Jacobian)."""
    sig, _, _ = jacobian_spectral_norms(net, probes, iters, split_rng(seed, 17))
    return sig


def cmd_certify(args, manifest):
    if args.probes < 1:
        raise UsageError("need at least one probe")
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    net = _load_net(args.checkpoint)
    seed = 0 if args.seed is None else args.seed
    noise = 0.01 if args.sigma is None else args.sigma
    manifest.seed = seed
    manifest.input_hash = content_hash([args.checkpoint], vars(args))
    if net.layers[0].kind != "conv":
        raise UsageError("certify expects a convolutional image denoiser")
    clean = make_toy_images(args.probes, args.size, seed)
    if net.channels_in != 1:
        clean = np.repeat(clean, net.channels_in, axis=1)
    probes = clean + noise * make_rng(split_rng(seed, 3)).standard_normal(clean.shape)
    sig = certify_network(net, probes, args.iters, seed)
    if not np.all(np.isfinite(sig)):
        print("non-finite Jacobian norm estimate", file=sys.stderr)
        return EXIT_NUMERIC
    s2 = sig**2
    out = _out_dir(args.out)
    rows = [(i, float(a), float(b)) for i, (a, b) in enumerate(zip(sig, s2))]
    rows.append(("max", float(sig.max()), float(s2.max())))
    write_csv(out / "certify.csv", ["probe", "sigma_hat", "sigma2"], rows)
    manifest.outputs.append("certify.csv")
    ok = s2.max() <= 1.0 + CERT_SLACK
    print(f"max sigma^2 = {s2.max():.6f} over {args.probes} probes: {'certified' if ok else 'NOT certified'}")
    return EXIT_OK if ok else EXIT_UNCERTIFIED


# ---------------------------------------------------------------------------
# deblur
# ---------------------------------------------------------------------------


def run_deblur(prob, method, gamma, iters, lam=0.0, net=None, tol=None):
    """Forward-backward on ``prob`` with a learned or classical resolvent."""
    mu = prob.mu
    if method == "pnp":
        J = image_denoiser(net)
    else:
        J = baseline_resolvent(method, prob.observation.shape, gamma, lam)
    H, z = prob.H, prob.observation
    cfg = SolveConfig(gamma, iters, tol, mu=mu)
    return fb_solve(lambda x: H.adjoint(H.apply(x) - z), J, cfg, z)


def cmd_deblur(args, manifest):
    try:
        prob = load_problem(args.problem)
    except (OSError, FormatError, KeyError, ValueError) as exc:
        raise UsageError(f"cannot load problem {args.problem}: {exc}") from exc
    method = args.baseline
    net = None
    if method == "pnp":
        if not args.checkpoint:
            raise UsageError("baseline 'pnp' needs --checkpoint")
        net = _load_net(args.checkpoint)
    if args.iters < 1:
        raise UsageError("--iters must be >= 1")
    mu = prob.mu
    gamma_rec, sigma_rec = recommend_params(prob)
    gamma = gamma_rec if args.gamma is None else args.gamma
    if not gamma > 0 or gamma >= 2.0 / mu:
        raise UsageError(f"step {gamma} outside (0, 2/mu) = (0, {2.0 / mu:.6g})")
    lam = 0.0 if args.lam is None else args.lam
    if lam < 0:
        raise UsageError("--lambda must be >= 0")
    sigma = sigma_rec if args.sigma is None else args.sigma
    manifest.seed = prob.seed
    inputs = [args.problem] + ([args.checkpoint] if args.checkpoint else [])
    manifest.input_hash = content_hash(inputs, {"gamma": gamma, "lam": lam, "iters": args.iters, "method": method})
    report = run_deblur(prob, method, gamma, args.iters, lam, net)
    out = _out_dir(args.out)
    report.save(out / "report.csv", out / "reconstruction.ntf")
    save_pnm(out / "reconstruction.pgm", report.x)
    manifest.outputs += ["report.csv", "reconstruction.ntf", "reconstruction.pgm"]
    print(f"{method}: gamma={gamma:.6g} sigma={sigma:.6g} status={report.status} iterations={report.iterations}")
    if prob.truth is not None:
        mo, mx = metrics(prob.observation, prob.truth), metrics(report.x, prob.truth)
        write_csv(out / "metrics.csv", ["image", "psnr", "ssim"],
                  [("observation", mo.psnr, mo.ssim), ("reconstruction", mx.psnr, mx.ssim)])
        manifest.outputs.append("metrics.csv")
        print(f"PSNR observation {mo.psnr:.3f} dB, reconstruction {mx.psnr:.3f} dB")
    if report.status in ("diverged", "nonfinite"):
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------------------
# demo-approx
# ---------------------------------------------------------------------------


def cmd_demo_approx(args, manifest):
    try:
        target = make_target(args.target, tau=args.tau, lo=-args.bound, hi=args.bound)
        cfg = ApproxConfig(
            dim=args.dim,
            iterations=args.iters if args.iters is not None else ApproxConfig.iterations,
            lam=args.lam if args.lam is not None else ApproxConfig.lam,
            seed=0 if args.seed is None else args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    manifest.seed = cfg.seed
    manifest.input_hash = content_hash([], asdict(cfg) | {"target": args.target, "tau": args.tau})
    result = fit_resolvent(target, cfg)
    report = certify_fit(result, box=cfg.box, rng=split_rng(cfg.seed, 9))
    out = _out_dir(args.out)
    result.to_csv(out / "sup_error.csv")
    write_cert_reports(out / "certification.csv", [report])
    save_checkpoint(out / "model.nnc", result.net)
    manifest.outputs += ["sup_error.csv", "certification.csv", "model.nnc"]
    print(f"sup error {result.final_error:.6g} on [-{cfg.box}, {cfg.box}]^{cfg.dim}; "
          f"max violation {report.max_violation:.3g} ({'pass' if report.passed else 'FAIL'})")
    if not np.isfinite(result.final_error):
        return EXIT_NUMERIC
    return EXIT_OK if report.passed else EXIT_UNCERTIFIED


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

BENCH_REG = {"l1": 0.02, "tv": 0.02}


def cmd_bench(args, manifest):
    methods = [m.strip() for m in (args.baseline or "l1,tv,pnp").split(",") if m.strip()]
    for m in methods:
        if m not in ("pnp", "l1", "tv"):
            raise UsageError(f"unknown method {m!r}")
    net = None
    if "pnp" in methods:
        if not args.checkpoint:
            raise UsageError("method 'pnp' needs --checkpoint")
        net = _load_net(args.checkpoint)
    if args.count < 1 or args.iters < 1:
        raise UsageError("--count and --iters must be >= 1")
    seed = 0 if args.seed is None else args.seed
    manifest.seed = seed
    manifest.input_hash = content_hash([args.checkpoint] if args.checkpoint else [], vars(args))
    truths = make_toy_images(args.count, args.size, split_rng(seed, 5))[:, 0]
    kernels = list(STANDARD_KERNELS)
    cells, rows = {}, []
    for kname in kernels:
        per = {m: [] for m in ["observation"] + methods}
        for i, x in enumerate(truths):
            prob = make_blur_problem(STANDARD_KERNELS[kname](), x, args.noise, split_rng(seed, 6, i))
            gamma = recommend_params(prob)[0] if args.gamma is None else args.gamma
            per["observation"].append(metrics(prob.observation, x))
            for m in methods:
                lam = BENCH_REG.get(m, 0.0) if args.lam is None else args.lam
                rep = run_deblur(prob, m, gamma, args.iters, lam, net)
                per[m].append(metrics(rep.x, x))
        for m, vals in per.items():
            cells[(m, kname)] = float(np.mean([v.psnr for v in vals]))
            rows += [(kname, m, i, v.psnr, v.ssim) for i, v in enumerate(vals)]
    out = _out_dir(args.out)
    write_table(out / "table.csv", cells, ["observation"] + methods, kernels)
    write_csv(out / "instances.csv", ["kernel", "method", "instance", "psnr", "ssim"], rows)
    manifest.outputs += ["table.csv", "instances.csv"]
    width = max(len(k) for k in kernels)
    print("method".ljust(12) + "  ".join(k.rjust(width) for k in kernels))
    for m in ["observation"] + methods:
        print(m.ljust(12) + "  ".join(f"{cells[(m, k)]:{width}.2f}" for k in kernels))
    return EXIT_OK


# ---------------------------------------------------------------------------
# make-problem
# ---------------------------------------------------------------------------


def cmd_make_problem(args, manifest):
    if args.kernel not in STANDARD_KERNELS and args.kernel != "delta":
        raise UsageError(f"unknown kernel {args.kernel!r}; choose from delta, {', '.join(STANDARD_KERNELS)}")
    if args.noise < 0:
        raise UsageError("--noise must be >= 0")
    seed = 0 if args.seed is None else args.seed
    manifest.seed = seed
    manifest.input_hash = content_hash([], vars(args))
    truth = make_toy_images(1, args.size, split_rng(seed, 4))[0, 0]
    kernel = np.ones((1, 1)) if args.kernel == "delta" else STANDARD_KERNELS[args.kernel]()
    prob = make_blur_problem(kernel, truth, args.noise, rng=seed)
    out = _out_dir(args.out)
    save_problem(out, prob)
    manifest.outputs += ["kernel.ntf", "observation.ntf", "truth.ntf", "meta"]
    print(f"wrote {args.kernel} problem ({args.size}x{args.size}, noise {args.noise}) to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="resolvent-pnp", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out):
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=out)
        return sp

    sp = common(sub.add_parser("train", help="train a denoiser"), "run-train")
    sp.add_argument("--config", required=False)
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--iters", type=int, default=None)
    sp.add_argument("--sigma", type=float, default=None)

    sp = common(sub.add_parser("certify", help="certify a checkpoint"), "run-certify")
    sp.add_argument("checkpoint")
    sp.add_argument("--probes", type=int, default=100)
    sp.add_argument("--iters", type=int, default=50)
    sp.add_argument("--sigma", type=float, default=None, help="probe noise level (default 0.01)")
    sp.add_argument("--size", type=int, default=32)

    sp = common(sub.add_parser("deblur", help="deblur a stored problem"), "run-deblur")
    sp.add_argument("problem")
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline", choices=("pnp", "l1", "tv"), default="pnp")
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--sigma", type=float, default=None, help="denoiser noise level, recorded only")
    sp.add_argument("--lambda", dest="lam", type=float, default=None, help="regularization weight for l1/tv")
    sp.add_argument("--iters", type=int, default=1000)

    sp = common(sub.add_parser("demo-approx", help="approximate a scalar prox"), "run-demo-approx")
    sp.add_argument("--target", default="soft-threshold", choices=("soft-threshold", "interval", "identity"))
    sp.add_argument("--tau", type=float, default=0.5)
    sp.add_argument("--bound", type=float, default=1.0, help="interval half-width")
    sp.add_argument("--dim", type=int, default=1)
    sp.add_argument("--iters", type=int, default=None)
    sp.add_argument("--lambda", dest="lam", type=float, default=None)

    sp = common(sub.add_parser("bench", help="PSNR table over kernels"), "run-bench")
    sp.add_argument("--checkpoint")
    sp.add_argument("--baseline", default=None, help="comma-separated methods from pnp,l1,tv")
    sp.add_argument("--gamma", type=float, default=None)
    sp.add_argument("--lambda", dest="lam", type=float, default=None)
    sp.add_argument("--iters", type=int, default=1000)
    sp.add_argument("--count", type=int, default=5)
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--noise", type=float, default=0.01)

    sp = common(sub.add_parser("make-problem", help="write a synthetic blur problem"), "problem")
    sp.add_argument("--kernel", default="gaussian")
    sp.add_argument("--noise", type=float, default=0.01)
    sp.add_argument("--size", type=int, default=32)
    return p


COMMANDS = {
    "train": cmd_train,
    "certify": cmd_certify,
    "deblur": cmd_deblur,
    "demo-approx": cmd_demo_approx,
    "bench": cmd_bench,
    "make-problem": cmd_make_problem,
}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    manifest = RunManifest(args.command, argv, config_path=getattr(args, "config", None),
                           out_dir=str(Path(args.out).resolve()), started=time.time())
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            code = COMMANDS[args.command](args, manifest)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    manifest.finished = time.time()
    manifest.exit_code = code
    if Path(args.out).is_dir():
        manifest.write(args.out)
    return code


if __name__ == "__main__":
    sys.exit(main())
