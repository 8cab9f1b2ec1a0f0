"""``g2hf`` command line: forward | selftest | gradcheck | train-toy | eval.

Exit codes
----------
0  success
1  a check or gradient comparison failed
2  malformed or unusable image (eval: every file unmatched)
3  weight-file error (bad magic, version, truncation, name or shape mismatch)
4  input violates a divisibility precondition

Diagnostics go to stderr as a single line; CSV output goes to stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checks, net, objective, train
from .netpbm import ImageFormatError, read_pnm, write_pgm
from .rng import Rng

EXIT_OK, EXIT_CHECK, EXIT_IMAGE, EXIT_WEIGHTS, EXIT_PRECONDITION = 0, 1, 2, 3, 4


class CommandError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _fail(code: int, message: str):
    raise CommandError(code, message)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"seed {text} is not an unsigned 64-bit integer")
    return value


def _config(args, size: int) -> net.NetConfig:
    base = net.NetConfig.toy() if args.toy else net.NetConfig()
    return base.with_size(size)


def _read(path, channels: int, what: str) -> np.ndarray:
    try:
        img = read_pnm(path)
    except (OSError, ImageFormatError) as e:
        _fail(EXIT_IMAGE, f"{what}: {e}")
    if img.shape[0] != channels:
        kind = "PPM (P6)" if channels == 3 else "PGM (P5)"
        _fail(EXIT_IMAGE, f"{what}: {path} must be a {kind} image")
    return img


def _check(cfg: net.NetConfig, h: int, w: int) -> None:
    try:
        cfg.check_input(h, w)
    except net.PreconditionError as e:
        _fail(EXIT_PRECONDITION, str(e))


def _weights(args, cfg: net.NetConfig) -> net.ModelWeights:
    if args.weights is None:
        return net.init_weights(Rng(args.seed), cfg)
    try:
        return net.bind_weights(net.load_weights(args.weights), cfg)
    except net.WeightFileError as e:
        _fail(EXIT_WEIGHTS, f"weight file [{e.code}] {e}")
    except OSError as e:
        _fail(EXIT_WEIGHTS, f"weights: {e}")


# ---------------------------------------------------------------- commands

def cmd_forward(args) -> int:
    image = _read(args.image, 3, "image")
    _, h, w = image.shape
    cfg = _config(args, h)
    _check(cfg, h, w)
    weights = _weights(args, cfg)
    out = net.forward(image, weights, cfg)
    write_pgm(args.out, out.s1.numpy())
    if args.all_heads:
        heads = Path(args.all_heads)
        heads.mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(out, start=1):
            write_pgm(heads / f"s{i}.pgm", s.numpy())
    return EXIT_OK


def cmd_selftest(args) -> int:
    passed, total = checks.run_checks(args.filter)
    if total == 0:
        print(f"no checks match filter {args.filter!r}", file=sys.stderr)
        return EXIT_CHECK
    print(f"{passed}/{total} checks passed")
    return EXIT_OK if passed == total else EXIT_CHECK


def cmd_gradcheck(args) -> int:
    worst_ok = True
    width = max(map(len, checks.GRAD_CHECKS))
    for name, fn in checks.GRAD_CHECKS.items():
        r = fn(args.seed)
        where = f"{r.worst[0]}[{r.worst[1]}]"
        if not r.finite:
            print(f"{name:<{width}}  nan  FAIL  non-finite value at {where}")
            worst_ok = False
            continue
        status = "ok" if r.ok else "FAIL"
        print(f"{name:<{width}}  {r.max_rel_error:.3e}  {status}  worst at {where}")
        worst_ok &= r.ok
    return EXIT_OK if worst_ok else EXIT_CHECK


def cmd_train_toy(args) -> int:
    if (args.image is None) != (args.mask is None):
        _fail(EXIT_IMAGE, "give both --image and --mask, or neither for the synthetic pair")
    if args.image is None:
        image, mask = train.synthetic_pair()
    else:
        image = _read(args.image, 3, "image")
        mask = _read(args.mask, 1, "mask")
        if mask.shape[1:] != image.shape[1:]:
            _fail(EXIT_IMAGE, f"mask {mask.shape[2]}x{mask.shape[1]} does not match "
                              f"image {image.shape[2]}x{image.shape[1]}")
    _, h, w = image.shape
    cfg = net.NetConfig.toy().with_size(h)
    _check(cfg, h, w)
    weights = _weights(args, cfg)
    print(",".join(train.LOG_FIELDS))
    try:
        result = train.train(weights, image, mask, cfg, args.steps, lr=args.lr,
                             log=lambda e: print(e.csv(), flush=True))
    except FloatingPointError as e:
        _fail(EXIT_CHECK, str(e))
    net.save_weights(result.weights, args.out)
    if args.steps:
        final, _ = train.loss_and_grads(result.weights, image, mask, cfg)
        f = objective.f_measure(net.forward(image, result.weights, cfg).s1, mask).f_beta
        print(f"final total {final.value:.6f} fbeta {f:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    for d in (pred_dir, gt_dir):
        if not d.is_dir():
            _fail(EXIT_IMAGE, f"not a directory: {d}")
    preds = {p.name for p in pred_dir.iterdir() if p.is_file()}
    gts = {p.name for p in gt_dir.iterdir() if p.is_file()}
    matched = sorted(preds & gts)
    for name in sorted(preds ^ gts):
        side = "prediction" if name in preds else "ground truth"
        print(f"unmatched {side}: {name} (skipped)", file=sys.stderr)
    if not matched:
        _fail(EXIT_IMAGE, "no matching file names between --pred and --gt")
    rows = []
    for name in matched:
        s = _read(pred_dir / name, 1, "pred")
        g = _read(gt_dir / name, 1, "gt")
        if s.shape != g.shape:
            _fail(EXIT_IMAGE, f"{name}: prediction and ground truth differ in size")
        r = objective.f_measure(s, g)
        rows.append((name, r.mae, r.f_beta))
    lines = ["name,mae,fbeta"] + [f"{n},{m:.6f},{f:.6f}" for n, m, f in rows]
    mean_mae = math.fsum(r[1] for r in rows) / len(rows)
    mean_f = math.fsum(r[2] for r in rows) / len(rows)
    lines.append(f"mean,{mean_mae:.6f},{mean_f:.6f}")
    Path(args.report).write_text("\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=_u64, default=argparse.SUPPRESS,
                        help="seed for weight initialisation and sampling (default 42)")
    common.add_argument("--toy", action="store_true", default=argparse.SUPPRESS,
                        help="toy configuration: C=4, 192x192, PCA factors (1, 2)")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS,
                        help="BLAS threads, 0 = library default (env G2HF_THREADS wins)")

    parser = argparse.ArgumentParser(prog="g2hf", description=__doc__.split("\n")[0],
                                     parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("forward", parents=[common], help="predict saliency for one PPM image")
    p.add_argument("--image", required=True)
    p.add_argument("--weights", help="weight file (default: seeded initialisation)")
    p.add_argument("--out", required=True, help="output PGM for the primary map")
    p.add_argument("--all-heads", metavar="DIR", help="also write s1..s5 as DIR/s<i>.pgm")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("selftest", parents=[common], help="run the built-in invariant suite")
    p.add_argument("--filter", help="only run checks whose name contains this text")
    p.set_defaults(func=cmd_selftest)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient report")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", parents=[common], help="overfit the toy network to one image")
    p.add_argument("--image", help="PPM image (default: synthetic 192x192 square)")
    p.add_argument("--mask", help="PGM mask matching --image")
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--weights", help="starting weights (default: seeded initialisation)")
    p.add_argument("--out", required=True, help="where to save the trained weights")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", parents=[common], help="MAE and F-measure over two PGM directories")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--report", required=True, help="CSV output path")
    p.set_defaults(func=cmd_eval)
    return parser


def _threads(args) -> int:
    env = os.environ.get("G2HF_THREADS")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            _fail(EXIT_PRECONDITION, f"G2HF_THREADS={env!r} is not an integer")
    return args.threads


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.seed = getattr(args, "seed", 42)
    args.toy = getattr(args, "toy", False)
    args.threads = getattr(args, "threads", 0)
    if getattr(args, "steps", 0) < 0:
        print("--steps must be non-negative", file=sys.stderr)
        return EXIT_PRECONDITION
    try:
        n = _threads(args)
        limit = threadpool_limits(limits=n) if n > 0 else contextlib.nullcontext()
        with limit:
            return args.func(args)
    except CommandError as e:
        print(f"g2hf {args.command}: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
