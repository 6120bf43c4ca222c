"""Command-line interface.

Exit status: 0 on success, 1 for usage or input errors, 2 when a solver
fails numerically or refuses to densify.
"""

import argparse
import logging
import math
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .data import FormatError, load_coo, load_dataset, load_factors, save_dataset, save_factors
from .data import Dataset, synth_matrix, synth_tensor
from .losses import LossKind
from .metrics import evaluate
from .nonconvex import RegularizerKind, dc_tnn, dc_weighted
from .solver import (DensificationRefused, SolverConfig, SolverDivergence, ais_impute, apg_exact,
                     soft_impute)
from .tensor import LatentDecomposition, default_lambda_scale, tensor_ais_impute
from .tuning import (merge_observed, post_process, select_matrix, select_tensor, tune_regularizer,
                     validation_error)

log = logging.getLogger("aisimpute")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, "%s: error: %s\n" % (self.prog, message))


def _lambda_arg(text):
    if text == "auto":
        return None
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected a positive number or 'auto'")
    if not value > 0:
        raise argparse.ArgumentTypeError("lambda must be positive")
    return value


def _reg_arg(text):
    if text in ("tnn", "lsp"):
        return text
    try:
        return RegularizerKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _scale_arg(text):
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers")
    if any(not v > 0 for v in vals):
        raise argparse.ArgumentTypeError("scales must be positive")
    return vals


def _dims_arg(text):
    try:
        return tuple(int(x) for x in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected dims like 943,1682")


def _add_data_args(p):
    p.add_argument("--data", help="directory with train.txt, valid.txt and test.txt")
    p.add_argument("--train", help="training COO file (instead of --data)")
    p.add_argument("--valid", help="validation COO file")
    p.add_argument("--test", help="test COO file")
    p.add_argument("--dims", type=_dims_arg, help="dims for files without a '# dims:' header")


def _add_solver_args(p, tensor):
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default=None,
                   help="regularization weight, or 'auto' (default) for validation tuning")
    p.add_argument("--lambda-hat", type=float, default=None,
                   help="continuation start (default: estimated from the data)")
    p.add_argument("--nu", type=float, default=0.7, help="continuation decay in (0, 1)")
    p.add_argument("--power-iters", type=int, default=3, metavar="J")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-4, help="relative objective change to stop")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--solver", choices=["ais", "soft-impute", "apg-exact"], default="ais")
    p.add_argument("--loss", choices=["square", "logistic"], default="square")
    p.add_argument("--post", action="store_true", help="re-fit the singular values")
    p.add_argument("--fit-on", choices=["train", "all"], default="all",
                   help="fit the final model on train only or on train+valid")
    p.add_argument("--trace", metavar="PATH", help="write the per-iteration trace as CSV")
    p.add_argument("--out", metavar="PATH", help="write the recovered factors")
    if tensor:
        p.add_argument("--lambda-scale", type=_scale_arg, default=None,
                       help="per-mode multipliers a1,a2,... (default 1,...,1,sqrt(m)/sqrt(I_D))")
    else:
        p.add_argument("--reg", type=_reg_arg, default=RegularizerKind("nuclear"),
                       help="nuclear, tnn:R, capped:T or lsp:T; with --lambda auto, "
                       "tnn and lsp alone tune R or T on the validation split")


def build_parser():
    parser = _Parser(prog="aisimpute", description="Matrix and tensor completion with "
                     "accelerated inexact Soft-Impute.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth-matrix", help="generate a synthetic low-rank matrix dataset")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--rank", type=int, default=5)
    p.add_argument("--noise-sd", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("synth-tensor", help="generate a synthetic m x m x 3 tensor dataset")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--noise-sd", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("complete-matrix", help="fit a matrix completion model")
    _add_data_args(p)
    _add_solver_args(p, tensor=False)

    p = sub.add_parser("complete-tensor", help="fit a tensor completion model")
    _add_data_args(p)
    _add_solver_args(p, tensor=True)

    p = sub.add_parser("eval", help="score a factor file on a test split")
    _add_data_args(p)
    p.add_argument("--factors", required=True, metavar="PATH")
    p.add_argument("--task", choices=["regression", "sign"], default="regression")
    return parser


def _load(args):
    if args.data:
        if args.train or args.valid or args.test:
            raise UsageError("use either --data or --train/--valid/--test")
        return load_dataset(args.data)
    if not (args.train and args.test):
        raise UsageError("give --data DIR or at least --train and --test files")
    train = load_coo(args.train, args.dims)
    dims = args.dims or (train.shape if hasattr(train, "shape") else train.dims)
    test = load_coo(args.test, dims)
    if args.valid:
        valid = load_coo(args.valid, dims)
    else:
        valid = _empty_like(train)
    return Dataset(train, valid, test, tuple(dims), note="loaded from files")


def _empty_like(s):
    if hasattr(s, "indices"):
        return type(s)(np.zeros((0, len(s.dims)), np.int64), np.zeros(0), s.dims)
    return type(s)(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), s.shape)


def _check_dense_cap(args, ds):
    # refuse before any tuning work is done
    if args.solver != "apg-exact":
        return
    cap = _config(args, 1.0).dense_cap
    size = max(math.prod(ds.dims) // d * d for d in ds.dims)
    if size > cap:
        raise DensificationRefused("apg-exact densifies %d entries, above the cap of %d"
                                   % (size, cap))


def _config(args, lam):
    try:
        return SolverConfig(lam=lam, lam_hat=args.lambda_hat, nu=args.nu, J=args.power_iters,
                            max_iter=args.max_iter, rel_tol=args.tol, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))


def _task(loss):
    return "regression" if loss is LossKind.SQUARE else "sign"


def _report(label, X, ds, loss):
    if ds.test.nnz == 0:
        return
    m = evaluate(X, ds, _task(loss))
    ranks = ",".join(str(r) for r in m.ranks)
    if m.nmse is not None:
        print("%s: nmse=%.6g rmse=%.6g ranks=%s" % (label, m.nmse, m.rmse, ranks))
    else:
        print("%s: accuracy=%.6g ranks=%s" % (label, m.accuracy, ranks))


def _fit_set(ds, fit_on):
    if fit_on == "all" and ds.valid.nnz:
        return merge_observed(ds.train, ds.valid)
    return ds.train


def _validator(ds, loss):
    if ds.valid.nnz == 0:
        return None
    return lambda X: validation_error(X, ds.valid, loss)


def _complete_matrix(args):
    ds = _load(args)
    if ds.is_tensor:
        raise UsageError("data is a tensor; use complete-tensor")
    loss = LossKind.parse(args.loss)
    reg = args.reg
    reg_name = reg if isinstance(reg, str) else reg.name
    if reg_name != "nuclear" and args.solver != "ais":
        raise UsageError("nonconvex regularizers run with --solver ais only")
    if args.solver == "soft-impute" and loss is not LossKind.SQUARE:
        raise UsageError("soft-impute supports the square loss only")
    _check_dense_cap(args, ds)
    lam = args.lam
    if lam is None:
        if ds.valid.nnz == 0:
            raise UsageError("--lambda auto needs a validation split")
        sel = select_matrix(ds, loss, fit_on=args.fit_on, post=True, cfg=_config(args, 1.0),
                            solver="ais", reg=None)
        lam = sel.lam
        if isinstance(reg, str):
            reg = tune_regularizer(ds, loss, reg, lam, sel.model.rank, _config(args, lam))
        if reg.name == "lsp":
            lam *= reg.param
        print("selected lambda=%.6g" % lam)
    elif isinstance(reg, str):
        raise UsageError("--reg %s needs a parameter when lambda is given" % reg)
    O = _fit_set(ds, args.fit_on)
    cfg = _config(args, lam)
    validate = _validator(ds, loss)
    if reg.name == "tnn":
        X, trace = dc_tnn(O, loss, reg.param, cfg, validate=validate)
    elif reg.name in ("capped", "lsp"):
        X, trace = dc_weighted(O, loss, reg, cfg, validate=validate)
    else:
        run = {"ais": ais_impute, "soft-impute": soft_impute, "apg-exact": apg_exact}
        X, trace = run[args.solver](O, loss, cfg, validate=validate)
    return _finish(args, ds, loss, O, X, trace)


def _complete_tensor(args):
    ds = _load(args)
    if not ds.is_tensor:
        raise UsageError("data is a matrix; use complete-matrix")
    loss = LossKind.parse(args.loss)
    if args.solver == "soft-impute":
        raise UsageError("complete-tensor supports --solver ais or apg-exact")
    scale = args.lambda_scale or default_lambda_scale(ds.dims)
    if len(scale) != len(ds.dims):
        raise UsageError("--lambda-scale needs %d values" % len(ds.dims))
    _check_dense_cap(args, ds)
    lam = args.lam
    if lam is None:
        if ds.valid.nnz == 0:
            raise UsageError("--lambda auto needs a validation split")
        sel = select_tensor(ds, loss, fit_on=args.fit_on, post=True, cfg=_config(args, 1.0),
                            scale=scale)
        lam = sel.lam
        print("selected lambda=%.6g" % lam)
    O = _fit_set(ds, args.fit_on)
    cfg = _config(args, lam)
    if args.solver == "apg-exact":
        cfg = replace(cfg, svd_mode="exact-dense")
    X, trace = tensor_ais_impute(O, loss, lam * np.asarray(scale), cfg,
                                 validate=_validator(ds, loss))
    return _finish(args, ds, loss, O, X, trace)


def _finish(args, ds, loss, O, X, trace):
    print("iterations=%d objective=%.10g" % (len(trace), trace.objectives[-1]))
    _report("solver", X, ds, loss)
    if args.post:
        X = post_process(X, O, loss)
        _report("post", X, ds, loss)
    if args.trace:
        trace.to_csv(args.trace)
    if args.out:
        save_factors(args.out, X)
    return EXIT_OK


def _eval(args):
    ds = _load(args)
    X = load_factors(args.factors)
    if isinstance(X, LatentDecomposition) != ds.is_tensor:
        raise UsageError("factor file and data disagree on matrix vs tensor")
    m = evaluate(X, ds, args.task)
    ranks = ",".join(str(r) for r in m.ranks)
    if m.nmse is not None:
        print("nmse=%.6g rmse=%.6g ranks=%s" % (m.nmse, m.rmse, ranks))
    else:
        print("accuracy=%.6g ranks=%s" % (m.accuracy, ranks))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth-matrix":
            save_dataset(args.out, synth_matrix(args.m, args.rank, args.noise_sd, args.seed))
            return EXIT_OK
        if args.command == "synth-tensor":
            save_dataset(args.out, synth_tensor(args.m, args.seed, args.noise_sd))
            return EXIT_OK
        if args.command == "complete-matrix":
            return _complete_matrix(args)
        if args.command == "complete-tensor":
            return _complete_tensor(args)
        return _eval(args)
    except (UsageError, FormatError, FileNotFoundError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (SolverDivergence, DensificationRefused, ArithmeticError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
