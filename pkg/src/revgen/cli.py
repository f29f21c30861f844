"""Command line interface: ``revgen <command> ...``.

Training commands write a run directory (config snapshot, manifest, log,
metrics and checkpoints). Every other command reads a checkpoint, which embeds
its configuration, so ``--ckpt`` is all they need besides their own options.

Exit codes: 0 on success, 1 for a failed selftest or misuse, 2 for
configuration errors, 3 for data errors, 4 for numerical failures and 5 for
checkpoint errors.
"""

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import __version__
from .config import load_config
from .data import load_mnist_idx, synth_gaussian_mixture
from .evaluation import (
    build_feature_fn,
    effective_dims,
    frechet_feature_distance,
    generate_class_samples,
    generate_samples,
    interpolate,
    reconstruct,
    roundtrip_l1,
    traverse_class_dimension,
    traverse_dimension,
)
from .exceptions import ConfigError, RevgenError
from .images import save_grid
from .latent import top_active_dims_by_std, top_dims_by_std
from .selftest import run_selftest
from .tensor import Rng
from .training import RunDir, load_checkpoint, train_adversarial, train_ot

_logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_installed_handlers = []


def teardown_logging():
    root = logging.getLogger()
    for h in _installed_handlers:
        root.removeHandler(h)
        h.close()
    _installed_handlers.clear()


def setup_logging(verbose=False, log_path=None):
    """Routes log records to stderr and, optionally, to a file; replaces handlers from a previous call."""
    teardown_logging()
    root = logging.getLogger()
    level = logging.DEBUG if verbose else logging.INFO
    handlers = [logging.StreamHandler(sys.stderr)]
    if log_path:
        handlers.append(logging.FileHandler(log_path, encoding="UTF-8"))
    for h in handlers:
        h.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(h)
        _installed_handlers.append(h)
    root.setLevel(level)


############################################################################
# Datasets


def load_dataset(cfg, paths=None):
    """The dataset a configuration describes, or IDX files given on the command line.

    Args:
        cfg (TrainConfig): Configuration; its ``data`` section is used unless paths is given.
        paths (list of str, optional): ``[images]`` or ``[images, labels]`` IDX paths.

    Raises:
        ConfigError: If MNIST data is configured without an image path.
    """

    if paths:
        if len(paths) > 2:
            raise ConfigError(f"--dataset takes an image file and an optional label file, got {len(paths)} paths")
        return load_mnist_idx(paths[0], paths[1] if len(paths) > 1 else None, limit=cfg.limit, dtype=cfg.dtype)
    if cfg.data_kind == "mixture":
        return synth_gaussian_mixture(
            Rng(cfg.seed_data, "mixture"),
            cfg.mixture_n,
            cfg.mixture_classes,
            cfg.mixture_dim,
            cfg.mixture_radius,
            cfg.mixture_std,
            dtype=cfg.dtype,
        )
    if not cfg.images:
        raise ConfigError("data.images is not set")
    return load_mnist_idx(cfg.images, cfg.labels or None, limit=cfg.limit, dtype=cfg.dtype)


def parse_dims(text):
    """Parses ``--dims``: a comma-separated list or ``top:k``.

    Returns:
        tuple: ``("list", [dims])`` or ``("top", k)``.

    Examples:
        >>> parse_dims("3,7,11")
        ('list', [3, 7, 11])
        >>> parse_dims("top:3")
        ('top', 3)
    """

    try:
        if text.startswith("top:"):
            return "top", int(text[4:])
        return "list", [int(d) for d in text.split(",") if d.strip()]
    except ValueError as e:
        raise ConfigError(f"--dims must be a comma-separated list or top:k, got {text!r}") from e


def _require_prior(state, what):
    if state.prior is None:
        raise ConfigError(f"{what} needs a checkpoint from the adversarial regime")
    return state.prior


def _check_index(flag, i, n):
    if not 0 <= i < n:
        raise ConfigError(f"{flag} must lie in [0, {n}), got {i}")


def _check_dims(dims, allowed, what):
    bad = [d for d in dims if d not in allowed]
    if not dims:
        raise ConfigError("--dims names no dims")
    if bad:
        raise ConfigError(f"--dims {bad} are not {what}")


def _check_top(k, n):
    if not 0 < k <= n:
        raise ConfigError(f"--dims top:{k} must pick between 1 and {n} dims")


def _grid_columns(n):
    return max(1, int(np.ceil(np.sqrt(n))))


############################################################################
# Commands


def _cmd_train(args, regime):
    overrides = [f"training.regime={regime}"] + list(args.set or ())
    cfg = load_config(args.config, overrides)
    os.makedirs(args.out, exist_ok=True)
    setup_logging(args.verbose, RunDir(args.out).log_path)
    dataset = load_dataset(cfg)
    trainer = train_ot if regime == "ot" else train_adversarial
    state = trainer(cfg, dataset, args.out, resume=args.resume)
    _logger.info("Finished %s training at epoch %d, step %d", regime, state.epoch, state.step)
    return 0


def cmd_train_adversarial(args):
    return _cmd_train(args, "adversarial")


def cmd_train_ot(args):
    return _cmd_train(args, "ot")


def cmd_sample(args):
    state = load_checkpoint(args.ckpt)
    rng = Rng(args.seed, "sample")
    if state.class_prior is not None:
        cp = state.class_prior
        images = np.concatenate([generate_class_samples(state.net, cp, c, rng, args.n) for c in range(cp.num_classes)])
        save_grid(args.out, images, ncol=args.n)
    else:
        images = generate_samples(state.net, state.prior, rng, args.n)
        save_grid(args.out, images, ncol=_grid_columns(args.n))
    return 0


def cmd_interpolate(args):
    state = load_checkpoint(args.ckpt)
    prior = _require_prior(state, "restricted interpolation") if args.mode == "restricted" else state.prior
    dataset = load_dataset(state.cfg, args.dataset)
    x = dataset.images
    _check_index("--index-a", args.index_a, len(x))
    _check_index("--index-b", args.index_b, len(x))
    images = interpolate(state.net, prior, x[args.index_a], x[args.index_b], args.steps, args.mode)
    save_grid(args.out, images, ncol=args.steps)
    return 0


def cmd_traverse(args):
    state = load_checkpoint(args.ckpt)
    kind, value = parse_dims(args.dims)
    rows = []
    if state.class_prior is not None:
        cp = state.class_prior
        if kind == "top":
            _check_top(value, cp.dim)
            dims = top_dims_by_std(cp, value)
        else:
            _check_dims(value, range(cp.dim), f"latent dims in [0, {cp.dim})")
            dims = value
        if args.class_ is not None:
            _check_index("--class", args.class_, cp.num_classes)
        classes = range(cp.num_classes) if args.class_ is None else [args.class_]
        for c in classes:
            for d in dims:
                rows.append(traverse_class_dimension(state.net, cp, c, d, args.range_stds, args.steps))
    else:
        prior = state.prior
        if kind == "top":
            _check_top(value, prior.k)
            x = load_dataset(state.cfg, args.dataset).images[: state.cfg.select_samples]
            dims = top_active_dims_by_std(state.net, prior, x, value)
        else:
            _check_dims(value, prior.active_dims, "active in the prior")
            dims = value
        for d in dims:
            rows.append(traverse_dimension(state.net, prior, d, args.range_stds, args.steps))
    _logger.info("Traversing dims %s", dims)
    save_grid(args.out, np.concatenate(rows), ncol=args.steps)
    return 0


def cmd_reconstruct(args):
    state = load_checkpoint(args.ckpt)
    prior = _require_prior(state, "reconstruction from the restricted latent space")
    dataset = load_dataset(state.cfg, args.dataset)
    x, restricted, full = reconstruct(state.net, prior, dataset.images[: args.n])
    save_grid(args.out, np.concatenate([x, restricted, full]), ncol=len(x))
    return 0


EVAL_COLUMNS = ("checkpoint", "epoch", "n", "frechet", "roundtrip_l1", "effective_dims", "class_accuracy")


def evaluate_checkpoint(state, dataset, seed):
    """Fréchet feature distance, round-trip error, effective dims and class accuracy of a trained state."""
    cfg = state.cfg
    rng = Rng(seed, "eval").spawn("cli")
    n = min(cfg.eval_n_samples, len(dataset))
    kind = cfg.feature if dataset.labels is not None else "identity"
    feature_fn, clf = build_feature_fn(kind, dataset, cfg.classifier_epochs, cfg.eval_seed)
    row = {"epoch": state.epoch, "n": n, "roundtrip_l1": roundtrip_l1(state.net, dataset.images[:n])}
    if state.class_prior is not None:
        cp = state.class_prior
        per_class = max(1, n // cp.num_classes)
        fakes = [generate_class_samples(state.net, cp, c, rng, per_class) for c in range(cp.num_classes)]
        fake = np.concatenate(fakes)
        row["effective_dims"] = float(np.mean(effective_dims(cp, cfg.effective_threshold)))
        if clf is not None:
            hits = [np.mean(clf.predict(f) == c) for c, f in enumerate(fakes)]
            row["class_accuracy"] = float(np.mean(hits))
    else:
        fake = generate_samples(state.net, state.prior, rng, n)
    row["frechet"] = frechet_feature_distance(dataset.images[: len(fake)], fake, feature_fn)
    return row


def cmd_eval(args):
    state = load_checkpoint(args.ckpt)
    dataset = load_dataset(state.cfg, args.dataset)
    row = evaluate_checkpoint(state, dataset, state.cfg.eval_seed if args.seed is None else args.seed)
    row["checkpoint"] = args.ckpt
    with open(args.out, "w", newline="", encoding="UTF-8") as fh:
        writer = csv.DictWriter(fh, EVAL_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerow({k: "" if row.get(k) is None else row[k] for k in EVAL_COLUMNS})
    _logger.info("Wrote %s: %s", args.out, ", ".join(f"{k}={row[k]}" for k in EVAL_COLUMNS[1:] if k in row))
    return 0


def cmd_selftest(args):
    return 1 if run_selftest() else 0


############################################################################
# Parser


def build_parser():
    parser = argparse.ArgumentParser(prog="revgen", description="Generative reversible networks")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn, what in (
        ("train-adversarial", cmd_train_adversarial, "reconstruction then adversarial training"),
        ("train-ot", cmd_train_ot, "class-conditional optimal transport training"),
    ):
        p = sub.add_parser(name, help=what)
        p.add_argument("--config", help="INI configuration file; defaults apply when omitted")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--resume", help="checkpoint to continue from")
        p.add_argument(
            "--set",
            action="append",
            metavar="SECTION.KEY=VALUE",
            help="override a configuration key (repeatable); wins over the file",
        )
        p.set_defaults(func=fn)

    p = sub.add_parser("sample", help="decode prior samples into a PNG grid")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=64, help="samples (per class for class-conditional models)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="PNG path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="decode a path between the encodings of two examples")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--index-a", type=int, required=True)
    p.add_argument("--index-b", type=int, required=True)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--mode", choices=("restricted", "full"), default="restricted")
    p.add_argument("--dataset", nargs="+", metavar="IDX", help="images and optional labels instead of the config's")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("traverse", help="sweep single latent dims")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dims", default="top:3", help="comma-separated dims or top:k")
    p.add_argument("--range-stds", type=float, default=3.0)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--class", dest="class_", type=int, help="only this class (class-conditional models)")
    p.add_argument("--dataset", nargs="+", metavar="IDX", help="examples that rank the active dims for top:k")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_traverse)

    p = sub.add_parser("reconstruct", help="original / restricted / full reconstruction rows")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--dataset", nargs="+", metavar="IDX")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="Fréchet feature distance, effective dims and round-trip error")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dataset", nargs="+", metavar="IDX")
    p.add_argument("--seed", type=int, help="sampling seed; eval.seed by default")
    p.add_argument("--out", required=True, help="CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("selftest", help="run the built-in invariant checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except RevgenError as e:
        _logger.error("%s: %s", type(e).__name__, e)
        _logger.debug("traceback", exc_info=True)
        return e.exit_code
    finally:
        teardown_logging()
