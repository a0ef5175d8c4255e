"""
pointseq: point-cloud serialization and Mamba-style sequence classification.

    python main.py reorder --shape sphere --strategy nimba --out order.json
    python main.py train --preset desk --ordering nimba --pe off --metrics-out run.jsonl
    python main.py check
"""

import argparse
import logging
import sys

import matplotlib

matplotlib.use("Agg")

from rich.console import Console  # noqa: E402
from rich.logging import RichHandler  # noqa: E402

from controllers.bench_controller import BenchController, DEFAULT_LENGTHS, DEFAULT_WIDTHS  # noqa: E402
from controllers.check_controller import CheckController  # noqa: E402
from controllers.main_controller import MainController  # noqa: E402
from models.config import ORDERINGS, PRESETS, resolve  # noqa: E402
from models.errors import (EmptyInputError, InvalidParameterError, NumericalOverflowError,  # noqa: E402
                           ParseError, SampleSizeError, TrainingDivergedError, UsageError)
from models.metrics import MetricsWriter  # noqa: E402
from models.perturb import APPLY_TO, KINDS, PerturbSpec  # noqa: E402
from models.shapes import ShapeKind  # noqa: E402

log = logging.getLogger("pointseq")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3
EXIT_DIVERGED = 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; pointseq reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _on_off(value):
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def build_parser():
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (default: preset)")
    common.add_argument("--metrics-out", default=None, help="JSON Lines metrics file")
    common.add_argument("--config", default=None, help="JSON config file; explicit flags win over it")
    common.add_argument("--preset", default="desk", choices=sorted(PRESETS))
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    model = _Parser(add_help=False)
    model.add_argument("--ordering", choices=ORDERINGS, default=None)
    model.add_argument("--pe", type=_on_off, default=None, dest="use_positional_embedding",
                       help="positional (center) embedding on|off")
    model.add_argument("--r", type=float, default=None, help="NIMBA distance threshold")
    model.add_argument("--candidate", choices=("first", "nearest"), default=None)
    model.add_argument("--mixer", choices=("mamba", "attention"), default=None)
    model.add_argument("--skip-mode", choices=("constant", "input_dependent"), default=None)
    for name in ("d-e", "layers", "n-points", "n-c", "n-p", "d-state", "expand", "conv-kernel"):
        model.add_argument(f"--{name}", type=int, default=None)

    training = _Parser(add_help=False)
    training.add_argument("--epochs", type=int, default=None)
    training.add_argument("--batch-size", type=int, default=None)
    training.add_argument("--lr", type=float, default=None)
    training.add_argument("--weight-decay", type=float, default=None)
    training.add_argument("--warmup-epochs", type=int, default=None)
    training.add_argument("--classes", type=int, default=None)
    training.add_argument("--per-class", type=int, default=None)
    training.add_argument("--random-pose", action="store_const", const=True, default=None)
    training.add_argument("--threads", type=int, default=None)
    training.add_argument("--eval-every", type=int, default=None,
                          help="test evaluation period in epochs (0: last epoch only)")
    training.add_argument("--data-dir", default=None, help="<root>/<class>/<split>/<item>.{off,xyz}")

    seeds = _Parser(add_help=False)
    seeds.add_argument("--seeds", type=_int_list, default=None, help="comma separated, default 0,123,777")
    seeds.add_argument("--plot", default=None, help="write a PNG figure")

    noise = _Parser(add_help=False)
    noise.add_argument("--sigma", type=float, default=None, help="jitter std")
    noise.add_argument("--clip", type=float, default=None, help="jitter clip")
    noise.add_argument("--p", type=float, default=None, help="input dropout probability")

    parser = _Parser(prog="pointseq", description="Point-cloud serialization for selective state space models")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reorder", parents=[common, model], help="serialize the centers of one cloud")
    p.add_argument("input", nargs="?", default=None, help=".xyz or .off cloud")
    p.add_argument("--shape", choices=[k.value for k in ShapeKind], default=None,
                   help="use a generated shape instead of a file")
    p.add_argument("--strategy", choices=ORDERINGS, default=None)
    p.add_argument("--out", default=None, help="JSON output path")
    p.add_argument("--plot", default=None, help="PNG of the processing path")

    p = sub.add_parser("train", parents=[common, model, training], help="train a classifier")
    p.add_argument("--checkpoint", default=None, help="where to save the trained model")

    p = sub.add_parser("eval", parents=[common, training, noise], help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--perturb", choices=KINDS, default=None)
    p.add_argument("--apply-to", choices=APPLY_TO, default="test")

    sub.add_parser("ablate-pe", parents=[common, model, training, seeds],
                   help="{nimba, axis-triple} x {PE on, PE off}")

    p = sub.add_parser("robustness", parents=[common, model, training, seeds, noise],
                       help="noise x {train, test, both} x {nimba, axis-triple}")
    p.add_argument("--kinds", default=",".join(KINDS), help="comma separated subset of " + ",".join(KINDS))

    sub.add_parser("lr-search", parents=[common, model, training], help="coarse then refined lr grid")

    p = sub.add_parser("bench", parents=[common], help="S6 and attention timings")
    p.add_argument("--widths", type=_int_list, default=list(DEFAULT_WIDTHS))
    p.add_argument("--lengths", type=_int_list, default=list(DEFAULT_LENGTHS))
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--n-c", type=int, default=64, dest="bench_n_c", help="tokens at n_c (and 3 n_c)")
    p.add_argument("--plot", default=None)

    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--corrupt-a-log", action="store_true", help="flip the sign of A_log (harness self-test)")
    return parser


OVERRIDE_KEYS = (
    "ordering", "use_positional_embedding", "r", "candidate", "mixer", "skip_mode", "d_e", "layers",
    "n_points", "n_c", "n_p", "d_state", "expand", "conv_kernel",
    "epochs", "batch_size", "lr", "weight_decay", "warmup_epochs", "classes", "per_class",
    "random_pose", "threads", "eval_every", "seed", "seeds",
)


def resolve_configs(args):
    overrides = {key: getattr(args, key, None) for key in OVERRIDE_KEYS}
    return resolve(args.preset, args.config, overrides)


def _noise(args):
    return {k: getattr(args, k) for k in ("sigma", "clip", "p") if getattr(args, k, None) is not None}


def run(args, console):
    model_cfg, train_cfg = resolve_configs(args)
    header = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    with MetricsWriter(args.metrics_out, args.command, header) as metrics:
        if args.command == "check":
            passed, _ = CheckController(console, metrics).cmd_check(train_cfg.seed, args.corrupt_a_log)
            return EXIT_OK if passed else EXIT_CHECK
        if args.command == "bench":
            BenchController(console, metrics).cmd_bench(args.widths, args.lengths, args.repeats,
                                                        args.warmup, n_c=args.bench_n_c, seed=train_cfg.seed,
                                                        plot_path=args.plot)
            return EXIT_OK

        controller = MainController(console, metrics)
        if args.command == "reorder":
            controller.cmd_reorder(model_cfg, args.input, args.shape, args.strategy, args.r,
                                   args.out, args.plot, seed=train_cfg.seed)
        elif args.command == "train":
            controller.cmd_train(model_cfg, train_cfg, args.data_dir, args.checkpoint)
        elif args.command == "eval":
            spec = None
            if args.perturb:
                spec = PerturbSpec(args.perturb, args.apply_to, seed=train_cfg.seed, **_noise(args))
            controller.cmd_eval(args.checkpoint, train_cfg, args.data_dir, spec)
        elif args.command == "ablate-pe":
            controller.cmd_ablate_pe(model_cfg, train_cfg, args.seeds, args.data_dir, args.plot)
        elif args.command == "robustness":
            kinds = tuple(k for k in args.kinds.split(",") if k)
            unknown = set(kinds) - set(KINDS)
            if unknown:
                raise UsageError(f"unknown noise kinds: {sorted(unknown)}")
            controller.cmd_robustness(model_cfg, train_cfg, args.seeds, args.data_dir, _noise(args),
                                      args.plot, kinds)
        elif args.command == "lr-search":
            controller.cmd_lr_search(model_cfg, train_cfg, args.data_dir)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(message)s",
                        handlers=[RichHandler(rich_tracebacks=args.verbose, show_path=False)], force=True)
    console = Console()
    try:
        return run(args, console)
    except (UsageError, InvalidParameterError) as e:
        log.error("%s", e)
        return EXIT_USAGE
    except (ParseError, EmptyInputError, SampleSizeError, OSError) as e:
        log.error("%s", e)
        return EXIT_DATA
    except (TrainingDivergedError, NumericalOverflowError) as e:
        log.error("%s", e)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
