"""
Command-line harness: ``madmix run|time|pmf|weight``.

Exit codes: 0 on success, 1 on configuration errors (bad flags, unknown experiments, missing files),
2 on runtime failures.
"""
import argparse
import sys

from madmix.enums import Experiment, Method
from madmix.report.experiment import ExperimentConfig, ExperimentReport
from madmix.utils.const import DEFAULT_XI, OUTPUT_DIR_ENV
from madmix.utils.log import Logger

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class _ArgumentParser(argparse.ArgumentParser):
    """Reports usage errors as ValueError so they map to the configuration exit code."""

    def error(self, message):
        raise ValueError(f"{self.prog}: {message}")


def _parse_param(text):
    if "=" not in text:
        raise ValueError(f"Model parameters must look like key=value, got '{text}'.")
    key, raw = text.split("=", 1)
    for cast in (int, float):
        try:
            return key, cast(raw)
        except ValueError:
            continue
    if "," in raw:
        return key, [int(v) for v in raw.split(",")]
    return key, raw


def build_parser():
    parser = _ArgumentParser(prog="madmix", description="MAD Mix variational inference experiments.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = _ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML file with configuration values; flags win over it.")
    common.add_argument("--experiment", choices=[e.value for e in Experiment])
    common.add_argument("--method", choices=[m.value for m in Method])
    common.add_argument("--n-flow", type=int, dest="n_flow", help="Flow length N.")
    common.add_argument("--xi", type=float, help=f"MAD shift (default pi/16 = {DEFAULT_XI:.6f}).")
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int, dest="n_samples", help="Monte Carlo sample count.")
    common.add_argument("--u-samples", type=int, dest="n_u_samples", help="Uniform draws per state for PMF extraction.")
    common.add_argument("--leapfrog-steps", type=int, dest="leapfrog_steps")
    common.add_argument("--step-size", type=float, dest="step_size")
    common.add_argument("--data", help="Local CSV dataset (GMM observations or regression table).")
    common.add_argument("--out", help=f"Output directory (default ${OUTPUT_DIR_ENV} or ./res).")
    common.add_argument("--param", action="append", default=[], help="Model parameter override key=value.")
    common.add_argument("--verbose", action="store_true")

    subparsers.add_parser("run", parents=[common], help="Run an experiment and write records.")
    subparsers.add_parser("time", parents=[common], help="Time one density evaluation and one sample draw.")
    subparsers.add_parser("pmf", parents=[common], help="Write flattened exact and approximate PMFs.")
    subparsers.add_parser("weight", parents=[common], help="Two-reference KL-optimal weighting demo.")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {
        key: getattr(args, key)
        for key in (
            "experiment",
            "method",
            "n_flow",
            "xi",
            "seed",
            "n_samples",
            "n_u_samples",
            "leapfrog_steps",
            "step_size",
            "data",
            "out",
        )
    }
    params = dict(_parse_param(p) for p in args.param)
    if args.command == "weight":
        overrides["experiment"] = overrides["experiment"] or Experiment.TOY1D.value
        overrides["n_flow"] = overrides["n_flow"] or 1
    if args.config:
        config = ExperimentConfig.from_file(args.config, **overrides)
        if params:
            config = ExperimentConfig.from_dict({**config.to_dict(), "params": {**config.params, **params}})
        return config
    if overrides["experiment"] is None:
        raise ValueError("--experiment is required unless --config provides it.")
    return ExperimentConfig.from_dict({"params": params}, **overrides)


def main(argv=None):
    logger = None
    try:
        args = build_parser().parse_args(argv)
        config = config_from_args(args)
        logger = Logger(path=f"{config.out}/madmix.log")
        report = ExperimentReport(config, logger=logger, verbose=args.verbose)

        if args.command == "run":
            report.run()
        elif args.command == "time":
            report.timing()
        elif args.command == "pmf":
            report.pmf_table()
        else:
            report.weight()

        report.save()
        logger.log(f"\n{report}")
        return EXIT_OK
    except (ValueError, FileNotFoundError) as err:
        print(f"madmix: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as err:  # noqa: BLE001
        print(f"madmix: runtime failure: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if logger is not None:
            logger.close()


if __name__ == "__main__":
    sys.exit(main())
