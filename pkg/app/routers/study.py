import argparse
import json
from pathlib import Path

from pydantic import ValidationError

from app.core.exceptions import ConfigError, UsageError
from app.core.logging import get_logger
from app.core.storage import write_csv
from app.routers.hierarchy import int_list
from app.schemas.schemas import StudyConfig, StudyKind
from app.services import analysis

logger = get_logger(__name__)


def text_list(text: str) -> list:
    return [item.strip() for item in text.split(",") if item.strip()]


def register(subparsers) -> None:
    """I'm adding the `study` subcommand: the numerical experiments"""
    parser = subparsers.add_parser("study", help="run a numerical study and write its CSV")
    parser.add_argument("kind", choices=[kind.value for kind in StudyKind])
    parser.add_argument("--config", help="JSON file with StudyConfig fields")
    parser.add_argument("--sets", type=text_list, help="mesh sets, e.g. voronoi:512,tri:16,1024")
    parser.add_argument("--p", type=int_list, help="degrees, e.g. 1,2,3")
    parser.add_argument("--m", help="smoothing steps '3,5,8' or '2p2' for m = 2p^2")
    parser.add_argument("--levels", type=int_list, help="level counts, e.g. 2,3,4")
    parser.add_argument("--n", type=int_list, help="structured mesh sizes for rates/eigscaling")
    parser.add_argument("--solvers", type=text_list, help="iteration table solvers, e.g. TL,W3,CG")
    parser.add_argument("--coercivity-levels", type=int, help="hierarchy depth measured by the coercivity study")
    parser.add_argument("--c-sigma", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--jobs", type=int, help="parallel study cells")
    parser.add_argument("-o", "--output", help="output directory")
    parser.set_defaults(handler=run)


def load_config(args: argparse.Namespace) -> StudyConfig:
    """
    I'm reading the config file first and putting command-line flags on top.
    """
    payload = {}
    if args.config:
        try:
            payload = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read study config {args.config}: {exc}") from exc
        if not isinstance(payload, dict):
            raise ConfigError("study config must be a JSON object")

    overrides = {
        "sets": args.sets, "degrees": args.p, "levels": args.levels, "sizes": args.n,
        "solvers": args.solvers, "coercivity_levels": args.coercivity_levels, "C_sigma": args.c_sigma,
        "seed": args.seed, "n_jobs": args.jobs, "output": args.output,
    }
    if args.m is not None:
        if args.m.strip().lower() == "2p2":
            overrides["smoothing_rule"] = "2p2"
        else:
            try:
                overrides["smoothing"] = int_list(args.m)
            except ValueError as exc:
                raise UsageError(f"--m expects integers or '2p2', got '{args.m}'") from exc
    payload.update({key: value for key, value in overrides.items() if value is not None})

    try:
        return StudyConfig(**payload)
    except ValidationError as exc:
        error = ConfigError if args.config else UsageError
        raise error(f"invalid study configuration: {exc.errors()[0]['msg']}") from exc


def run(args: argparse.Namespace) -> int:
    """
    I'm running one study kind and writing its CSV files.
    """
    config = load_config(args)
    kind = StudyKind(args.kind)
    output = Path(config.output)
    logger.info("running %s study", kind.value)

    if kind == StudyKind.COERCIVITY:
        frame = analysis.coercivity_study(config)
    elif kind == StudyKind.ITERATIONS:
        frame = analysis.iteration_table(config)
        print(analysis.format_iteration_table(frame))
    elif kind == StudyKind.CONTRACTION:
        frame = analysis.contraction_study(config)
    elif kind == StudyKind.RATES:
        frame, slopes = analysis.manufactured_convergence(config.degrees, config.sizes, config.C_sigma)
        write_csv(output / "rates_slopes.csv", slopes)
        print(slopes.to_string(index=False))
    elif kind == StudyKind.EIGSCALING:
        frame = analysis.eig_scaling_study(config.degrees, config.sizes, config.C_sigma)
    else:
        frame = analysis.amg_study(config)

    write_csv(output / f"{kind.value}.csv", frame)
    if kind not in (StudyKind.ITERATIONS, StudyKind.RATES):
        print(frame.to_string(index=False))
    return 0
