import argparse

from app.core.config import RNG_SEED, TARGET_FACTOR
from app.core.logging import get_logger
from app.services.hierarchy import build_hierarchy, quality_report, save_hierarchy
from app.services.mesh import load_mesh

logger = get_logger(__name__)


def int_list(text: str) -> list:
    """Comma-separated integers, e.g. '1,2,3'"""
    return [int(item) for item in text.split(",") if item.strip()]


def register(subparsers) -> None:
    """I'm adding the `hierarchy` subcommand: agglomerate a mesh into J nested levels"""
    parser = subparsers.add_parser("hierarchy", help="build an agglomerated mesh hierarchy")
    parser.add_argument("-i", "--input", required=True, help="fine mesh JSON file")
    parser.add_argument("-J", "--levels", type=int, required=True, help="number of levels")
    parser.add_argument("--factor", type=float, default=TARGET_FACTOR, help="agglomeration target per level")
    parser.add_argument("--p", type=int_list, default=[1], help="degree, or coarse-to-fine list '1,1,2'")
    parser.add_argument("--seed", type=int, default=RNG_SEED)
    parser.add_argument("-o", "--output", required=True, help="output directory")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    """
    I'm agglomerating a mesh (or stacking degrees) and saving the hierarchy.
    """
    fine = load_mesh(args.input)
    degrees = args.p[0] if len(args.p) == 1 else args.p
    hierarchy = build_hierarchy(fine, args.levels, degrees, args.factor, args.seed)
    report = quality_report(hierarchy)
    save_hierarchy(hierarchy, args.output, report)

    # Printing one summary line per level plus the face-wise size ratio
    for quality in report.levels:
        print(
            f"level={quality.level} elements={quality.element_count} "
            f"theta={quality.theta_j:.4f} max_faces={quality.max_faces}"
        )
    for pair, value in enumerate(report.Theta_per_pair, start=2):
        shown = "n/a" if value is None else f"{value:.4f}"
        print(f"Theta[{pair}->{pair - 1}]={shown}")
    logger.info("hierarchy written to %s", args.output)
    return 0
