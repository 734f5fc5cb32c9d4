import argparse

from app.core.config import LLOYD_ITERS, RNG_SEED
from app.core.exceptions import UsageError
from app.core.logging import get_logger
from app.services.mesh import generate_structured_triangular, generate_voronoi_lloyd, save_mesh

logger = get_logger(__name__)


def register(subparsers) -> None:
    """I'm adding the `mesh` subcommand: generate a mesh of the unit square"""
    parser = subparsers.add_parser("mesh", help="generate a structured triangular or Lloyd-Voronoi mesh")
    kind = parser.add_mutually_exclusive_group(required=True)
    kind.add_argument("--tri", type=int, metavar="n", help="n x n squares split into 2n^2 triangles")
    kind.add_argument("--voronoi", type=int, metavar="N", help="Voronoi mesh with N cells")
    parser.add_argument("--lloyd", type=int, default=LLOYD_ITERS, help="Lloyd sweeps")
    parser.add_argument("--seed", type=int, default=RNG_SEED)
    parser.add_argument("-o", "--output", required=True, help="mesh JSON file")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    """
    I'm generating a structured or Voronoi mesh and saving it as JSON.
    """
    if args.tri is not None:
        if args.tri < 1:
            raise UsageError(f"--tri needs n >= 1, got {args.tri}")
        mesh = generate_structured_triangular(args.tri)
    else:
        if args.voronoi < 4:
            raise UsageError(f"--voronoi needs at least 4 cells, got {args.voronoi}")
        if args.lloyd < 0:
            raise UsageError("--lloyd must be non-negative")
        mesh = generate_voronoi_lloyd(args.voronoi, lloyd_iters=args.lloyd, rng_seed=args.seed)

    save_mesh(mesh, args.output)
    logger.info("mesh written to %s", args.output)
    print(f"elements={mesh.n_elements} faces={mesh.n_faces} theta={mesh.theta:.4f}")
    return 0
