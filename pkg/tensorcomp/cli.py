"""
Command-line workbench.

    python -m tensorcomp synth    --shape 50,50,20 --ranks 7,8,9 --seed 1 --out X.ten
    python -m tensorcomp mask     --tensor X.ten --fraction 0.35 --seed 2 --out data.obs
    python -m tensorcomp complete --obs data.obs --method constraint --out Xhat.ten
    python -m tensorcomp factors  --obs data.obs --n-components 4 --out cp.fac
    python -m tensorcomp sweep    --shape 50,50,20 --ranks 7,8,9 --fractions 0.05:0.95:0.05 --out sweep.csv
    python -m tensorcomp eval     --estimate Xhat.ten --truth X.ten --obs data.obs

Modes are 1-based on the command line. Exit code is 0 on success, 2 when a
solver stops at --max-iter without reaching --tol, and 1 on any error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import io_formats
from .factorize import DEFAULT_REL_TOL, CpOptions, interpret
from .solvers import METHODS, Solution, SolverConfig, solve
from .workbench import (
    DEFAULT_NREP,
    SynthSpec,
    gen_lowrank,
    generalization_error,
    run_sweep,
    sample_observations,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAX_ITER = 2
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]


class UsageError(Exception):
    """Bad command-line usage."""


class _Parser(argparse.ArgumentParser):
    # usage errors become exit code 1 instead of argparse's 2, which means max_iter here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"values must be positive, got '{text}'")
    return values


def _float_list(text: str) -> Tuple[float, ...]:
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from None


def _fractions(text: str) -> Tuple[float, ...]:
    """Either a list `0.1,0.2` or an inclusive range `start:stop:step`."""
    if ":" in text:
        try:
            start, stop, step = (float(t) for t in text.split(":"))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected start:stop:step, got '{text}'") from None
        if step <= 0 or stop < start:
            raise argparse.ArgumentTypeError(f"empty fraction range '{text}'")
        values = np.round(np.arange(start, stop + step / 2, step), 10)
        return tuple(float(v) for v in values)
    return _float_list(text)


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{text}'") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _common_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
    common.add_argument('--tol', type=float, default=1e-3, help='Relative duality gap tolerance (default: 1e-3)')
    common.add_argument('--max-iter', type=int, default=2000, help='Iteration cap (default: 2000)')
    common.add_argument('--eta0', type=float, default=0.1, help='Step-size constant (default: 0.1)')
    common.add_argument('--lambda', dest='lam', type=float, default=0.0,
                        help='Noise variance parameter; 0 interpolates the observations (default: 0)')
    common.add_argument('--gamma', type=_float_list, default=None, help='Per-mode weights g1,g2,... (default: all 1)')
    common.add_argument('--out', help='Output file')
    common.add_argument('--log-level', default='INFO', choices=LOG_LEVELS, help='Logging level (default: INFO)')
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog='tensorcomp', description='Trace-norm tensor completion workbench')
    subparsers = parser.add_subparsers(dest='command', help='Available commands')
    common = _common_parser()

    synth_parser = subparsers.add_parser('synth', parents=[common], help='Generate a random low-rank tensor')
    synth_parser.add_argument('--shape', type=_int_list, required=True, help='Extents n1,n2,...')
    synth_parser.add_argument('--ranks', type=_int_list, required=True, help='Multilinear ranks r1,r2,...')

    mask_parser = subparsers.add_parser('mask', parents=[common], help='Observe a random fraction of a tensor')
    mask_parser.add_argument('--tensor', required=True, help='Input .ten file')
    mask_parser.add_argument('--fraction', type=float, required=True, help='Fraction of entries to observe')
    mask_parser.add_argument('--noise', type=float, default=0.0, help='Std of Gaussian noise added to observations')

    complete_parser = subparsers.add_parser('complete', parents=[common], help='Complete a partially observed tensor')
    _add_solve_arguments(complete_parser)
    complete_parser.add_argument('--diagnostics', help='Diagnostics JSON (default: <out>.json)')
    complete_parser.add_argument('--components', help='Write the per-mode auxiliary matrices to this .fac file')
    complete_parser.add_argument('--omit-timing', action='store_true',
                                 help='Leave timing and run metadata out of the diagnostics')

    factors_parser = subparsers.add_parser('factors', parents=[common],
                                           help='Complete, then extract Tucker and CP factors')
    _add_solve_arguments(factors_parser, default_method='constraint')
    factors_parser.add_argument('--n-components', type=_positive_int, required=True, help='CP components on the core')
    factors_parser.add_argument('--rel-tol', type=float, default=DEFAULT_REL_TOL,
                                help=f'Rank detection threshold relative to sigma_1 (default: {DEFAULT_REL_TOL})')
    factors_parser.add_argument('--restarts', type=_positive_int, default=1, help='Independent ALS runs (default: 1)')
    factors_parser.add_argument('--max-sweeps', type=_positive_int, default=500, help='ALS sweeps per run (default: 500)')
    factors_parser.add_argument('--tucker', help='Write the Tucker factors to this .fac file')
    factors_parser.add_argument('--core', help='Write the Tucker core to this .ten file')

    sweep_parser = subparsers.add_parser('sweep', parents=[common], help='Error versus fraction-observed sweep')
    sweep_parser.add_argument('--shape', type=_int_list, required=True, help='Extents n1,n2,...')
    sweep_parser.add_argument('--ranks', type=_int_list, action='append', required=True,
                              help='Rank tuple r1,r2,...; repeat for several')
    sweep_parser.add_argument('--methods', default='constraint',
                              help='Comma-separated methods: constraint, mixture, matrix or matrix-k (default: constraint)')
    sweep_parser.add_argument('--fractions', type=_fractions, required=True,
                              help='Fractions f1,f2,... or an inclusive range start:stop:step')
    sweep_parser.add_argument('--nrep', type=_positive_int, default=DEFAULT_NREP,
                              help=f'Repetitions per cell (default: {DEFAULT_NREP})')
    sweep_parser.add_argument('--workers', type=_positive_int, default=1, help='Parallel worker processes (default: 1)')
    sweep_parser.add_argument('--noise', type=float, default=0.0, help='Std of Gaussian noise added to observations')
    sweep_parser.add_argument('--no-progress', action='store_true', help='Hide the progress bar')
    sweep_parser.add_argument('--omit-timing', action='store_true', help='Write 0 in the mean_time column')

    eval_parser = subparsers.add_parser('eval', parents=[common], help='Generalization error on unobserved entries')
    eval_parser.add_argument('--estimate', required=True, help='Completed .ten file')
    eval_parser.add_argument('--truth', required=True, help='True .ten file')
    eval_parser.add_argument('--obs', required=True, help='The .obs file the estimate was trained on')

    return parser


def _add_solve_arguments(parser: argparse.ArgumentParser, default_method: Optional[str] = None):
    parser.add_argument('--obs', required=True, help='Input .obs file')
    parser.add_argument('--method', choices=METHODS, default=default_method, required=default_method is None,
                        help='Estimator')
    parser.add_argument('--mode', type=int, help='1-based mode for --method matrix')
    parser.add_argument('--gap-interval', type=_positive_int, default=1,
                        help='Iterations between duality gap evaluations (default: 1)')


def _solver_config(args) -> SolverConfig:
    return SolverConfig(lam=args.lam, gammas=args.gamma, eta0=args.eta0, tol=args.tol,
                        max_iter=args.max_iter, gap_interval=getattr(args, 'gap_interval', 1))


def _require_out(args) -> Path:
    if not args.out:
        raise UsageError(f"{args.command}: the following arguments are required: --out")
    return Path(args.out)


def _run_solver(args) -> Tuple[Solution, SolverConfig]:
    obs = io_formats.read_observations(args.obs)
    K = len(obs.shape)
    mode = None
    if args.method == 'matrix':
        if args.mode is None:
            raise UsageError("argument --mode: required with --method matrix")
        if not 1 <= args.mode <= K:
            raise UsageError(f"argument --mode: {args.mode} is out of range 1..{K} for a {K}-way tensor")
        mode = args.mode - 1
    elif args.mode is not None:
        logger.warning(f"--mode is ignored by --method {args.method}")
    cfg = _solver_config(args)
    logger.info(f"Loaded {obs.size} observations of a {'x'.join(map(str, obs.shape))} tensor from {args.obs}")
    return solve(args.method, obs, cfg, mode=mode), cfg


def _exit_code(solution: Solution) -> int:
    return EXIT_OK if solution.diagnostics.converged else EXIT_MAX_ITER


def cmd_synth(args) -> int:
    out = _require_out(args)
    X = gen_lowrank(SynthSpec(args.shape, args.ranks, args.seed))
    io_formats.write_tensor(out, X)
    logger.info(f"Wrote rank-{args.ranks} tensor of shape {X.shape} to {out}")
    return EXIT_OK


def cmd_mask(args) -> int:
    out = _require_out(args)
    if args.noise < 0:
        raise UsageError(f"argument --noise: must be >= 0, got {args.noise}")
    X = io_formats.read_tensor(args.tensor)
    obs = sample_observations(X, args.fraction, args.seed, args.noise)
    io_formats.write_observations(out, obs)
    logger.info(f"Wrote {obs.size} of {X.size} entries to {out}")
    return EXIT_OK


def cmd_complete(args) -> int:
    out = _require_out(args)
    solution, cfg = _run_solver(args)
    io_formats.write_tensor(out, solution.X_hat)
    diag_path = Path(args.diagnostics) if args.diagnostics else out.with_suffix('.json')
    io_formats.write_diagnostics(diag_path, solution, cfg, include_timing=not args.omit_timing)
    if args.components:
        io_formats.write_factors(args.components, solution.components)
    d = solution.diagnostics
    print(f"{solution.method}: {d.reason} after {d.iterations} iterations, final gap {d.final_gap}")
    return _exit_code(solution)


def cmd_factors(args) -> int:
    out = _require_out(args)
    solution, _ = _run_solver(args)
    opts = CpOptions(max_sweeps=args.max_sweeps, seed=args.seed, restarts=args.restarts)
    tucker, core_cp, full_cp = interpret(solution, args.n_components, args.rel_tol, opts)
    io_formats.write_cp(out, full_cp)
    if args.tucker:
        io_formats.write_tucker(args.tucker, tucker, core_path=args.core)
    elif args.core:
        io_formats.write_tensor(args.core, tucker.core)
    print(f"Tucker ranks {tucker.ranks}; CP fit on core {core_cp.fit:.6f}; weights {full_cp.weights.tolist()}")
    return _exit_code(solution)


def cmd_sweep(args) -> int:
    cfg = _solver_config(args)
    methods = [m.strip() for m in args.methods.split(',') if m.strip()]
    rows = run_sweep(args.shape, args.ranks, methods, args.fractions, cfg, nrep=args.nrep, seed=args.seed,
                     workers=args.workers, noise=args.noise, progress=not args.no_progress)
    if args.out:
        io_formats.write_sweep_csv(args.out, rows, include_timing=not args.omit_timing)
        logger.info(f"Wrote {len(rows)} rows to {args.out}")
    else:
        io_formats.write_sweep_csv(sys.stdout, rows, include_timing=not args.omit_timing)
    return EXIT_OK


def cmd_eval(args) -> int:
    X_hat = io_formats.read_tensor(args.estimate)
    X_true = io_formats.read_tensor(args.truth)
    obs = io_formats.read_observations(args.obs)
    error = generalization_error(X_hat, X_true, obs)
    print(io_formats.fmt(error))
    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            f.write(io_formats.fmt(error) + "\n")
    return EXIT_OK


COMMANDS = {
    'synth': cmd_synth,
    'mask': cmd_mask,
    'complete': cmd_complete,
    'factors': cmd_factors,
    'sweep': cmd_sweep,
    'eval': cmd_eval,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR

    if not args.command:
        parser.print_help()
        return EXIT_ERROR

    logging.basicConfig(level=getattr(logging, args.log_level),
                        format='%(asctime)s - %(levelname)s - %(message)s')
    logging.getLogger().setLevel(getattr(logging, args.log_level))

    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        logger.error(str(e))
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug("Traceback:", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
