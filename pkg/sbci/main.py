import sys
import time
import argparse
from contextlib import nullcontext
from pathlib import Path
from typing import List, Optional

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from loguru import logger
from sbci.config import (
    FCI_CONFIG, LOG_FILE, LOG_ROTATION, METHODS, PRESETS, RUNS_DIR, DavidsonConfig, OutputFiles,
    SolverConfig, ensure_directories, solver_config,
)
from sbci.core.errors import NonConvergenceError, SbciError


def setup_logging(verbose: bool = False, log_file: Optional[Path] = None) -> None:
    from sbci.utils.file_helper import FileManager

    logger.remove()
    level = "DEBUG" if verbose else "INFO"
    logger.add(
        sys.stderr,
        format="<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{message}</cyan>",
        level=level
    )
    if log_file is not None:
        FileManager.ensure_directory(Path(log_file).parent)
        logger.add(str(log_file), level="DEBUG", rotation=LOG_ROTATION)


class CliParser(argparse.ArgumentParser):
    """Usage errors print the usage text and exit with status 1."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def load_operator(args: argparse.Namespace):
    """Operator from --input (Matrix Market) or --fcidump, with the FCI problem when there is one."""
    from sbci.core.fci import as_operator
    from sbci.utils.fcidump import read_fcidump
    from sbci.utils.matrix_market import read_matrix_market

    if getattr(args, "input", None):
        return read_matrix_market(Path(args.input)), None

    problem = read_fcidump(Path(args.fcidump))
    if args.ms2 is not None:
        problem = problem.with_ms2(args.ms2)
    return as_operator(problem, max_det=args.max_det, allow_large=args.allow_large), problem


def build_config(args: argparse.Namespace) -> SolverConfig:
    from sbci.utils.file_helper import FileManager

    cfg = solver_config(args.preset)
    if getattr(args, "config", None):
        data = FileManager.load_json(Path(args.config))
        if not isinstance(data, dict):
            raise SbciError(f"cannot read solver config from {args.config}")
        cfg = SolverConfig.from_dict({**cfg.to_dict(), **data})
    return cfg.with_overrides(
        eps0=args.eps0, r0=args.r0, b_th=args.b_th, eps1=args.eps1,
        x_th1=args.x_th1, x_th2=args.x_th2, r1=args.r1,
        max_cycle=args.max_cycle, max_cycle_pair=args.max_cycle_pair,
        t_max=args.t_max, clamp_delta=args.clamp_delta,
    )


def run_method(op, method: str, nroots: int, cfg: SolverConfig, sink=None):
    from sbci.core.davidson import davidson_solve
    from sbci.core.preconditioner import GroundShiftPreconditioner
    from sbci.core.sbci1 import solve_n_states_sbci1
    from sbci.core.sbci2 import solve_n_states_sbci2

    if method == "sbci1":
        return solve_n_states_sbci1(op, nroots, cfg, sink=sink)
    if method == "sbci2":
        return solve_n_states_sbci2(op, nroots, cfg, sink=sink)
    if method == "davidson":
        pre = GroundShiftPreconditioner(op.diagonal, float(op.diagonal.min()), cfg.clamp_delta)
        return davidson_solve(op, pre, nroots, DavidsonConfig.from_solver_config(cfg, nroots), sink=sink)
    raise SbciError(f"unknown method '{method}', expected one of {METHODS}")


def timed_run(op, method: str, nroots: int, cfg: SolverConfig, sink=None):
    from sbci.core.diagnostics import RunSummary

    start_count = op.apply_count
    start = time.perf_counter()
    result = run_method(op, method, nroots, cfg, sink=sink)
    summary = RunSummary(
        method=result.method, nroots=nroots, dim=op.dim,
        energies=[float(e) for e in result.energies],
        iterations=result.iterations, restarts=result.restarts,
        matvecs=op.apply_count - start_count,
        wall_time=time.perf_counter() - start,
        peak_vectors=result.peak_vectors,
    )
    return result, summary


def print_energies(summary) -> None:
    print("\n" + "=" * 60)
    print(f"{summary.method.upper()}: {summary.nroots} states, dimension {summary.dim:,}")
    print("=" * 60)
    for i, energy in enumerate(summary.energies):
        print(f"  E[{i}] = {energy: .12f}")
    print(f"Iterations: {summary.iterations}, restarts: {summary.restarts}, "
          f"matvecs: {summary.matvecs}, time: {summary.wall_time:.2f}s")
    print("=" * 60)


def cmd_solve(args: argparse.Namespace) -> int:
    from sbci.core.diagnostics import TraceWriter
    from sbci.utils.file_helper import FileManager

    cfg = build_config(args)
    op, _ = load_operator(args)

    sink = TraceWriter(Path(args.trace)) if args.trace else nullcontext()
    with sink as trace_sink:
        _, summary = timed_run(op, args.method, args.nroots, cfg, sink=trace_sink)
    print_energies(summary)

    if args.summary:
        if not FileManager.save_json(summary.to_dict(), Path(args.summary)):
            return 1
        logger.info(f"Summary saved to {args.summary}")
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    from sbci.utils.matrix_market import write_matrix_market
    from sbci.utils.synthetic import gen_synthetic_ci_matrix

    op = gen_synthetic_ci_matrix(args.n, seed=args.seed, density=args.density, gap=args.gap,
                                 coupling=args.coupling, degeneracy_split=args.split)
    out = Path(args.out) if args.out else RUNS_DIR / OutputFiles.MATRIX_MTX
    write_matrix_market(op, out)
    logger.info(f"Synthetic matrix n={op.dim} ({op.matrix.nnz} nonzeros) written to {out}")
    return 0


def cmd_compare(args: argparse.Namespace) -> int:
    from sbci.utils.file_helper import FileManager

    cfg = build_config(args)
    op, _ = load_operator(args)

    summaries = []
    for method in METHODS:
        logger.info(f"Running {method}...")
        _, summary = timed_run(op, method, args.nroots, cfg)
        summaries.append(summary)

    reference = summaries[-1].energies
    print("\n" + "=" * 60)
    print("METHOD COMPARISON")
    print("=" * 60)
    print(f"{'method':<10} {'iters':>7} {'restarts':>8} {'matvecs':>8} {'time':>8} {'max|dE|':>10}")
    for summary in summaries:
        spread = max(abs(a - b) for a, b in zip(summary.energies, reference))
        print(f"{summary.method:<10} {summary.iterations:>7} {summary.restarts:>8} "
              f"{summary.matvecs:>8} {summary.wall_time:>7.2f}s {spread:>10.2e}")
    print("-" * 60)
    for i in range(args.nroots):
        row = "  ".join(f"{s.energies[i]: .12f}" for s in summaries)
        print(f"E[{i}]  {row}")
    print("=" * 60)

    if args.out:
        data = {s.method: s.to_dict() for s in summaries}
        if not FileManager.save_json(data, Path(args.out)):
            return 1
        logger.info(f"Comparison saved to {args.out}")
    return 0


def cmd_conserve(args: argparse.Namespace) -> int:
    from sbci.core.diagnostics import energy_conservation_report, read_trace
    from sbci.utils.file_helper import FileManager

    trace = read_trace(Path(args.trace))
    report = energy_conservation_report(trace, threshold=args.threshold)

    print("\n" + "=" * 60)
    print("ENERGY CONSERVATION")
    print("=" * 60)
    print(f"Entries: {len(report.entries)}")
    if report.median is not None:
        print(f"Median dev: {report.median:.3e}, 90th percentile: {report.p90:.3e}")
    for segment, median in report.segment_medians.items():
        print(f"  state:segment {segment:<8} median dev {median:.3e}")
    print(f"Passed: {report.passed}")
    print(report.note)
    print("=" * 60)

    if args.out:
        if not FileManager.save_json(report.to_dict(), Path(args.out)):
            return 1
        logger.info(f"Report saved to {args.out}")
    return 0


def cmd_fci(args: argparse.Namespace) -> int:
    from sbci.core.fci import enumerate_basis, spin_squared

    cfg = build_config(args)
    op, problem = load_operator(args)
    basis = enumerate_basis(problem.norb, problem.n_alpha, problem.n_beta)
    result, summary = timed_run(op, args.method, args.nroots, cfg)
    print_energies(summary)
    print(f"NORB={problem.norb} NELEC={problem.nelec} MS2={problem.ms2}")
    for i, pair in enumerate(result.eigenpairs):
        print(f"  state {i}: E = {pair.energy: .12f}  <S^2> = {spin_squared(basis, pair.vector):.6f}")
    return 0


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--nroots", type=int, default=1, help="Number of lowest states")
    parser.add_argument("--preset", choices=sorted(PRESETS), default="tight", help="Threshold preset")
    parser.add_argument("--config", help="JSON file with solver settings")
    parser.add_argument("--eps0", type=float, help="Energy-change convergence threshold")
    parser.add_argument("--r0", type=float, help="Residual-norm convergence threshold")
    parser.add_argument("--b-th", type=float, help="Stall threshold on |b|")
    parser.add_argument("--eps1", type=float, help="Stall threshold on |dE|")
    parser.add_argument("--x-th1", type=float, help="Lower bound on |x|")
    parser.add_argument("--x-th2", type=float, help="Upper bound on |x|")
    parser.add_argument("--r1", type=float, help="Residual blow-up ratio")
    parser.add_argument("--max-cycle", type=int, help="Restart period (single state)")
    parser.add_argument("--max-cycle-pair", type=int, help="Restart period (state pairs)")
    parser.add_argument("--t-max", type=int, help="Iteration cap per state")
    parser.add_argument("--clamp-delta", type=float, help="Preconditioner denominator clamp")
    parser.add_argument("--max-det", type=int, default=FCI_CONFIG.max_det, help="Determinant-space size guard")
    parser.add_argument("--allow-large", action="store_true", help="Build the FCI space past the size guard")


def _add_input_flags(parser: argparse.ArgumentParser, fcidump_only: bool = False) -> None:
    if fcidump_only:
        parser.add_argument("--fcidump", required=True, help="FCIDUMP integral file")
    else:
        source = parser.add_mutually_exclusive_group(required=True)
        source.add_argument("--input", help="Matrix Market file (coordinate real symmetric)")
        source.add_argument("--fcidump", help="FCIDUMP integral file")
    parser.add_argument("--ms2", type=int, help="Override 2*S_z of the FCIDUMP header")


def build_parser() -> CliParser:
    parser = CliParser(
        prog="sbci",
        description="Dynamics-inspired eigensolvers for sparse CI Hamiltonians",
        formatter_class=argparse.RawDescriptionHelpFormatter
    )

    parser.add_argument("-v", "--verbose", action="store_true", help="Enable verbose logging")
    parser.add_argument("--log-file", help=f"Also log to a rotating file, e.g. {LOG_FILE}")

    subparsers = parser.add_subparsers(title="commands", dest="command", help="Available commands",
                                       parser_class=CliParser)

    solve_parser = subparsers.add_parser("solve", help="Find the lowest eigenpairs")
    _add_input_flags(solve_parser)
    solve_parser.add_argument("--method", choices=METHODS, default="sbci1", help="Eigensolver")
    _add_solver_flags(solve_parser)
    solve_parser.add_argument("--trace", help="Write the per-iteration trace as CSV")
    solve_parser.add_argument("--summary", help="Write the run summary as JSON")
    solve_parser.set_defaults(func=cmd_solve)

    gen_parser = subparsers.add_parser("gen", help="Write a synthetic CI-like matrix")
    gen_parser.add_argument("--n", type=int, required=True, help="Dimension")
    gen_parser.add_argument("--seed", type=int, default=0, help="Random seed")
    gen_parser.add_argument("--density", type=float, default=0.02, help="Off-diagonal fill fraction")
    gen_parser.add_argument("--gap", type=float, default=0.1, help="Mean diagonal spacing")
    gen_parser.add_argument("--coupling", type=float, default=0.05, help="Off-diagonal amplitude")
    gen_parser.add_argument("--split", type=float, help="Force the two lowest eigenvalues this far apart")
    gen_parser.add_argument("--out", help="Output Matrix Market file")
    gen_parser.set_defaults(func=cmd_gen)

    compare_parser = subparsers.add_parser("compare", help="Run every method on the same input")
    _add_input_flags(compare_parser)
    _add_solver_flags(compare_parser)
    compare_parser.add_argument("--out", help="Write the side-by-side summaries as JSON")
    compare_parser.set_defaults(func=cmd_compare)

    conserve_parser = subparsers.add_parser("conserve", help="Energy-conservation report from a trace")
    conserve_parser.add_argument("--trace", required=True, help="CSV trace written by 'solve'")
    conserve_parser.add_argument("--threshold", type=float, default=0.10, help="Median dev pass threshold")
    conserve_parser.add_argument("--out", help="Write the report as JSON")
    conserve_parser.set_defaults(func=cmd_conserve)

    fci_parser = subparsers.add_parser("fci", help="Solve an FCIDUMP problem and report <S^2>")
    _add_input_flags(fci_parser, fcidump_only=True)
    fci_parser.add_argument("--method", choices=METHODS, default="sbci1", help="Eigensolver")
    _add_solver_flags(fci_parser)
    fci_parser.set_defaults(func=cmd_fci)

    return parser


def cli_main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.verbose, Path(args.log_file) if args.log_file else None)

    if not args.command:
        parser.print_help()
        return 0

    try:
        ensure_directories()
        return args.func(args)
    except KeyboardInterrupt:
        logger.info("\nOperation cancelled by user")
        return 130
    except NonConvergenceError as e:
        logger.error(f"Not converged: {e}")
        return 2
    except (SbciError, OSError, ValueError) as e:
        logger.error(f"Error: {e}")
        if args.verbose:
            import traceback
            traceback.print_exc()
        return 1


def main() -> int:
    return cli_main(sys.argv[1:])


if __name__ == "__main__":
    sys.exit(main())
