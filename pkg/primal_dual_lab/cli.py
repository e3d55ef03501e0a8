# primal_dual_lab/cli.py

import argparse
import json
import logging
import os
import sys
import time
from typing import Any, Callable, Dict, List, Optional, Tuple

from .config import RunConfig, build_hyperparams, build_initial_state, build_problem, load_config
from .errors import (
    AssumptionViolated,
    ConfigError,
    DimensionMismatchError,
    DivergenceDetected,
    ExpressionSyntaxError,
    HyperParameterError,
    LabError,
    NondifferentiablePointError,
    StrictComplementarityViolated,
    UnknownProblemError,
    UnsupportedProblemError,
    VariableIndexError,
)
from .functionals import aug_lagrangian_hessian
from .harness import damping_threshold, omega_sweep
from .problems import (
    KKTGuess,
    ProblemSpec,
    catalog_expressions,
    check_derivatives,
    first_kkt,
    from_config,
    oracle_gap,
    random_points,
)
from .serialize import report_to_dict, write_json, write_sweep_csv, write_trajectory_csv
from .solvers import run
from .stability import analyze_point
from .utils import setup_logger
from .verify import VerifyOptions, format_table, run_suites, summary

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_ASSUMPTION = 4

CONFIG_ERRORS = (
    ConfigError,
    UnknownProblemError,
    DimensionMismatchError,
    HyperParameterError,
    ExpressionSyntaxError,
    VariableIndexError,
    UnsupportedProblemError,
    ValueError,
)
ASSUMPTION_ERRORS = (AssumptionViolated, StrictComplementarityViolated, NondifferentiablePointError)


def _diagnose(error: BaseException, code: int) -> int:
    """Logs the error and writes a one-line JSON reason to stderr."""
    reason = getattr(error, "reason", None) or ("config error" if code == EXIT_CONFIG else "error")
    logger.error(f"{type(error).__name__}: {error}")
    print(json.dumps({"error": str(error), "reason": reason}), file=sys.stderr)
    return code


def _known_point(config: RunConfig) -> Tuple[ProblemSpec, KKTGuess]:
    problem = build_problem(config.problem)
    guess = first_kkt(problem)
    if guess is None:
        raise ConfigError(f"problem '{problem.name}' has no known KKT point; set x_star in [problem]")
    return problem, guess


def cmd_solve(config: RunConfig, args: argparse.Namespace) -> int:
    problem = build_problem(config.problem)
    solver = config.solver
    init = build_initial_state(problem, solver)
    hp = build_hyperparams(solver)
    path = os.path.join(config.output.out, "trajectory.csv")
    logger.info(f"Running {solver.rule} on {problem.name} for at most {solver.max_steps} steps")
    try:
        trajectory = run(
            problem,
            solver.rule,
            init,
            hp,
            solver.max_steps,
            stop_tol=solver.stop_tol,
            first_step=solver.first_step,
            divergence_bound=solver.divergence_bound,
        )
    except DivergenceDetected as e:
        write_trajectory_csv(path, problem, e.trajectory, footer=f"diverged at t={e.step}")
        raise
    write_trajectory_csv(path, problem, trajectory)
    final = trajectory.final_metrics
    logger.info(
        f"{len(trajectory)} steps, final KKT residual {final.kkt_residual:.3e}, converged={trajectory.converged}"
    )
    return EXIT_OK


def cmd_stability(config: RunConfig, args: argparse.Namespace) -> int:
    problem, guess = _known_point(config)
    hp = build_hyperparams(config.solver)
    settings = config.stability
    analysis = analyze_point(
        problem,
        guess,
        hp,
        tol_act=settings.tol_act,
        strict_tol=settings.strict_tol,
        lssp_margin=settings.lssp_margin,
        c_max=settings.c_max,
        kkt_tol=settings.kkt_tol,
    )
    cert = analysis.certificate
    al_hessian = aug_lagrangian_hessian(problem, cert.x, cert.lam, cert.mu, hp.c, settings.margin)
    payload: Dict[str, Any] = {
        "problem": problem.name,
        "kkt": {"x": cert.x, "lambda": cert.lam, "mu": cert.mu},
        "hyperparams": {"eta_x": hp.eta_x, "eta_dual": hp.eta_dual, "c": hp.c, "omega": hp.omega},
        "certificate": {
            "stationarity": cert.stationarity,
            "equality": cert.equality,
            "inequality": cert.inequality,
            "complementarity": cert.complementarity,
            "active": list(cert.active),
            "inactive": list(cert.inactive),
            "strict_margin": cert.strict_margin,
            "licq_min_singular": cert.licq_min_singular,
            "sosc_min_eig": cert.sosc_min_eig,
        },
        "assumptions": analysis.verdicts,
        "J_AL": report_to_dict(analysis.al),
        "J_OG": report_to_dict(analysis.og),
        "thm35_gap": analysis.relation.gap if analysis.relation is not None else None,
        "convexification_threshold": analysis.threshold,
        "al_hessian": al_hessian.assembled(),
    }
    if analysis.relation is None:
        logger.info(f"omega={hp.omega} differs from c={hp.c}; the spectral gap is not computed")
    write_json(os.path.join(config.output.out, "stability.json"), payload)
    return EXIT_OK


def cmd_sweep(config: RunConfig, args: argparse.Namespace) -> int:
    problem, guess = _known_point(config)
    hp = build_hyperparams(config.solver)
    paired_init = build_initial_state(problem, config.solver) if config.sweep.paired_steps > 0 else None
    rows = omega_sweep(problem, guess, hp, config.sweep.omegas, paired_init, config.sweep.paired_steps)
    write_sweep_csv(os.path.join(config.output.out, "sweep.csv"), rows)
    threshold = damping_threshold(rows, config.sweep.imag_tol)
    if threshold is None:
        logger.info("The spectrum stays complex at the end of the grid")
    else:
        logger.info(f"Real spectrum from omega={threshold} onwards")
    return EXIT_OK


def cmd_verify(config: RunConfig, args: argparse.Namespace) -> int:
    options = VerifyOptions(
        seed=config.output.seed,
        perturb=args.perturb,
        derivative_points=config.derivatives.points,
        fd_step=config.derivatives.fd_step,
        derivative_tol=config.derivatives.tol,
    )
    results = run_suites(args.suite, options)
    print(format_table(results))
    report = summary(results)
    write_json(os.path.join(config.output.out, "verify_summary.json"), report)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning(f"{len(failed)} suite(s) failed: {', '.join(failed)}")
        return EXIT_FAILED
    logger.info(f"All {len(results)} suite(s) passed")
    return EXIT_OK


def cmd_check_derivatives(config: RunConfig, args: argparse.Namespace) -> int:
    problem = build_problem(config.problem)
    settings = config.derivatives
    parsed = None
    if config.problem.builtin is not None:
        parsed = from_config(catalog_expressions(config.problem.builtin))

    points: List[Dict[str, Any]] = []
    failures = 0
    for x in random_points(problem, settings.points, config.output.seed, settings.scale):
        report = check_derivatives(problem, x, settings.fd_step)
        entry: Dict[str, Any] = {"x": x, "max_error": report.max_error, "failures": report.failures(settings.tol)}
        if parsed is not None:
            entry["oracle_gap"] = oracle_gap(problem, parsed, x)
            if entry["oracle_gap"] > settings.tol:
                entry["failures"].append("oracle")
        if entry["failures"]:
            failures += 1
            logger.warning(f"Derivative check failed at x={list(x)}: {', '.join(entry['failures'])}")
        points.append(entry)

    write_json(
        os.path.join(config.output.out, "derivatives.json"),
        {"problem": problem.name, "fd_step": settings.fd_step, "tol": settings.tol, "points": points},
    )
    logger.info(f"{len(points) - failures} of {len(points)} point(s) passed on {problem.name}")
    return EXIT_FAILED if failures else EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "solve": cmd_solve,
    "stability": cmd_stability,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "check-derivatives": cmd_check_derivatives,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="Path to an experiment configuration file.")
    common.add_argument("--out", type=str, default=None, help="Directory for result files (overrides [output] out).")
    common.add_argument("--seed", type=int, default=None, help="Seed for randomized checks (overrides [output] seed).")
    common.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Set the logging verbosity.",
    )

    parser = argparse.ArgumentParser(
        prog="primal-dual-lab",
        description="Run and analyze primal-dual methods for constrained optimization.",
    )
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[common], help="Run a step rule and write its trajectory.")
    commands.add_parser("stability", parents=[common], help="Analyze both iteration Jacobians at a KKT point.")
    commands.add_parser("sweep", parents=[common], help="Sweep the optimism coefficient.")
    verify = commands.add_parser("verify", parents=[common], help="Run the property suites.")
    verify.add_argument(
        "--suite",
        action="append",
        default=None,
        help="Run only this suite; may be repeated.",
    )
    verify.add_argument("--perturb", action="store_true", help="Shift a Jacobian entry so spectral suites fail.")
    commands.add_parser("check-derivatives", parents=[common], help="Compare derivatives with finite differences.")
    return parser


def _with_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    output: Dict[str, Any] = {}
    if args.out is not None:
        output["out"] = args.out
    if args.seed is not None:
        output["seed"] = args.seed
    if not output:
        return config
    return config.model_copy(update={"output": config.output.model_copy(update=output)})


def main(argv: Optional[List[str]] = None) -> int:
    """
    Parses command-line arguments and dispatches to a command.

    Args:
        argv: Arguments without the program name; defaults to sys.argv.

    Returns:
        The process exit code.
    """
    args = build_parser().parse_args(argv)

    try:
        config = _with_overrides(load_config(args.config), args)
        os.makedirs(config.output.out, exist_ok=True)
    except ConfigError as e:
        return _diagnose(e, EXIT_CONFIG)
    except OSError as e:
        return _diagnose(ConfigError(f"could not create output directory: {e}"), EXIT_CONFIG)

    setup_logger(output_dir=config.output.out, level=args.log_level)

    start_time = time.perf_counter()
    logger.info(f"Starting '{args.command}' with results in '{config.output.out}'")
    try:
        code = COMMANDS[args.command](config, args)
    except DivergenceDetected as e:
        code = _diagnose(e, EXIT_DIVERGED)
    except ASSUMPTION_ERRORS as e:
        code = _diagnose(e, EXIT_ASSUMPTION)
    except CONFIG_ERRORS as e:
        code = _diagnose(e, EXIT_CONFIG)
    except LabError as e:
        code = _diagnose(e, EXIT_FAILED)

    end_time = time.perf_counter()
    logger.info(f"'{args.command}' finished with exit code {code}. Total time: {end_time - start_time:.2f} seconds.")
    return code
