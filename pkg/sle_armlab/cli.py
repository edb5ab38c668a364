"""
sle-armlab command line

    maps eval|selftest    explicit conformal maps
    simulate              one driving path and the flow of its marked points
    estimate              event probabilities on a grid and the fitted exponent
    verify SUITE          invariant and statistical checks with a JSON report

Exit status is 0 on success, 1 when an invariant fails, 2 on a usage error and 3
when a valid invocation fails while running.
"""
import argparse
import json
import logging
import math
import sys

import numpy as np
from filelock import Timeout

from . import __version__
from .conformal_maps import (
    SemiDisc,
    brownian_hm_estimate,
    configure_cache,
    halfstrip_f,
    halfstrip_fprime,
    halfstrip_g,
    hm_infinity,
    map_selftest,
    phi_bound_check,
    phi_iter,
    semidisc_g,
    slit_f,
    slit_g,
)
from .constants import (
    DEFAULT_BLOCK_SIZE,
    DEFAULT_C_BALL,
    DEFAULT_C_STEP,
    DEFAULT_DT_MAX,
    STATISTICAL_FAIL_Z,
    STRIP_HEIGHT,
)
from .crosscut_fixtures import fixture_corpus, hand_built_fixture
from .crossing_events import EventSpec, Variant, comparison_check
from .exceptions import (
    ConvergenceError,
    DataTooLarge,
    DomainError,
    FitError,
    StepSizeError,
    SwallowedMarkError,
)
from .exponent_lab import (
    GRID_EPS,
    GRID_RATIO,
    MODE_THRESHOLD,
    MODE_TRACE,
    MOMENT_KINDS,
    EstimateConfig,
    check_recursions,
    dt_robustness,
    estimate_probability,
    girsanov_check,
    importance_check,
    invariant_density_test,
    martingale_drift_test,
    moment_scaling_test,
)
from .loewner_core import (
    FlowState,
    StepPolicy,
    arc_containment_check,
    ball_containment_check,
    hull_geometry_check,
    phi_contraction_check,
    strip_lower_check,
    trace_polyline,
)
from .plotting import loglog_svg
from .run_store import RunStore, canonical_json, load_manifest, run_id_for
from .sle_driver import (
    DriverConfig,
    MartingaleSpec,
    ReplayProcess,
    run_flow,
    sample_sle,
    sample_sle_rho,
    scaling_invariance_check,
)
from .utils import _assert, format_complex, parse_complex, parse_grid

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_RUNTIME = 3

# raised while computing or writing a run, never by a bad invocation
_RUNTIME_ERRORS = (
    StepSizeError,
    SwallowedMarkError,
    ConvergenceError,
    FitError,
    DataTooLarge,
    Timeout,
)

MAP_NAMES = (
    "halfstrip-f",
    "halfstrip-g",
    "halfstrip-fprime",
    "semidisc",
    "slit-g",
    "slit-f",
    "phi",
)

SUITES = (
    "recursions",
    "martingale",
    "density",
    "comparison",
    "maps",
    "phi",
    "hm",
    "girsanov",
    "scaling",
    "moments",
    "importance",
    "robustness",
    "hulls",
)

_EVENT_VARIANTS = {
    ("H", True): Variant.H_ODD,
    ("H", False): Variant.H_EVEN,
    ("Hhat", True): Variant.HHAT_ODD,
    ("Hhat", False): Variant.HHAT_EVEN,
    ("Hpi", True): Variant.HPI_ODD,
    ("Hpi", False): Variant.HPI_EVEN,
}

# estimate settings and their defaults; flags and --config files use these keys
ESTIMATE_DEFAULTS = {
    "event": "H",
    "n": 1,
    "kappa": 6.0,
    "x": 1.0,
    "y": 0.0,
    "eps": None,
    "eps_grid": None,
    "ratio_grid": None,
    "grid_variable": None,
    "paths": 1000,
    "seed": 0,
    "mode": None,
    "importance": False,
    "nu": None,
    "coupled": False,
    "x_over_eps": None,
    "c_step": DEFAULT_C_STEP,
    "dt_max": DEFAULT_DT_MAX,
    "horizon": None,
    "block_size": DEFAULT_BLOCK_SIZE,
    "c_ball": DEFAULT_C_BALL,
    "renewal": "identity",
    "k_skip": 1,
    "line_height": None,
}

# two-sided normal tail beyond STATISTICAL_FAIL_Z
_FAIL_PVALUE = math.erfc(STATISTICAL_FAIL_Z / math.sqrt(2.0))


def _complex_arg(text):
    try:
        return parse_complex(text)
    except DomainError as err:
        raise argparse.ArgumentTypeError(str(err))


def event_variant(event, j):
    """
    Variant and crossing index for arm index j: odd j is the odd variant with
    n = (j + 1)/2, even j the even variant with n = j/2
    """
    _assert(event in ("H", "Hhat", "Hpi"), f"Unknown event {event!r}", DomainError)
    _assert(int(j) == j and j >= 1, "Arm index must be a positive integer", DomainError)
    j = int(j)
    odd = j % 2 == 1
    return _EVENT_VARIANTS[(event, odd)], (j + 1) // 2 if odd else j // 2


def _statistical(z):
    return z is not None and math.isfinite(z) and abs(z) > STATISTICAL_FAIL_Z


def _policy(args):
    kwargs = {}
    if getattr(args, "dt_max", None) is not None:
        kwargs["dt_max"] = args.dt_max
    if getattr(args, "c_step", None) is not None:
        kwargs["c_step"] = args.c_step
    return StepPolicy(**kwargs)


###
# maps
###
def _evaluate_map(args, z):
    name = args.map
    if name == "halfstrip-f":
        return halfstrip_f(args.y, z)
    if name == "halfstrip-g":
        return halfstrip_g(args.y, z)
    if name == "halfstrip-fprime":
        return halfstrip_fprime(args.y, z)
    if name == "semidisc":
        return semidisc_g(SemiDisc(args.x0, args.r), z)
    if name == "slit-g":
        return slit_g(args.w, args.dt, z)
    return slit_f(args.w, args.dt, z)


def cmd_maps(args):
    if args.maps_command == "selftest":
        checks = map_selftest()
        for check in checks:
            status = "PASS" if check.passed else "FAIL"
            print(f"{status} {check.name} (error {check.error:.3e})")
        return EXIT_OK if all(check.passed for check in checks) else EXIT_FAILURE

    if args.map == "phi":
        _assert(args.x is not None, "phi needs --x", DomainError)
        print(f"{phi_iter(args.k, args.x):.12g}")
        return EXIT_OK
    _assert(args.z, "Give at least one --z", DomainError)
    for z in args.z:
        print(format_complex(_evaluate_map(args, z)))
    return EXIT_OK


###
# simulate
###
def cmd_simulate(args):
    policy = _policy(args)
    config = DriverConfig(
        kappa=args.kappa,
        rho_left=args.rho_left,
        rho_right=args.rho_right,
        x_left=args.x_left if args.rho_left is not None else 0.0,
        x_right=args.x_right if args.rho_right is not None else 0.0,
        seed=args.seed,
        dt_policy=policy,
    )
    path = sample_sle_rho(config, args.horizon, args.path_index)
    summary = {
        "kappa": args.kappa,
        "seed": args.seed,
        "path_index": args.path_index,
        "steps": int(path.times.size - 1),
        "final_time": float(path.times[-1]),
        "termination": path.termination,
        "hit_side": path.hit_side,
        "hit_time": path.hit_time,
        "w_final": float(path.w[-1]),
        "w_min": float(np.min(path.w)),
        "w_max": float(np.max(path.w)),
    }
    if args.marks:
        marks = parse_grid(args.marks)
        state = FlowState.initial(marks, y=args.y, hit_fraction=policy.hit_fraction)
        state, _done = run_flow(ReplayProcess(path), state, args.kappa, policy)
        summary["marks"] = [
            {
                "x0": point.x0,
                "image": point.image,
                "deriv": point.deriv,
                "swallowed": point.swallowed,
                "swallow_time": point.swallow_time,
            }
            for point in state.marks
        ]
    if args.trace:
        chain = path.chain()
        steps, points = trace_polyline(chain, args.k_skip)
        ok, ratio = hull_geometry_check(chain, args.k_skip)
        summary["hull_geometry_ok"] = ok
        summary["max_height_ratio"] = ratio
        summary["trace"] = [[float(p.real), float(p.imag)] for p in points]
        summary["trace_steps"] = [int(s) for s in steps]

    print(canonical_json({k: v for k, v in summary.items() if k != "trace"}), end="")
    if args.out_dir:
        store = RunStore(args.out_dir)
        store.write_summary(summary)
        run_config = {
            k: v for k, v in vars(args).items() if k not in ("handler", "argv")
        }
        store.write_manifest(
            run_id_for(run_config, args.seed),
            run_config,
            __version__,
            " ".join(args.argv),
        )
    return EXIT_OK


###
# estimate
###
def merge_estimate_settings(args):
    """Defaults, then the --config file, then every flag given explicitly"""
    settings = dict(ESTIMATE_DEFAULTS)
    if args.config:
        with open(args.config) as fp:
            loaded = json.load(fp)
        unknown = sorted(set(loaded) - set(settings))
        _assert(not unknown, f"Unknown config keys {unknown}", DomainError)
        settings.update(loaded)
    for key in ESTIMATE_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    return settings


def estimate_config_from(settings):
    variant, n = event_variant(settings["event"], settings["n"])
    x, y = float(settings["x"]), float(settings["y"])
    if settings["ratio_grid"] is not None:
        grid = parse_grid(settings["ratio_grid"])
        grid_variable = GRID_RATIO
        eps = settings["eps"] if settings["eps"] is not None else 0.1 * x
    elif settings["eps_grid"] is not None:
        grid = parse_grid(settings["eps_grid"])
        grid_variable = GRID_EPS
        eps = grid[0]
    else:
        _assert(
            settings["eps"] is not None,
            "Give --eps, --eps-grid or --ratio-grid",
            DomainError,
        )
        grid = [float(settings["eps"])]
        grid_variable = GRID_EPS
        eps = grid[0]
    if settings["grid_variable"] is not None:
        _assert(
            settings["grid_variable"] == grid_variable,
            f"--grid-variable {settings['grid_variable']} does not match the grid",
            DomainError,
        )
    if settings["x_over_eps"] is not None:
        x = max(x, settings["x_over_eps"] * eps)
    spec = EventSpec(
        variant, n, eps, x, y, float(settings["kappa"]), renewal=settings["renewal"]
    )
    return EstimateConfig(
        spec=spec,
        grid=tuple(grid),
        grid_variable=grid_variable,
        paths=int(settings["paths"]),
        seed=int(settings["seed"]),
        policy=StepPolicy(dt_max=settings["dt_max"], c_step=settings["c_step"]),
        horizon=settings["horizon"],
        mode=settings["mode"],
        coupled=bool(settings["coupled"]),
        importance=bool(settings["importance"]),
        importance_nu=settings["nu"],
        block_size=int(settings["block_size"]),
        x_over_eps=settings["x_over_eps"],
        k_skip=int(settings["k_skip"]),
        c_ball=float(settings["c_ball"]),
        line_height=settings["line_height"],
    )


def write_estimate(store, result, config, command):
    """Results, summary, plot and manifest of one estimate run"""
    config_dict = config.to_dict()
    run_id = run_id_for(config_dict, config.seed)
    store.write_results([point.to_row() for point in result.points])
    summary = result.to_dict()
    summary["run_id"] = run_id
    summary["version"] = __version__
    store.write_summary(summary)
    spec = config.spec
    store.write_plot(
        loglog_svg(
            result.points,
            fit=result.fit,
            predicted=result.predicted,
            xlabel="x/(x-y)" if config.grid_variable == GRID_RATIO else "eps",
            title=f"{spec.variant.value} n={spec.n} kappa={spec.kappa:g}",
            salt=run_id,
        )
    )
    return store.write_manifest(run_id, config_dict, __version__, command)


def cmd_estimate(args):
    if args.from_manifest:
        manifest = load_manifest(args.from_manifest)
        config = EstimateConfig.from_dict(manifest["config"])
        logger.info("estimate: re-running manifest %s", manifest.get("run_id"))
    else:
        config = estimate_config_from(merge_estimate_settings(args))

    result = estimate_probability(config, threads=args.threads)
    store = RunStore(args.out_dir)
    manifest = write_estimate(store, result, config, " ".join(args.argv))

    if result.fit is None:
        print(f"fit failed: {result.fit_error} (predicted {result.predicted:.4f})")
    else:
        fit = result.fit
        print(
            f"slope {fit.slope:.4f} ± {fit.stderr_slope:.4f} "
            f"(predicted {result.predicted:.4f}, z {fit.z_score:+.2f})"
        )
    print(f"run {manifest['run_id']} written to {store.out_dir}")
    return EXIT_OK


###
# verify
###
def _suite_recursions(args):
    report = check_recursions(args.kappa, args.n_max)
    residual = report.max_residual
    return {"max_residual": residual, "residuals": report.residuals}, residual > 1e-12


def _suite_martingale(args):
    left = args.rho_left is not None
    spec = MartingaleSpec(
        args.kappa,
        rho_left=args.rho_left if left else 0.0,
        rho_right=args.rho,
        x_left=args.x_left if left else None,
        x_right=args.x,
    )
    result = martingale_drift_test(
        spec, args.paths or 20000, args.horizon or 0.05, args.seed, _policy(args)
    )
    return result.to_dict(), _statistical(result.z)


def _suite_density(args):
    result = invariant_density_test(args.kappa, args.nu, args.samples, seed=args.seed)
    z = (result.mean - result.expected_mean) / result.mean_stderr
    report = result.to_dict()
    report["z"] = z
    return report, _statistical(z) or result.pvalue < _FAIL_PVALUE


def _suite_comparison(args):
    fixture = hand_built_fixture()
    verdict = comparison_check(fixture.curve, fixture.outer, fixture.inner)
    counts = (verdict.outer_count, verdict.inner_count)
    violations = 0
    for item in fixture_corpus(args.fixtures, args.seed):
        if not comparison_check(item.curve, item.outer, item.inner).consistent:
            violations += 1
    report = {
        "hand_built_counts": list(counts),
        "hand_built_expected": list(fixture.expected),
        "fixtures": args.fixtures,
        "violations": violations,
    }
    return report, violations > 0 or counts != tuple(fixture.expected)


def _suite_maps(_args):
    checks = map_selftest()
    return {"checks": [c.to_dict() for c in checks]}, not all(c.passed for c in checks)


def _suite_phi(args):
    violations = phi_bound_check(k_max=args.k_max)
    report = {"violations": {str(k): v for k, v in violations.items()}}
    return report, any(violations.values())


def _suite_hm(args):
    segment = (args.y + 0j, args.y + 1j * STRIP_HEIGHT)
    exact = hm_infinity(args.y, segment)
    estimate, stderr = brownian_hm_estimate(
        args.y, segment, args.h, args.walkers, args.seed
    )
    z = (estimate - exact) / stderr if stderr > 0 else 0.0
    report = {
        "exact": exact,
        "estimate": estimate,
        "stderr": stderr,
        "relative_error": abs(estimate - exact) / exact,
        "z": z,
    }
    return report, _statistical(z)


def _suite_girsanov(args):
    result = girsanov_check(
        args.kappa,
        args.rho,
        args.x,
        args.paths or 5000,
        args.horizon or 0.5,
        threshold=args.threshold,
        seed=args.seed,
        policy=_policy(args),
    )
    return result.to_dict(), _statistical(result.z)


def _suite_scaling(args):
    statistic, pvalue = scaling_invariance_check(
        args.kappa, args.nu, paths=args.paths or 2000, seed=args.seed
    )
    return {"ks": statistic, "pvalue": pvalue}, pvalue < _FAIL_PVALUE


def _suite_moments(args):
    params = {"x": args.x}
    for key in ("nu", "lam", "b"):
        value = getattr(args, key)
        if value is not None:
            params["lambda" if key == "lam" else key] = value
    fit = moment_scaling_test(
        args.kind,
        args.kappa,
        params,
        parse_grid(args.grid),
        args.paths or 2000,
        seed=args.seed,
        policy=_policy(args),
    )
    return fit.to_dict(), _statistical(fit.z_score)


def _small_estimate_config(args, grid):
    spec = EventSpec(Variant.H_ODD, 1, grid[0], args.x, 0.0, args.kappa)
    return EstimateConfig(
        spec=spec,
        grid=tuple(grid),
        paths=args.paths or 2000,
        seed=args.seed,
        policy=_policy(args),
    )


def _suite_importance(args):
    config = _small_estimate_config(args, [args.eps])
    result = importance_check(config)
    return result.to_dict(), _statistical(result.z)


def _suite_robustness(args):
    config = _small_estimate_config(args, parse_grid(args.grid))
    result = dt_robustness(config)
    report = {
        "base": result.base.to_dict(),
        "refined": result.refined.to_dict(),
        "shift": result.shift,
        "stable": result.stable,
    }
    spread = max(result.base.stderr_slope, result.refined.stderr_slope)
    return report, spread > 0 and result.shift > STATISTICAL_FAIL_Z * spread


def _suite_hulls(args):
    policy = _policy(args)
    config = DriverConfig(args.kappa, seed=args.seed, dt_policy=policy)
    tol = 1e-6
    failures = {"geometry": 0, "arc": 0, "ball": 0, "strip": 0, "phi": 0}
    checked = {"arc": 0, "ball": 0, "strip": 0, "phi": 0}
    paths = args.paths or 10
    for index in range(paths):
        chain = sample_sle(config, args.horizon or 0.25, path_index=index).chain()
        ok, _ratio = hull_geometry_check(chain)
        failures["geometry"] += not ok
        outcomes = {
            "arc": arc_containment_check(chain, args.x, 0.05 * args.x),
            "ball": ball_containment_check(chain, args.x + 1j * args.x, 0.02 * args.x),
            "strip": strip_lower_check(chain, 0.0, 2.0, -1.0, 1.0),
            "phi": phi_contraction_check(chain, 2.0 * args.x, -args.x),
        }
        for name, value in outcomes.items():
            if value is None:
                continue
            checked[name] += 1
            if name == "strip":
                failed = value > 0
            elif name == "phi":
                failed = value < -tol
            else:
                failed = value > 1 + tol
            failures[name] += failed
    report = {"paths": paths, "checked": checked, "failures": failures}
    return report, any(failures.values())


_SUITE_RUNNERS = {
    "recursions": _suite_recursions,
    "martingale": _suite_martingale,
    "density": _suite_density,
    "comparison": _suite_comparison,
    "maps": _suite_maps,
    "phi": _suite_phi,
    "hm": _suite_hm,
    "girsanov": _suite_girsanov,
    "scaling": _suite_scaling,
    "moments": _suite_moments,
    "importance": _suite_importance,
    "robustness": _suite_robustness,
    "hulls": _suite_hulls,
}


def cmd_verify(args):
    report, failed = _SUITE_RUNNERS[args.suite](args)
    report = {"suite": args.suite, "failed": bool(failed), "result": report}
    text = canonical_json(report)
    print(text, end="")
    if args.out_dir:
        store = RunStore(args.out_dir)
        store.write_summary(report)
        run_config = {
            k: v for k, v in vars(args).items() if k not in ("handler", "argv")
        }
        store.write_manifest(
            run_id_for(run_config, args.seed),
            run_config,
            __version__,
            " ".join(args.argv),
        )
    if failed:
        logger.error("verify %s: invariant failed", args.suite)
    return EXIT_FAILURE if failed else EXIT_OK


###
# Parser
###
def _add_policy_flags(parser):
    parser.add_argument(
        "--c-step", type=float, default=None, help="step fraction of s^2/kappa"
    )
    parser.add_argument("--dt-max", type=float, default=None, help="largest time step")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sle-armlab",
        description="Boundary arm exponents of SLE: maps, simulation and experiments",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="more logging (repeatable)"
    )
    parser.add_argument("-q", "--quiet", action="store_true", help="errors only")
    parser.add_argument(
        "--cache-size",
        default=None,
        help="boundary inversion cache budget in bytes, eg. 16M",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    # maps
    maps = commands.add_parser("maps", help="explicit conformal maps")
    maps_commands = maps.add_subparsers(dest="maps_command", required=True)
    evaluate = maps_commands.add_parser("eval", help="evaluate one map")
    evaluate.add_argument("--map", choices=MAP_NAMES, required=True)
    evaluate.add_argument("--y", type=float, default=0.0, help="half-strip edge")
    evaluate.add_argument(
        "--z", type=_complex_arg, action="append", help="point such as 0+2i, repeatable"
    )
    evaluate.add_argument("--x0", type=float, default=0.0, help="semidisc center")
    evaluate.add_argument("--r", type=float, default=1.0, help="semidisc radius")
    evaluate.add_argument("--w", type=float, default=0.0, help="slit base")
    evaluate.add_argument("--dt", type=float, default=0.01, help="slit capacity time")
    evaluate.add_argument("--x", type=float, default=None, help="phi argument")
    evaluate.add_argument("--k", type=int, default=1, help="phi iterations")
    maps_commands.add_parser("selftest", help="run the map identity suite")
    maps.set_defaults(handler=cmd_maps)

    # simulate
    simulate = commands.add_parser("simulate", help="sample one driving path")
    simulate.add_argument("--kappa", type=float, required=True)
    simulate.add_argument("--rho-left", type=float, default=None)
    simulate.add_argument("--rho-right", type=float, default=None)
    simulate.add_argument("--x-left", type=float, default=-1.0)
    simulate.add_argument("--x-right", type=float, default=1.0)
    simulate.add_argument("--horizon", type=float, default=1.0)
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--path-index", type=int, default=0)
    simulate.add_argument(
        "--marks", default=None, help="boundary points to follow, eg. 1,2,-3"
    )
    simulate.add_argument("--y", type=float, default=0.0, help="tracked left point")
    simulate.add_argument("--trace", action="store_true", help="reconstruct the trace")
    simulate.add_argument("--k-skip", type=int, default=1)
    simulate.add_argument("--out-dir", default=None)
    _add_policy_flags(simulate)
    simulate.set_defaults(handler=cmd_simulate)

    # estimate: flags default to None so an explicit flag can be told apart
    estimate = commands.add_parser("estimate", help="estimate an arm exponent")
    estimate.add_argument("--event", choices=("H", "Hhat", "Hpi"), default=None)
    estimate.add_argument("--n", type=int, default=None, help="arm index j")
    estimate.add_argument("--kappa", type=float, default=None)
    estimate.add_argument("--x", type=float, default=None)
    estimate.add_argument("--y", type=float, default=None)
    estimate.add_argument("--eps", type=float, default=None)
    estimate.add_argument("--eps-grid", default=None, help="a:k, a:b:k or a,b,c")
    estimate.add_argument("--ratio-grid", default=None, help="grid of x/(x-y)")
    estimate.add_argument(
        "--grid-variable", choices=(GRID_EPS, GRID_RATIO), default=None
    )
    estimate.add_argument("--paths", type=int, default=None)
    estimate.add_argument("--seed", type=int, default=None)
    estimate.add_argument("--mode", choices=(MODE_THRESHOLD, MODE_TRACE), default=None)
    estimate.add_argument("--importance", action="store_true", default=None)
    estimate.add_argument(
        "--nu", type=float, default=None, help="importance force weight"
    )
    estimate.add_argument("--coupled", action="store_true", default=None)
    estimate.add_argument("--x-over-eps", type=float, default=None)
    estimate.add_argument("--horizon", type=float, default=None)
    estimate.add_argument("--block-size", type=int, default=None)
    estimate.add_argument("--c-ball", type=float, default=None)
    estimate.add_argument(
        "--renewal",
        choices=("identity", "upper", "lower"),
        default=None,
        help="ball radius factor at each leg end",
    )
    estimate.add_argument("--k-skip", type=int, default=None)
    estimate.add_argument("--line-height", type=float, default=None)
    estimate.add_argument("--threads", type=int, default=None)
    estimate.add_argument(
        "--config", default=None, help="JSON file of estimate settings"
    )
    estimate.add_argument("--from-manifest", default=None, help="re-run a manifest")
    estimate.add_argument("--out-dir", default="armlab-run")
    _add_policy_flags(estimate)
    estimate.set_defaults(handler=cmd_estimate)

    # verify
    verify = commands.add_parser("verify", help="run a check suite")
    verify.add_argument("suite", choices=SUITES)
    verify.add_argument("--kappa", type=float, default=6.0)
    verify.add_argument("--seed", type=int, default=0)
    verify.add_argument("--paths", type=int, default=None)
    verify.add_argument("--horizon", type=float, default=None)
    verify.add_argument("--x", type=float, default=1.0)
    verify.add_argument("--y", type=float, default=0.0)
    verify.add_argument("--rho", type=float, default=1.0)
    verify.add_argument("--rho-left", type=float, default=None)
    verify.add_argument("--x-left", type=float, default=-1.0)
    verify.add_argument("--nu", type=float, default=0.0)
    verify.add_argument("--n-max", type=int, default=5)
    verify.add_argument("--k-max", type=int, default=5)
    verify.add_argument("--fixtures", type=int, default=100)
    verify.add_argument("--samples", type=int, default=10000)
    verify.add_argument("--walkers", type=int, default=100000)
    verify.add_argument("--h", type=float, default=200.0)
    verify.add_argument("--threshold", type=float, default=0.3)
    verify.add_argument("--kind", choices=MOMENT_KINDS, default="prop31")
    verify.add_argument("--lambda", dest="lam", type=float, default=None)
    verify.add_argument("--b", type=float, default=None)
    verify.add_argument("--eps", type=float, default=0.1)
    verify.add_argument("--grid", default="0.2:4")
    verify.add_argument("--out-dir", default=None)
    _add_policy_flags(verify)
    verify.set_defaults(handler=cmd_verify)
    return parser


def _configure_logging(args):
    if args.quiet:
        level = logging.ERROR
    else:
        level = max(logging.DEBUG, logging.WARNING - 10 * args.verbose)
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_:
        return exit_.code if isinstance(exit_.code, int) else EXIT_USAGE
    args.argv = argv
    _configure_logging(args)
    try:
        if args.cache_size is not None:
            configure_cache(max_size_bytes=args.cache_size)
        return args.handler(args)
    except _RUNTIME_ERRORS as err:
        logger.debug("sle-armlab: runtime failure", exc_info=True)
        logger.error("%s failed: %s: %s", args.command, type(err).__name__, err)
        return EXIT_RUNTIME
    except (ValueError, OSError) as err:
        # domain errors and malformed JSON are both ValueErrors
        logger.debug("sle-armlab: usage error", exc_info=True)
        print(f"sle-armlab: error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
