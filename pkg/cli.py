import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from audit import log_step, new_run_id
from csv_loader import load_grid, write_flow_trace, write_green_grid, write_trajectory
from dynamics import integrate
from errors import ConditionFailure, InvalidInputError, PreconditionError, VortexError
from geometry import (PeriodicField, Surface, conformal_torus, flat_torus, random_configuration,
                      random_points, retract, round_sphere, tangent_basis)
from green import green_grid, green_mean, green_pairs, singularity_slope
from guardrails import screen_config
from hamiltonian import PsiSpec, VortexSystem, kirchhoff_routh, log_k, morse_check, psi_zero, two_log_k
from schemas import GreenTestReport, RunConfig, RunReport
from search import (Termination, collision_bound_check, gradient_flow, linking_minimax, multistart,
                    newton_refine, pair_extremum)
from special import (check_psi_invariance, classify_sphere_triple, fixed_circle_search, reflection_search,
                     sphere_equator_reflection, torus_reflection)
from vorticity import gamma_condition, sinh_poisson_gammas

load_dotenv()

logger = logging.getLogger("vortex")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_REFUSED = 2

FIND_EQUILIBRIA_HELP = """\
find-equilibria picks one method, recorded as result.method:
  flow             config has points: ascent flow, then Newton refinement
  pair_extremum    N = 2 on a flat torus or round sphere with a zero or Kirchhoff-Routh psi
  linking_minimax  any other torus run
  multistart       any other sphere run; search.multistart > 0 adds it to any run
"""


@dataclass
class RunContext:
    command: str
    cfg: RunConfig
    base_dir: str
    out_dir: str
    run_id: str
    progress: bool
    grids: dict
    surface: Optional[Surface] = None
    psi: Optional[PsiSpec] = None

    def artifact(self, suffix: str) -> str:
        return os.path.join(self.out_dir, f"{self.command}_{self.run_id[:12]}{suffix}")

    def system(self) -> VortexSystem:
        if self.cfg.points is None:
            raise InvalidInputError(f"{self.command} needs 'points' in the config")
        return VortexSystem(self.surface, np.asarray(self.cfg.points, dtype=float), self.cfg.gammas, self.psi)


# ---------------------------------------------------------------- config

def load_config(path: Optional[str]) -> Tuple[RunConfig, str]:
    if path is None:
        return RunConfig(), os.getcwd()
    with open(path, encoding="utf-8") as f:
        text = f.read()
    return RunConfig.model_validate_json(text), os.path.dirname(os.path.abspath(path))


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    data = cfg.model_dump()
    if args.seed is not None:
        data["seed"] = args.seed
    if args.threads is not None:
        data["threads"] = args.threads
    if args.tol_grad is not None:
        for block in ("search", "classify", "symmetric", "morse"):
            data[block]["tol_grad"] = args.tol_grad
    if args.grid is not None:
        data["search"]["grid"] = args.grid
        data["green_test"]["grid"] = args.grid
    if args.tol_gamma is not None:
        data["check_gamma"]["tol"] = args.tol_gamma
    return RunConfig.model_validate(data)


def _field(grid: Optional[np.ndarray], surface: Surface) -> Optional[PeriodicField]:
    if grid is None:
        return None
    if not surface.is_torus:
        raise InvalidInputError("grid fields are only supported on tori")
    return PeriodicField(grid, surface.lattice)


def build_surface(ctx: RunContext) -> Surface:
    sc = ctx.cfg.surface
    if sc.kind == "round_sphere":
        return round_sphere(sc.radius)
    if sc.kind == "flat_torus":
        return flat_torus(sc.lattice)
    if ctx.grids.get("conformal_factor") is None:
        raise InvalidInputError("conformal_torus needs surface.conformal_factor")
    return conformal_torus(ctx.grids["conformal_factor"], sc.lattice)


def build_psi(ctx: RunContext) -> PsiSpec:
    pc = ctx.cfg.psi
    if pc.variant == "zero":
        return psi_zero()
    if pc.variant == "kirchhoff_routh":
        return kirchhoff_routh(pc.self_energy_sign)
    K = _field(ctx.grids.get("K"), ctx.surface)
    if K is None:
        raise InvalidInputError(f"psi variant {pc.variant} needs psi.K")
    if pc.variant == "log_k":
        return log_k(K, pc.self_energy_sign)
    K2 = _field(ctx.grids.get("K2"), ctx.surface)
    if K2 is None:
        raise InvalidInputError("psi variant two_log_k needs psi.K2")
    return two_log_k(K, K2, pc.m, pc.weights)


def load_grids(cfg: RunConfig, base_dir: str) -> dict:
    specs = {"conformal_factor": cfg.surface.conformal_factor, "K": cfg.psi.K, "K2": cfg.psi.K2}
    return {name: (load_grid(spec, base_dir) if spec is not None else None) for name, spec in specs.items()}


# ---------------------------------------------------------------- commands

def _fd_gradient_error(s: Surface, p: np.ndarray, q: np.ndarray, h: float) -> float:
    _, grad = green_pairs(s, p, q)
    fd = np.zeros_like(grad)
    for e in tangent_basis(s, p):
        gp, _ = green_pairs(s, retract(s, p, h * e), q)
        gm, _ = green_pairs(s, retract(s, p, -h * e), q)
        fd = fd + (float(gp) - float(gm)) / (2.0 * h) * e
    return float(np.linalg.norm(fd - grad) / max(1.0, float(np.linalg.norm(grad))))


def cmd_green_test(ctx: RunContext) -> Tuple[dict, int]:
    opts, s = ctx.cfg.green_test, ctx.surface
    rng = np.random.default_rng(ctx.cfg.seed)
    P = random_points(s, opts.n_pairs, rng)
    Q = random_points(s, opts.n_pairs, rng)
    gpq, _ = green_pairs(s, P, Q)
    gqp, _ = green_pairs(s, Q, P)
    p0 = P[0]
    m = {
        "symmetry_max": float(np.max(np.abs(gpq - gqp))),
        "mean_abs": abs(green_mean(s, p0, n=opts.quadrature_grid)),
        "slope": singularity_slope(s, p0),
        "gradient_rel_error": max(_fd_gradient_error(s, P[k], Q[k], opts.fd_step) for k in range(min(8, opts.n_pairs))),
    }
    checks = {
        "symmetry": m["symmetry_max"] < opts.tol_symmetry,
        "mean_zero": m["mean_abs"] < opts.tol_mean,
        "log_singularity": abs(m["slope"] + 1.0 / (2.0 * np.pi)) < opts.tol_slope,
        "gradient": m["gradient_rel_error"] < opts.tol_gradient,
    }
    report = GreenTestReport(surface=s.kind.value, measurements=m, checks=checks, all_passed=all(checks.values()))
    for name, ok in checks.items():
        log_step(ctx.out_dir, ctx.run_id, f"green_test.{name}", {"surface": s.kind.value}, {"passed": ok})
    return report.model_dump(), EXIT_OK if report.all_passed else EXIT_ERROR


def cmd_green_grid(ctx: RunContext) -> Tuple[dict, int]:
    opts, s = ctx.cfg.green_test, ctx.surface
    source = np.asarray(opts.source, dtype=float) if opts.source else random_points(s, 1, np.random.default_rng(ctx.cfg.seed))[0]
    q, values = green_grid(s, source, opts.grid)
    path = write_green_grid(q, values, ctx.artifact("_grid.csv"))
    return {"source": source.tolist(), "nodes": int(values.size), "csv": path}, EXIT_OK


def cmd_check_gamma(ctx: RunContext) -> Tuple[dict, int]:
    opts = ctx.cfg.check_gamma
    gammas, taus = np.asarray(ctx.cfg.gammas, dtype=float), []
    if opts.sinh_poisson is not None:
        sp = opts.sinh_poisson
        gammas, taus = sinh_poisson_gammas(sp.m, sp.n, sp.tau)
    check = gamma_condition(gammas, opts.tol).model_copy(update={"resonant_taus": taus})
    log_step(ctx.out_dir, ctx.run_id, "check_gamma", {"gammas": gammas.tolist()}, check.model_dump())
    result = dict(check.model_dump(), gammas=gammas.tolist())
    return result, EXIT_OK if check.passed else EXIT_REFUSED


def cmd_find_equilibria(ctx: RunContext) -> Tuple[dict, int]:
    cfg, s = ctx.cfg, ctx.surface
    opts = cfg.search
    n = len(cfg.gammas)
    result: Dict[str, object] = {}
    if cfg.points is not None:
        result["method"] = "flow"
        sys_ = ctx.system()
        trace = gradient_flow(sys_, None, opts.flow)
        result["flow"] = trace.summary().model_dump()
        result["flow_csv"] = write_flow_trace(trace, ctx.artifact("_flow.csv"))
        if trace.termination == Termination.COLLISION:
            result["collision"] = collision_bound_check(sys_, trace).model_dump()
        elif trace.grad_norms[-1] < 1e-2:
            result["equilibrium"] = newton_refine(sys_, trace.final, tol=min(opts.tol_grad, 1e-10)).model_dump()
    elif n == 2 and s.is_homogeneous and ctx.psi.is_position_free:
        # H only sees the pair distance here, so its extremum is critical and no family is needed
        logger.info("N = 2 on a homogeneous surface: using the pair distance extremum instead of the minimax")
        result["method"] = "pair_extremum"
        log_step(ctx.out_dir, ctx.run_id, "pair_extremum", {"gammas": cfg.gammas}, {"seed": cfg.seed})
        start = random_configuration(s, 2, np.random.default_rng(cfg.seed))
        result["equilibrium"] = pair_extremum(VortexSystem(s, start, cfg.gammas, ctx.psi)).model_dump()
    elif s.is_torus:
        result["method"] = "linking_minimax"

        def on_sweep(state):
            log_step(ctx.out_dir, ctx.run_id, "minimax.sweep", {"sweep": state["sweep"]}, state)

        res = linking_minimax(s, cfg.gammas, ctx.psi, opts, threads=cfg.threads, seed=cfg.seed,
                              progress=ctx.progress, on_sweep=on_sweep)
        result["minimax"] = res.model_dump()
    if opts.multistart or "method" not in result:
        start = random_configuration(s, n, np.random.default_rng(cfg.seed))
        found = multistart(VortexSystem(s, start, cfg.gammas, ctx.psi), max(opts.multistart, 8), cfg.seed,
                           opts.flow, cfg.threads)
        result["multistart"] = [r.model_dump() for r in found]
        result.setdefault("method", "multistart")
    return result, EXIT_OK


def cmd_classify_sphere(ctx: RunContext) -> Tuple[dict, int]:
    res = classify_sphere_triple(ctx.cfg.gammas, ctx.cfg.classify.tol_grad)
    log_step(ctx.out_dir, ctx.run_id, "classify_sphere", {"gammas": ctx.cfg.gammas}, {"exists": res.exists})
    return res.model_dump(), EXIT_OK


def cmd_symmetric_search(ctx: RunContext) -> Tuple[dict, int]:
    cfg, s, opts = ctx.cfg, ctx.surface, ctx.cfg.symmetric
    involution = torus_reflection(s, opts.axis, opts.offset) if s.is_torus else sphere_equator_reflection(s)
    check_psi_invariance(s, ctx.psi, cfg.gammas, involution, swap_ends=opts.mode == "reflection", seed=cfg.seed)
    if opts.mode == "fixed_circle":
        res = fixed_circle_search(s, cfg.gammas, involution.circles[0], ctx.psi, nodes=opts.nodes, tol=opts.tol_grad)
    else:
        res = reflection_search(s, cfg.gammas, involution, ctx.psi, n_starts=opts.n_starts, seed=cfg.seed,
                                tol=opts.tol_grad, threads=cfg.threads)
    log_step(ctx.out_dir, ctx.run_id, "symmetric_search", {"mode": opts.mode},
             {"h_value": res.report.h_value, "grad_norm": res.full_grad_norm})
    code = EXIT_OK if res.full_grad_norm < opts.tol_grad else EXIT_ERROR
    return res.model_dump(), code


def cmd_simulate(ctx: RunContext) -> Tuple[dict, int]:
    traj = integrate(ctx.system(), opts=ctx.cfg.dynamics)
    path = write_trajectory(traj, ctx.artifact("_trajectory.csv"))
    return dict(traj.summary().model_dump(), csv=path), EXIT_OK


def cmd_morse_check(ctx: RunContext) -> Tuple[dict, int]:
    opts = ctx.cfg.morse
    sys_ = ctx.system()
    if opts.refine:
        sys_ = sys_.with_points(newton_refine(sys_).point)
    report = morse_check(sys_, tol_grad=opts.tol_grad, zero_rel=opts.zero_rel)
    return report.model_dump(), EXIT_OK


COMMANDS: Dict[str, Callable[[RunContext], Tuple[dict, int]]] = {
    "green-test": cmd_green_test,
    "green-grid": cmd_green_grid,
    "check-gamma": cmd_check_gamma,
    "find-equilibria": cmd_find_equilibria,
    "classify-sphere": cmd_classify_sphere,
    "symmetric-search": cmd_symmetric_search,
    "simulate": cmd_simulate,
    "morse-check": cmd_morse_check,
}


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vortex", description="Equilibria of point vortices on closed surfaces.",
                                     epilog=FIND_EQUILIBRIA_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration")
    parser.add_argument("--out", default=os.environ.get("VORTEX_OUT_DIR", "./runs"))
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--tol-grad", type=float, default=None)
    parser.add_argument("--tol-gamma", type=float, default=None)
    parser.add_argument("--grid", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")
    return parser


def _env_defaults(args: argparse.Namespace) -> None:
    if args.seed is None and os.environ.get("VORTEX_SEED"):
        args.seed = int(os.environ["VORTEX_SEED"])
    if args.threads is None and os.environ.get("VORTEX_THREADS"):
        args.threads = int(os.environ["VORTEX_THREADS"])


def _write_report(ctx_out: str, command: str, run_id: str, code: int, config: dict, result: dict,
                  error: Optional[str]) -> str:
    report = RunReport(command=command, run_id=run_id, created_at=time.strftime("%Y-%m-%dT%H:%M:%S"),
                       exit_code=code, config=config, result=result, error=error)
    os.makedirs(ctx_out, exist_ok=True)
    path = os.path.join(ctx_out, f"{command}_{run_id[:12]}.json")
    with open(path, "w", encoding="utf-8") as f:
        f.write(report.model_dump_json(indent=2))
    return path


def _validation_message(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e.get("loc", ())) or "<root>"
        parts.append(f"{loc}: {e.get('msg')}")
    return "invalid config: " + "; ".join(parts)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    _env_defaults(args)
    try:
        cfg, base_dir = load_config(args.config)
        cfg = apply_overrides(cfg, args)
    except ValidationError as e:
        logger.error(_validation_message(e))
        return EXIT_ERROR
    except (OSError, json.JSONDecodeError) as e:
        logger.error("cannot read config: %s", e)
        return EXIT_ERROR

    config_json = cfg.model_dump_json()
    run_id = new_run_id(config_json, cfg.seed)
    progress = os.environ.get("VORTEX_PROGRESS", "false").strip().lower() == "true"
    result: dict = {}
    error = None
    try:
        ctx = RunContext(args.command, cfg, base_dir, args.out, run_id, progress, load_grids(cfg, base_dir))
        ok, flags = screen_config(cfg, ctx.grids)
        for flag in flags:
            logger.warning("config screening: %s", flag)
        if not ok:
            raise InvalidInputError("; ".join(flags))
        ctx.surface = build_surface(ctx)
        ctx.psi = build_psi(ctx)
        log_step(args.out, run_id, "start", {"command": args.command}, {"flags": flags})
        result, code = COMMANDS[args.command](ctx)
    except ConditionFailure as e:
        code, error = EXIT_REFUSED, str(e)
        result = {"worst_subset": list(e.subset), "worst_value": e.value}
    except PreconditionError as e:
        code, error = EXIT_REFUSED, str(e)
    except VortexError as e:
        code, error = EXIT_ERROR, str(e)
    except Exception as e:  # noqa: BLE001
        logger.exception("unexpected failure")
        code, error = EXIT_ERROR, f"{type(e).__name__}: {e}"
    if error:
        logger.error("%s failed: %s", args.command, error)
    path = _write_report(args.out, args.command, run_id, code, json.loads(config_json), result, error)
    logger.info("%s finished with exit code %d; report %s", args.command, code, path)
    return code


if __name__ == "__main__":
    sys.exit(main())
