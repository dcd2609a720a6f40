"""Command-line front end.

Exit status: 0 on success (warnings allowed), 1 for usage or configuration
errors, 2 for numerical failures and violated assumptions. All files are
written after the computation finishes, so a failed run leaves no partial
output.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__, numkit
from .bounds import epsilon_for_xi, largest_c, t1_horizon, xi_for_epsilon
from .config import Model, RunConfig, load_config
from .errors import ConfigError, HgoSafeError, NumericalError
from .pipeline import PipelineConfig, _jsonable, finite_horizon_pipeline, infinite_horizon_pipeline
from .plant import estimate_constants
from .presets import PRESETS
from .reach import EmptySetWarning, beta_sweep, invariant_set, set_area, write_contours_csv
from .sim import control_gap, saturation_intervals, simulate_output_feedback, simulate_state_feedback, sup_distance


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> tuple:
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML run configuration")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration (default double-integrator)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--label", help="run label used in output file names")
    common.add_argument("--threads", type=int, help="worker threads for sweeps (0 = auto)")

    p = _Parser(prog="hgosafe", description="Safety verification under high-gain-observer output feedback.")
    p.add_argument("--version", action="version", version=f"hgosafe {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("constants", parents=[common], help="sample the bound constants")

    s = sub.add_parser("sim", parents=[common], help="simulate state and output feedback")
    s.add_argument("--x0", type=_floats, help="initial state, e.g. --x0=-2,2")
    s.add_argument("--xhat0", type=_floats, help="initial estimate (default: centre of X_safe)")
    s.add_argument("--T", type=float, help="horizon in seconds")

    b = sub.add_parser("bound", parents=[common], help="trajectory-distance bound xi")
    b.add_argument("--epsilon", type=float)
    b.add_argument("--T", type=float, help="horizon (default: T1 in infinite mode, horizon.T otherwise)")
    b.add_argument("--mode", choices=("general", "stable"))
    b.add_argument("--target-xi", type=float, help="solve for the largest epsilon achieving this xi")

    r = sub.add_parser("reach", parents=[common], help="safety-invariant set on the grid")
    r.add_argument("--xi", type=float, help="erosion depth")

    w = sub.add_parser("sweep", parents=[common], help="invariant-set area over a list of beta values")
    w.add_argument("--betas", type=_floats)

    q = sub.add_parser("pipeline", parents=[common], help="full certification procedure")
    q.add_argument("--mode", choices=("finite", "infinite"))
    q.add_argument("--soundness", type=int, default=0, help="simulate N sampled certified states")
    q.add_argument("--strict-caps", action="store_true", help="fail instead of flagging cap violations")
    return p


def resolve_config(args) -> RunConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    cfg = load_config(args.config) if args.config else PRESETS[args.preset or "double-integrator"]()
    out = {}
    if args.out is not None:
        out["dir"] = args.out
    if args.label is not None:
        out["label"] = args.label
    if out:
        cfg = cfg.with_overrides(output=out)
    if args.threads is not None:
        if args.threads < 0:
            raise UsageError("--threads must be >= 0")
        cfg = cfg.with_overrides(threads=args.threads)
    return cfg


def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def _table(rows) -> str:
    width = max(len(k) for k, _ in rows)
    lines = []
    for k, v in rows:
        val = f"{v:.6g}" if isinstance(v, float) else str(v)
        lines.append(f"  {k:<{width}}  {val}")
    return "\n".join(lines)


class Outputs:
    """Collects file contents in memory; nothing touches disk until ``flush``."""

    def __init__(self, cfg: RunConfig):
        self.dir = Path(cfg.output.dir)
        self.label = cfg.output.label
        self.files: dict[str, str] = {}
        self.fields = []

    def add(self, suffix: str, text: str) -> None:
        self.files[f"{self.label}_{suffix}"] = text

    def add_field(self, name: str, fld, contours: bool) -> None:
        self.fields.append((name, fld, contours))

    def flush(self) -> list[Path]:
        self.dir.mkdir(parents=True, exist_ok=True)
        written = []
        for name, text in self.files.items():
            p = self.dir / name
            p.write_text(text)
            written.append(p)
        for name, fld, contours in self.fields:
            p = self.dir / f"{self.label}_{name}.csv"
            fld.to_csv(p)
            written.append(p)
            if contours and fld.grid.ndim == 2:
                p = self.dir / f"{self.label}_{name}_contour.csv"
                write_contours_csv(fld, p)
                written.append(p)
        return written


def _constants(model: Model, Q=None, c=None):
    cc = model.config.constants
    return estimate_constants(model.system, model.controller, model.sets, cc.grid_density,
                              safety_factor=cc.safety_factor, Q=Q, c=c)


def cmd_constants(model: Model, args, out: Outputs) -> int:
    report = _constants(model)
    d = report.to_dict()
    out.add("constants.json", _dump(d))
    print("constants")
    print(_table([(k, v) for k, v in sorted(d.items()) if not isinstance(v, dict)]))
    return 0


def cmd_sim(model: Model, args, out: Outputs) -> int:
    cfg = model.config
    x0 = np.array(args.x0 if args.x0 is not None else cfg.sim.x0, dtype=float)
    xhat0 = args.xhat0 if args.xhat0 is not None else cfg.sim.xhat0
    if x0.size != model.system.n or (xhat0 is not None and len(xhat0) != model.system.n):
        raise UsageError(f"initial states need {model.system.n} entries")
    T = args.T if args.T is not None else cfg.sim.T
    if not T > 0:
        raise UsageError("--T must be positive")
    sf = simulate_state_feedback(model.system, model.controller, model.sets, x0, T, cfg.integrator)
    of = simulate_output_feedback(model.system, model.controller, model.observer, model.sets, x0,
                                  None if xhat0 is None else np.array(xhat0, dtype=float), T, cfg.integrator)
    summary = {
        "x0": x0.tolist(),
        "xhat0": list(xhat0) if xhat0 is not None else model.sets.center.tolist(),
        "epsilon": model.observer.epsilon,
        "T": T,
        "sup_distance": sup_distance(of, sf),
        "control_gap_after_1s": control_gap(of, sf, 1.0) if T > 1 else None,
        "saturation_output_feedback": saturation_intervals(of, model.sets.u_max),
        "saturation_state_feedback": saturation_intervals(sf, model.sets.u_max),
    }
    for name, tr in (("sf", sf), ("of", of)):
        buf = io.StringIO()
        tr.to_csv(buf)
        out.add(f"{name}.csv", buf.getvalue())
    out.add("sim.json", _dump(summary))
    print(_table([("sup distance", summary["sup_distance"]),
                  ("control gap (t >= 1 s)", summary["control_gap_after_1s"]),
                  ("output-feedback saturation", summary["saturation_output_feedback"])]))
    return 0


def _quiet_invariant_set(*args, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        return invariant_set(*args, **kw)


def _infinite_c(model: Model):
    """``Q`` and the sublevel value: configured ``c`` or the largest fitting one."""
    Q = numkit.solve_lyapunov(model.controller.closed_loop_matrix())
    c = model.config.horizon.c
    if c is None:
        delta = _quiet_invariant_set(model.grid, model.system, model.controller, model.sets, "converged",
                                     0.0, "fixed", model.reach)
        c = largest_c(Q, delta)
    return Q, c


def cmd_bound(model: Model, args, out: Outputs) -> int:
    cfg = model.config
    eps = args.epsilon if args.epsilon is not None else model.observer.epsilon
    if not eps > 0:
        raise UsageError("--epsilon must be positive")
    mode = args.mode or cfg.bound.mode
    constants = _constants(model)
    T = args.T
    extra = {}
    if T is None:
        if cfg.horizon.mode == "infinite":
            Q, c = _infinite_c(model)
            x0_sq = constants.x_max if cfg.horizon.x0_norm_sq is None else cfg.horizon.x0_norm_sq
            T = t1_horizon(Q, c, x0_sq)
            extra = {"c": c, "T1": T}
        else:
            T = cfg.horizon.T
    if not T > 0:
        raise UsageError("horizon must be positive")
    design = model.observer.with_epsilon(eps)
    if args.target_xi is not None:
        if not args.target_xi > 0:
            raise UsageError("--target-xi must be positive")
        eps = epsilon_for_xi(args.target_xi, T, constants, model.controller, design, mode,
                             literal=cfg.bound.literal_c2hat)
        design = design.with_epsilon(eps)
        extra["target_xi"] = args.target_xi
    report = xi_for_epsilon(eps, T, constants, model.controller, design, mode, literal=cfg.bound.literal_c2hat)
    d = report.to_dict()
    d.update(extra)
    out.add("bound.json", _dump(d))
    print(_table([("epsilon", report.epsilon), ("T", report.T), ("T(eps)", report.T_eps),
                  ("xi (paper: delta)", report.xi), ("xi transient", report.xi_transient),
                  ("xi main", report.xi_main), ("mode", mode)]))
    return 0


def cmd_reach(model: Model, args, out: Outputs) -> int:
    cfg = model.config
    xi = args.xi if args.xi is not None else cfg.reach.xi
    if xi < 0:
        raise UsageError("--xi must be nonnegative")
    horizon = "converged" if cfg.horizon.mode == "infinite" else cfg.horizon.T
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptySetWarning)
        fld = invariant_set(model.grid, model.system, model.controller, model.sets, horizon, xi, "fixed", model.reach)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    summary = {"xi": xi, "horizon": horizon, "area": set_area(fld), "empty": fld.is_empty,
               "beta": model.controller.beta, "K": model.controller.K.tolist(),
               "t_end": fld.meta.get("t_end"), "converged": fld.meta.get("converged", False)}
    out.add("reach.json", _dump(summary))
    out.add_field("delta", fld, cfg.output.contours)
    print(_table([("area", summary["area"]), ("empty", summary["empty"]), ("xi", xi)]))
    return 0


def cmd_sweep(model: Model, args, out: Outputs) -> int:
    cfg = model.config
    betas = list(args.betas if args.betas is not None else cfg.sweep.betas)
    if not betas:
        raise UsageError("need at least one beta")
    horizon = "converged" if cfg.horizon.mode == "infinite" else cfg.horizon.T
    ctrl = model.controller
    res = beta_sweep(betas, model.system, model.sets, model.grid, horizon, cfg.reach.xi, model.reach,
                     ctrl_kw={"v_mode": ctrl.v_mode, "v": ctrl.v})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beta", "area", "error"])
    for beta, area in zip(res.betas, res.areas):
        w.writerow([repr(float(beta)), "" if area is None else repr(float(area)), res.errors.get(beta, "")])
    out.add("sweep.csv", buf.getvalue())
    out.add("sweep.json", _dump({"betas": res.betas, "areas": res.areas, "best_beta": res.best_beta,
                                 "errors": {str(k): v for k, v in res.errors.items()}}))
    print(_table([(f"beta={b:g}", a if a is not None else "error") for b, a in zip(res.betas, res.areas)]
                 + [("best beta", res.best_beta)]))
    return 0


def cmd_pipeline(model: Model, args, out: Outputs) -> int:
    cfg = model.config
    mode = args.mode or cfg.horizon.mode
    pcfg = PipelineConfig(grid=model.grid, reach=model.reach, grid_density=cfg.constants.grid_density,
                          safety_factor=cfg.constants.safety_factor, c=cfg.horizon.c,
                          x0_norm_sq=cfg.horizon.x0_norm_sq, strict_caps=args.strict_caps,
                          literal_c2hat=cfg.bound.literal_c2hat, soundness_samples=args.soundness,
                          seed=cfg.seed, sim=cfg.integrator)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", EmptySetWarning)
        if mode == "finite":
            rep = finite_horizon_pipeline(model.system, model.controller, model.observer, model.sets,
                                          cfg.horizon.T, pcfg)
        else:
            rep = infinite_horizon_pipeline(model.system, model.controller, model.observer, model.sets, pcfg)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    out.add("report.json", rep.to_json())
    out.add_field("delta_tilde", rep.delta_tilde_field, cfg.output.contours)
    if rep.delta_field is not None:
        out.add_field("delta", rep.delta_field, cfg.output.contours)
    rows = [("mode", mode), ("xi (paper: delta)", rep.xi), ("area delta", rep.areas["delta"]),
            ("area delta~", rep.areas["delta_tilde"])]
    if mode == "infinite":
        rows[1:1] = [("c", rep.c), ("largest c", rep.c_largest), ("T1", rep.T1)]
    rows += [(k, v) for k, v in sorted(rep.verdicts.items())]
    print(_table(rows))
    return 0


COMMANDS = {
    "constants": cmd_constants,
    "sim": cmd_sim,
    "bound": cmd_bound,
    "reach": cmd_reach,
    "sweep": cmd_sweep,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        model = cfg.build()
        out = Outputs(cfg)
        status = COMMANDS[args.command](model, args, out)
        for p in out.flush():
            print(f"wrote {p}")
        return status
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except HgoSafeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
