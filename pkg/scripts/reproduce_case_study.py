"""Run the double-integrator case study end to end and write all artifacts.

    python3 scripts/reproduce_case_study.py --out out/case_study

Produces the infinite-horizon reports for epsilon = 0.01 and 0.001, the
finite-horizon report for T = 5 s, the Fig-4 style simulation pair and a
short text summary on stdout.
"""

import argparse
import json
import warnings
from pathlib import Path

from hgosafe.pipeline import PipelineConfig, finite_horizon_pipeline, infinite_horizon_pipeline
from hgosafe.presets import double_integrator
from hgosafe.reach import EmptySetWarning
from hgosafe.sim import simulate_output_feedback, simulate_state_feedback, sup_distance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/case_study")
    ap.add_argument("--finite-epsilon", type=float, default=1e-4,
                    help="epsilon for the finite-horizon run (0.01 gives an empty set at T = 5 s)")
    args = ap.parse_args()
    out = Path(args.out)
    cfg = double_integrator()
    m = cfg.build()
    summary = {}

    for eps in (1e-2, 1e-3):
        rep = infinite_horizon_pipeline(m.system, m.controller, m.observer.with_epsilon(eps), m.sets,
                                        PipelineConfig(grid=m.grid, c=cfg.horizon.c, soundness_samples=20))
        rep.write(out, f"infinite_eps{eps:g}")
        summary[f"infinite eps={eps:g}"] = {"T1": rep.T1, "xi": rep.xi, **rep.areas, **rep.verdicts}

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptySetWarning)
        for eps in sorted({cfg.observer.epsilon, args.finite_epsilon}, reverse=True):
            rep = finite_horizon_pipeline(m.system, m.controller, m.observer.with_epsilon(eps), m.sets,
                                          cfg.horizon.T, PipelineConfig(grid=m.grid))
            rep.write(out, f"finite_eps{eps:g}")
            summary[f"finite T={cfg.horizon.T:g} eps={eps:g}"] = {"xi": rep.xi, **rep.areas}

    sf = simulate_state_feedback(m.system, m.controller, m.sets, cfg.sim.x0, cfg.sim.T)
    of = simulate_output_feedback(m.system, m.controller, m.observer, m.sets, cfg.sim.x0, None, cfg.sim.T)
    sf.to_csv(out / "sim_sf.csv")
    of.to_csv(out / "sim_of.csv")
    summary["simulation"] = {"x0": list(cfg.sim.x0), "sup_distance": sup_distance(of, sf)}

    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for name, vals in summary.items():
        print(name)
        for k, v in vals.items():
            print(f"  {k:<28} {v:.6g}" if isinstance(v, float) else f"  {k:<28} {v}")


if __name__ == "__main__":
    main()
