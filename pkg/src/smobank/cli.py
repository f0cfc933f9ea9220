"""Command-line front end.

    smobank check|design|simulate|compare <scenario.json> [--out DIR]
            [--dt X] [--mu X,Y] [--seed N]

Exit codes: 0 success, 1 domain failure (infeasible design, blowup),
2 usage or parse failure.  SMOBANK_THREADS caps sweep parallelism.
"""

import argparse
import json
import sys
from pathlib import Path

from . import matkit, output, scenario as scen, simlab
from .design import check_existence
from .errors import NumericalBlowup, SmobankError
from .scenario import ScenarioError

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _fail(msg, code):
    print(f"smobank: {msg}", file=sys.stderr)
    return code


def _parse_mu(text):
    if text is None:
        return None
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ScenarioError(f"bad --mu value {text!r}") from exc


def cmd_check(args):
    doc = scen.load_document(scen.resolve_scenario_path(args.scenario))
    system = scen.build_system(doc)
    report = check_existence(system)
    print(report.to_json(indent=2))
    return EXIT_OK if report.passed else EXIT_DOMAIN


def cmd_design(args):
    doc = scen.load_document(scen.resolve_scenario_path(args.scenario))
    system = scen.build_system(doc)
    report = check_existence(system)
    if not report.passed:
        print(report.to_json(indent=2))
        return _fail("existence conditions fail for this system", EXIT_DOMAIN)
    cf, gains = scen.build_design(doc, system, seed=args.seed)
    eig_a0 = matkit.eig(gains.A0)
    out = {
        "J": cf.J.tolist(),
        "Gl": gains.Gl.tolist(),
        "Gn": gains.Gn.tolist(),
        "P2": gains.P2.tolist(),
        "k": gains.k,
        "lambda": gains.lam,
        "eig_A0": [{"re": float(z.real), "im": float(z.imag)} for z in eig_a0],
    }
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _metrics_payload(trace):
    m = simlab.estimator_metrics(trace, "bank")
    payload = dict(m)
    payload.update({
        "mu": trace.scenario.bank.mu,
        "dt": trace.scenario.dt,
        "t_end": float(trace.t[-1]),
        "weights_left_unit_interval": trace.weights_left_unit_interval,
        "runtime_s": trace.runtime_s,
    })
    if trace.x_single is not None:
        payload["single"] = simlab.estimator_metrics(trace, "single")
    return payload


def cmd_simulate(args):
    doc = scen.load_document(scen.resolve_scenario_path(args.scenario))
    mus = _parse_mu(args.mu)
    if mus is not None and len(mus) != 1:
        raise ScenarioError("simulate takes a single --mu value")
    sc = scen.build_scenario(doc, dt=args.dt,
                            mu=mus[0] if mus else None, seed=args.seed)
    out_dir = Path(args.out or ".")
    if not out_dir.parent.exists():
        raise ScenarioError(f"parent of --out does not exist: {out_dir}")
    out_dir.mkdir(exist_ok=True)
    try:
        trace = simlab.integrate(sc)
    except NumericalBlowup as blowup:
        if getattr(blowup, "trace", None) is not None:
            output.write_trace_csv(blowup.trace, out_dir / "trace.csv")
        return _fail(f"integration blew up at t = {blowup.t:.6g} s; "
                     f"partial trace retained", EXIT_DOMAIN)
    output.write_outputs(trace, out_dir, metrics=_metrics_payload(trace))
    print(f"wrote trace.csv, states.svg, fault.svg, weights.svg, "
          f"metrics.json to {out_dir}")
    return EXIT_OK


def _format_table(report):
    rows = []
    for run in report.runs:
        rows.append(f"mu = {run.mu:g}")
        rows.append(f"  {'metric':<18}{'bank':>14}{'single':>14}  winner")
        for key in ("transient_rms", "steady_rms", "full_rms", "itae",
                    "sliding_onset", "fault_rms_ratio", "final_error"):
            a = run.bank.get(key)
            b = run.single.get(key)
            fmt = lambda v: "n/a" if v is None else f"{v:.6g}"
            win = run.winner.get(key, "")
            rows.append(f"  {key:<18}{fmt(a):>14}{fmt(b):>14}  {win}")
    return "\n".join(rows)


def cmd_compare(args):
    doc = scen.load_document(scen.resolve_scenario_path(args.scenario))
    sc = scen.build_scenario(doc, dt=args.dt, mu_list=_parse_mu(args.mu),
                            seed=args.seed)
    if not sc.compare_single:
        return _fail("scenario has compare_single=false; enable it in the "
                     "sim section to run a comparison", EXIT_USAGE)
    report = simlab.run_comparison(sc)
    print(_format_table(report))
    print()
    print(json.dumps(report.as_dict(), indent=2))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="smobank",
        description="Observer-bank design, simulation, and fault "
                    "reconstruction for uncertain LTI systems.")
    sub = parser.add_subparsers(dest="command", required=True)
    handlers = {
        "check": ("verify the observer existence conditions", cmd_check),
        "design": ("print the designed transform and gains", cmd_design),
        "simulate": ("run a scenario and write trace/plots", cmd_simulate),
        "compare": ("bank versus single observer across the mu sweep",
                    cmd_compare),
    }
    for name, (help_text, handler) in handlers.items():
        s = sub.add_parser(name, help=help_text)
        s.add_argument("scenario", help="scenario file or bundled name (mck)")
        s.add_argument("--out", help="output directory (simulate)")
        s.add_argument("--dt", type=float, help="override the time step")
        s.add_argument("--mu", help="override mu (comma list for compare)")
        s.add_argument("--seed", type=int, default=0,
                       help="seed for the pole-assignment randomization")
        s.set_defaults(handler=handler)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ScenarioError as exc:
        return _fail(str(exc), EXIT_USAGE)
    except (SmobankError, ValueError) as exc:
        return _fail(str(exc), EXIT_DOMAIN)


if __name__ == "__main__":
    sys.exit(main())
