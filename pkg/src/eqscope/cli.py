"""Command-line entry point.

Exit codes: 0 success, 2 infeasible, 3 solver trouble, 1 usage or input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .conic import Status, get_backend
from .consistency import (BracketError, ConsistencyInstance, NumericalTroubleError, PropertySpec,
                          min_perturbation, property_threshold)
from .game import Game, Metric, ObservationModel, ObservationSet

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_TROUBLE = 0, 1, 2, 3

log = logging.getLogger("eqscope")


def _write(payload, output) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _read_json(path):
    if path in (None, "-"):
        return json.load(sys.stdin)
    return json.loads(Path(path).read_text())


def _load_obs(path) -> ObservationSet:
    d = _read_json(path)
    return ObservationSet.from_dict(d["observations"] if "observations" in d and "model" not in d else d)


def _status_code(status: Status) -> int:
    if status is Status.OPTIMAL:
        return EXIT_OK
    if status is Status.INFEASIBLE:
        return EXIT_INFEASIBLE
    return EXIT_TROUBLE


def _property(args) -> PropertySpec | None:
    kind = getattr(args, "property", None)
    if kind in (None, "none"):
        return None
    if kind == "zero-sum":
        return PropertySpec.zero_sum()
    if kind == "potential":
        return PropertySpec.exact_potential()
    if kind == "eps-zero-sum":
        return PropertySpec.eps_zero_sum(args.epsilon)
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# commands

def cmd_simulate_entry(args) -> int:
    from .experiments import EntryGameParams, entry_delta, generate_entry_observations, params_dict
    p = EntryGameParams(args.gamma1, args.gamma2, args.theta1, args.theta2, args.sigma, args.sigma_s,
                        args.l, args.seed, args.noise)
    data = generate_entry_observations(p, ObservationModel(args.model))
    out = data.obs.to_dict()
    out["truth"] = {"game": data.game.to_dict(), "params": params_dict(p),
                    "delta_calibrated": entry_delta(p.l, p.sigma, args.dof_mode, args.level)}
    _write(out, args.output)
    return EXIT_OK


def cmd_recover(args) -> int:
    obs = _load_obs(args.input)
    inst = ConsistencyInstance(obs, Metric(args.metric), None, _property(args))
    rec = min_perturbation(inst, get_backend(args.backend))
    _write(rec.to_dict(), args.output)
    return _status_code(rec.status)


def cmd_diameter(args) -> int:
    from .diameter import diameter
    obs = _load_obs(args.input)
    rep = diameter(obs, args.delta, Metric(args.metric), get_backend(args.backend), args.jobs)
    _write(rep.to_dict(), args.output)
    return EXIT_TROUBLE if rep.diagnostics else EXIT_OK


def cmd_property(args) -> int:
    obs = _load_obs(args.input)
    inst = ConsistencyInstance(obs, Metric(args.metric))
    try:
        eps = property_threshold(inst, args.budget, get_backend(args.backend))
    except BracketError as exc:
        _write({"epsilon_min": None, "error": str(exc)}, args.output)
        return EXIT_INFEASIBLE
    _write({"epsilon_min": eps, "budget": args.budget}, args.output)
    return EXIT_OK


def cmd_degeneracy(args) -> int:
    from .degeneracy import P_curve, PreconditionError, degeneracy_threshold, envelope_check, equilibria_only
    obs = equilibria_only(_load_obs(args.input))
    backend = get_backend(args.backend)
    eps_star = degeneracy_threshold(obs, backend)
    eps0 = args.epsilon0 if args.epsilon0 is not None else 1.5 * eps_star
    grid = args.grid or [eps0 * f for f in (1.0, 1.25, 1.5, 2.0, 3.0)]
    out = {"epsilon_star": eps_star, "P_curve": [list(r) for r in P_curve(obs, grid, backend)]}
    try:
        out["envelope_ok"] = envelope_check(obs, eps0, grid, backend).ok
    except PreconditionError as exc:
        out["envelope_ok"] = None
        out["envelope_error"] = str(exc)
    _write(out, args.output)
    return EXIT_OK


def cmd_cournot(args) -> int:
    from . import cournot as cn
    if args.action == "simulate":
        inst = cn.simulate_cournot(args.n, args.alpha, args.a_hat, args.sigma_game, args.sigma_obs,
                                   args.l, args.n_games, args.seed)
        _write({"alpha": args.alpha, "games": [
            {"model": I.model.to_dict(), "observations": [o.quantities.tolist() for o in I.observations]}
            for I in inst]}, args.output)
        return EXIT_OK
    d = _read_json(args.input)
    games = d["games"] if "games" in d else [d]
    alpha = float(d.get("alpha", args.alpha))
    backend = get_backend(args.backend)
    results, code = [], EXIT_OK
    for g in games:
        obs = g["observations"]
        if args.action == "recover":
            rec = cn.cournot_min_perturbation(obs, args.degree, Metric(args.metric), alpha, backend=backend)
            results.append(rec.to_dict())
            code = max(code, _status_code(rec.status))
        else:
            delta = args.delta
            if delta is None:
                from .experiments import chi_square_delta
                delta = chi_square_delta(len(obs) * len(obs[0]) * args.degree, args.level, args.sigma_obs)
            rep = cn.cournot_diameter(obs, delta, args.degree, Metric(args.metric), alpha,
                                      backend=backend, jobs=args.jobs)
            out = rep.to_dict()
            out["delta"] = delta
            results.append(out)
            if rep.diagnostics:
                code = EXIT_TROUBLE
    _write({"results": results}, args.output)
    return code


def cmd_scan(args) -> int:
    from .experiments import (EntryGameParams, emit_outputs, entry_delta, generate_entry_observations,
                              grid, params_dict, scan_region)
    p = EntryGameParams(args.gamma1, args.gamma2, args.theta1, args.theta2, args.sigma, args.sigma_s,
                        args.l, args.seed, args.noise)
    data = generate_entry_observations(p, ObservationModel(args.model))
    budget = args.budget if args.budget is not None else entry_delta(p.l, p.sigma, args.dof_mode, args.level)
    ax1, ax2 = grid(*args.axis1), grid(*args.axis2)
    scan = scan_region(data, ax1, ax2, budget, (args.names[0], args.names[1]), Metric(args.metric),
                       args.symmetric, get_backend(args.backend), args.jobs)
    csv_path, man = emit_outputs(scan, args.output or "scan_out",
                                 {"params": params_dict(p), "model": args.model, "dof_mode": args.dof_mode})
    log.info("wrote %s and %s", csv_path, man)
    return EXIT_TROUBLE if scan.diagnostics else EXIT_OK


def cmd_bounds(args) -> int:
    from .bounds import induced_norm_inverse, select_independent_subset, verify_recovery_bound
    obs = _load_obs(args.input)
    metric = Metric(args.metric)
    E = select_independent_subset(obs)
    rec = min_perturbation(ConsistencyInstance(obs, metric), get_backend(args.backend))
    if rec.status is not Status.OPTIMAL:
        _write({"status": rec.status.value}, args.output)
        return _status_code(rec.status)
    truth = Game.from_dict(_read_json(args.true_game))
    chk = verify_recovery_bound(truth, rec.game, E, args.delta, metric)
    _write({"norm2": induced_norm_inverse(E, "two"), "norminf": induced_norm_inverse(E, "inf"),
            "lhs": list(chk.lhs), "rhs": chk.rhs, "ok": chk.ok, "provable_rhs": chk.provable_rhs,
            "selected": list(E.indices)}, args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _common(sp, inp=True):
    if inp:
        sp.add_argument("--input", "-i", help="input JSON (default stdin)")
    sp.add_argument("--output", "-o", help="output path (default stdout)")
    sp.add_argument("--backend", default="clarabel", choices=["clarabel", "scs"])


def _entry_args(sp):
    sp.add_argument("--gamma1", type=float, default=5.0)
    sp.add_argument("--gamma2", type=float, default=5.0)
    sp.add_argument("--theta1", type=float, default=-10.0)
    sp.add_argument("--theta2", type=float, default=-10.0)
    sp.add_argument("--sigma", type=float, default=0.5)
    sp.add_argument("--sigma-s", dest="sigma_s", type=float, default=0.0)
    sp.add_argument("-l", "--observations", dest="l", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--noise", choices=["asym", "sym"], default="asym")
    sp.add_argument("--model", choices=[m.value for m in ObservationModel], default="partial_payoff")
    sp.add_argument("--dof-mode", dest="dof_mode", choices=["asym", "sym"], default="asym")
    sp.add_argument("--level", type=float, default=0.99)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="eqscope", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate-entry", help="generate entry-game observations")
    _common(sp, inp=False)
    _entry_args(sp)
    sp.set_defaults(func=cmd_simulate_entry)

    sp = sub.add_parser("recover", help="perturbation-minimising game")
    _common(sp)
    sp.add_argument("--metric", choices=["d2", "dinf"], default="d2")
    sp.add_argument("--property", choices=["none", "zero-sum", "potential", "eps-zero-sum"], default="none")
    sp.add_argument("--epsilon", type=float, default=0.0)
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("diameter", help="diameter of the consistent set")
    _common(sp)
    sp.add_argument("--metric", choices=["d2", "dinf"], default="d2")
    sp.add_argument("--delta", type=float, required=True)
    sp.add_argument("--jobs", type=int, default=None)
    sp.set_defaults(func=cmd_diameter)

    sp = sub.add_parser("property", help="least epsilon for an epsilon-zero-sum explanation")
    _common(sp)
    sp.add_argument("--metric", choices=["d2", "dinf"], default="d2")
    sp.add_argument("--budget", type=float, required=True)
    sp.set_defaults(func=cmd_property)

    sp = sub.add_parser("degeneracy", help="strictness threshold and trade-off curve")
    _common(sp)
    sp.add_argument("--epsilon0", type=float, default=None)
    sp.add_argument("--grid", type=float, nargs="*", default=None)
    sp.set_defaults(func=cmd_degeneracy)

    sp = sub.add_parser("cournot", help="Cournot simulate / recover / diameter")
    sp.add_argument("action", choices=["simulate", "recover", "diameter"])
    _common(sp)
    sp.add_argument("-n", "--players", dest="n", type=int, default=10)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--a-hat", dest="a_hat", type=float, default=0.01)
    sp.add_argument("--sigma-game", dest="sigma_game", type=float, default=0.01)
    sp.add_argument("--sigma-obs", dest="sigma_obs", type=float, default=0.001)
    sp.add_argument("-l", "--observations", dest="l", type=int, default=10)
    sp.add_argument("--games", dest="n_games", type=int, default=10)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--degree", type=int, default=1)
    sp.add_argument("--metric", choices=["d2", "dinf"], default="d2")
    sp.add_argument("--delta", type=float, default=None,
                    help="budget; default is the chi-square calibration from --sigma-obs")
    sp.add_argument("--level", type=float, default=0.99)
    sp.add_argument("--jobs", type=int, default=None)
    sp.set_defaults(func=cmd_cournot)

    sp = sub.add_parser("scan", help="entry-game consistent region over a parameter grid")
    _common(sp, inp=False)
    _entry_args(sp)
    sp.add_argument("--names", nargs=2, default=["gamma1", "theta1"],
                    choices=["gamma1", "theta1", "gamma2", "theta2"])
    sp.add_argument("--axis1", type=float, nargs=3, metavar=("LO", "HI", "STEP"), default=[3.0, 7.0, 0.5])
    sp.add_argument("--axis2", type=float, nargs=3, metavar=("LO", "HI", "STEP"), default=[-12.0, -8.0, 0.5])
    sp.add_argument("--budget", type=float, default=None)
    sp.add_argument("--metric", choices=["d2", "dinf"], default="d2")
    sp.add_argument("--symmetric", action="store_true", help="perturbation of entry payoffs is opponent-independent")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("bounds", help="recovery-error bound for payoff observations")
    _common(sp)
    sp.add_argument("--true-game", dest="true_game", required=True, help="JSON game to compare against")
    sp.add_argument("--metric", choices=["d2", "dinf"], default="d2")
    sp.add_argument("--delta", type=float, required=True)
    sp.set_defaults(func=cmd_bounds)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NumericalTroubleError as exc:
        log.error("solver trouble: %s", exc)
        return EXIT_TROUBLE
    except (ValueError, KeyError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
