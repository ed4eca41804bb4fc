"""Command line driver: ``selfdecoherence {validate,decohere,wigner,classical,verify} ...``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import charts as ch
from . import classical as cl
from . import io
from . import spectral as sp
from . import wigner as wg
from .dynamics import flow
from .errors import (
    BoundaryError,
    NonHermitianError,
    NumericalError,
    PreconditionError,
    QuadratureAccuracyWarning,
    ScenarioError,
    ShapeError,
    UnreachableLevelError,
)
from .scenario import Scenario, field_form, load_scenario

log = logging.getLogger("selfdecoherence")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

INVOLUTION_TOL = 1e-6
STAGE_ERRORS = (NumericalError, BoundaryError, PreconditionError, UnreachableLevelError, NonHermitianError,
                ShapeError, FloatingPointError, np.linalg.LinAlgError)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, complex):
        return {"re": _clean(obj.real), "im": _clean(obj.imag)}
    return obj


class RunReport:
    def __init__(self, command: str, scenario: Path | None, seed: int | None, out_dir: Path | None):
        self.command = command
        self.scenario = scenario
        self.seed = seed
        self.out_dir = out_dir
        self.stages: dict = {}
        self.validation: dict = {}
        self.invariants: list = []
        self.warnings: list = []
        self.files: dict = {}
        self.exit_code = EXIT_OK

    def fail(self, code: int) -> None:
        # the first failure class sticks; later stages only add detail
        if self.exit_code == EXIT_OK:
            self.exit_code = code

    def stage(self, name: str, status: str, **data) -> dict:
        entry = {"status": status, **data}
        self.stages[name] = entry
        log.info("stage %-22s %s", name, status)
        return entry

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def emitted(self, path: Path) -> None:
        self.files[path.name] = io.sha256_file(path)

    def as_dict(self) -> dict:
        return _clean({
            "command": self.command,
            "scenario": self.scenario.name if self.scenario else None,
            "seed": self.seed,
            "exit_code": self.exit_code,
            "stages": self.stages,
            "validation": self.validation,
            "invariants": self.invariants,
            "warnings": self.warnings,
            "manifest": dict(sorted(self.files.items())),
        })

    def write(self) -> Path | None:
        if self.out_dir is None:
            return None
        path = self.path("report.json")
        path.write_text(json.dumps(self.as_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n")
        return path


# -- stages --------------------------------------------------------------------


def _hamiltonian_field(sc: Scenario, hbar: float | None = None) -> wg.PhaseSpaceField:
    q, p = sc.phase_grid.points()
    return wg.PhaseSpaceField(sc.phase_grid, sc.system.energy(q, p), sc.hbar if hbar is None else hbar, sc.scheme)


def stage_validate(sc: Scenario, rep: RunReport) -> None:
    if sc.state_spec:
        state = sc.build_state()
        violations = sp.validate_state(state)
        rep.validation["state"] = [
            {"constraint": v.constraint, "magnitude": v.magnitude, "location": list(v.location) if v.location else None,
             "message": v.message} for v in violations]
        try:
            sc.build_observable()
            obs_ok = True
        except NonHermitianError as exc:
            rep.validation["observable"] = str(exc)
            obs_ok = False
        ok = not violations and obs_ok
        rep.stage("validate_state", "ok" if ok else "failed", n_violations=len(violations))
        for v in violations:
            print(f"state violation: {v.message}")
        if not ok:
            rep.fail(EXIT_VALIDATION)
    if sc.charts and sc.phase_grid is not None:
        report = ch.validate_partition(sc.partition())
        rep.validation["partition"] = {
            "gaps": int(report.gaps.shape[0]),
            "overlaps": int(report.overlaps.shape[0]),
            "gap_points": report.gaps[:20],
            "overlap_points": report.overlaps[:20],
        }
        rep.stage("validate_partition", "ok" if report.ok else "failed")
        for line in report.summary():
            print(f"partition: {line}")
        if not report.ok:
            rep.fail(EXIT_VALIDATION)
        H = _hamiltonian_field(sc)
        residuals = {}
        for chart in sc.charts:
            fields = [c.field(sc.phase_grid, sc.hbar, sc.scheme) for c in chart.constants]
            try:
                residuals[chart.label] = ch.check_involution(H, fields, chart)
            except PreconditionError as exc:
                residuals[chart.label] = None
                rep.warnings.append(str(exc))
        rep.validation["involution"] = {"tolerance": INVOLUTION_TOL, "residuals": residuals}
        bad = [k for k, v in residuals.items() if v is not None and v > INVOLUTION_TOL]
        rep.stage("check_involution", "failed" if bad else "ok", failing_charts=bad)
        for k in bad:
            print(f"involution: chart {k!r} residual {residuals[k]:.3g} > {INVOLUTION_TOL:g}")
        if bad:
            rep.fail(EXIT_VALIDATION)


def _decohere(sc: Scenario, rep: RunReport, write: bool):
    state = sc.build_state()
    violations = sp.validate_state(state)
    if violations:
        for v in violations:
            print(f"state violation: {v.message}")
        rep.stage("validate_state", "failed", n_violations=len(violations))
        rep.fail(EXIT_VALIDATION)
        return None
    rep.stage("validate_state", "ok")
    if write and sc.time_grid is not None:
        obs = sc.build_observable()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", QuadratureAccuracyWarning)
            curve = sp.decay_curve(state, obs, sc.time_grid)
        for w in caught:
            if issubclass(w.category, QuadratureAccuracyWarning):
                rep.warnings.append(str(w.message))
        path = io.write_decay_csv(rep.path("decay_curve.csv"), curve)
        rep.emitted(path)
        rep.stage("decay_curve", "ok", **_decay_summary(sc, state, obs, curve))
    decohered = sp.weak_limit(state)
    basis = sp.pointer_basis(decohered)
    diagonal = sp.apply_pointer_basis(decohered, basis)
    rep.stage("pointer_basis", "ok", reconstruction_error=basis.reconstruction_error,
              unitarity_error=basis.unitarity_error(), min_eigenvalue=float(basis.eigenvalues.min()))
    if write:
        rep.emitted(io.save_kernel(rep.path("decohered_state.sdc"), diagonal.kernel, state.hbar, "state"))
        rep.emitted(io.save_pointer_basis(rep.path("pointer_basis.sdc"), basis, state.grid))
    return diagonal


def _decay_summary(sc, state, obs, curve) -> dict:
    out = {
        "singular_contribution": curve.singular,
        "regular_at_start": complex(curve.regular[0]),
        "t_max_resolved": sp.validity_time(state.grid, state.hbar),
        "n_unresolved_times": int((~curve.resolved).sum()),
        "final_regular_magnitude": float(abs(curve.regular[-1])),
    }
    if curve.t[0] == 0.0 and curve.regular[0] != 0:
        sigma = sp.fit_gaussian_width(curve, state.hbar)
        out["fitted_sigma"] = sigma
        out["fitted_law_deviation"] = sp.gaussian_law_deviation(curve, sigma, state.hbar)
        declared = sc.state_spec.get("regular", {})
        if declared.get("generator") == "gaussian_nu":
            s = float(declared.get("sigma", 0.2))
            out["declared_sigma"] = s
            out["declared_law_deviation"] = sp.gaussian_law_deviation(curve, s, state.hbar)
        try:
            out["envelope_slope"] = sp.envelope_slope(curve)
        except ValueError:
            out["envelope_slope"] = None
    weak = sp.expectation_at_time(sp.weak_limit(state), obs, 0.0)
    out["weak_limit_value"] = weak
    out["final_gap_to_weak_limit"] = abs(float(curve.total[-1]) - weak)
    return out


def stage_wigner(sc: Scenario, rep: RunReport, workers=None) -> None:
    cfg = sc.wigner
    if not cfg:
        rep.stage("wigner", "skipped", reason="no [wigner] section")
        return
    hbar = sc.hbar
    grid = wg.PhaseGrid.conjugate(cfg["q_min"], cfg["q_max"], cfg["n"], hbar)
    q = grid.q
    Q, P = grid.mesh()
    items = {}

    def emit(name, field, **extra):
        rep.emitted(io.save_field(rep.path(f"{name}.sdc"), field))
        rep.emitted(io.write_field_csv(rep.path(f"{name}.csv"), field))
        v = field.values
        items[name] = {"max_re": float(v.real.max()), "min_re": float(v.real.min()),
                       "max_abs_im": float(np.abs(v.imag).max()), "integral": float(field.integral().real), **extra}

    for i, s in enumerate(cfg["states"]):
        kind = s["kind"]
        if kind == "ho_ground":
            kern = wg.ho_ground_state_kernel(q, hbar)
        else:
            kern = wg.gaussian_state_kernel(q, hbar, float(s.get("q0", 0.0)), float(s.get("p0", 0.0)),
                                            float(s.get("width", 1.0)))
        field = wg.state_symbol(kern, hbar)
        extra = {}
        if kind == "ho_ground":
            extra["peak_minus_inverse_pi"] = float(field.values.real.max() - 1.0 / (math.pi * hbar))
        emit(f"state_{i}_{kind}", field, **extra)

    for i, o in enumerate(cfg["operators"]):
        kind = o["kind"]
        power = int(o.get("power", 1))
        check = True
        if kind == "identity":
            kern = wg.identity_kernel(q)
        elif kind == "position":
            kern = wg.position_kernel(q, power)
        elif kind == "momentum":
            kern = wg.momentum_kernel(q, hbar, power)
            check = False  # dense kernel of an unbounded operator
        else:
            kern = wg.ho_ground_state_kernel(q, hbar)
        field = wg.wigner_transform(kern, hbar, check=check, workers=workers)
        extra = {}
        if kind == "identity":
            extra["max_deviation_from_one"] = float(np.abs(field.values - 1.0).max())
        emit(f"operator_{i}_{kind}", field, **extra)

    for i, pr in enumerate(cfg["products"]):
        f = wg.PhaseSpaceField.from_function(grid, field_form(pr["f"], sc.system), hbar, cfg["scheme"])
        g = wg.PhaseSpaceField.from_function(grid, field_form(pr["g"], sc.system), hbar, cfg["scheme"])
        order = int(pr.get("order", 1))
        if pr["type"] == "star":
            field = wg.star_product(f, g, order)
        elif pr["type"] == "moyal":
            field = wg.moyal_bracket(f, g, order)
        else:
            field = wg.poisson_bracket(f, g)
        emit(f"product_{i}_{pr['type']}_{pr['f']}_{pr['g']}", field, order=order)
    rep.stage("wigner", "ok", grid={"q_min": grid.q_min, "q_max": grid.q_max, "n": grid.n_q,
                                    "p_min": grid.p_min, "p_max": grid.p_max}, items=items)


def _level_weights(sc: Scenario, rep: RunReport):
    """chart label -> (energies, weights) from the scenario or from the decohered state."""
    cfg = sc.classical
    if cfg["use_decohered"]:
        diagonal = _decohere(sc, rep, write=False)
        if diagonal is None:
            return None, None
        k = diagonal.kernel
        pop = np.real(np.einsum("wmm->wm", k.singular)) * k.grid.weights[:, None]
        table: dict = {}
        for m, label in enumerate(cfg["channel_map"]):
            for e, w in zip(k.grid.points, pop[:, m]):
                if w != 0:
                    table.setdefault(label, {}).setdefault(float(e), 0.0)
                    table[label][float(e)] += float(w)
        return {lab: (np.array(sorted(d)), np.array([d[e] for e in sorted(d)])) for lab, d in table.items()}, diagonal
    table = {}
    for label, e, w in cfg["levels"]:
        table.setdefault(label, {}).setdefault(e, 0.0)
        table[label][e] += w
    return {lab: (np.array(sorted(d)), np.array([d[e] for e in sorted(d)])) for lab, d in table.items()}, None


def stage_classical(sc: Scenario, rep: RunReport) -> None:
    cfg = sc.classical
    if not cfg:
        rep.stage("classical", "skipped", reason="no [classical] section")
        return
    if sc.phase_grid is None or not sc.charts:
        raise ScenarioError("the classical stage needs [phase_grid] and [[charts]]", field="classical")
    weights, _ = _level_weights(sc, rep)
    if weights is None:
        return
    system = sc.system
    aa = {}
    needed = {tr["chart"]: set() for tr in cfg["trajectories"] if tr["energy"] is not None}
    for tr in cfg["trajectories"]:
        if tr["energy"] is not None:
            needed[tr["chart"]].add(tr["energy"])
    for label, (energies, _) in weights.items():
        needed.setdefault(label, set()).update(float(e) for e in energies)
    if system.dof == 1:
        for label, levels in needed.items():
            aa[label] = cl.build_action_angle(system, sc.chart(label), sorted(levels), cfg["step"], cfg["max_time"])
            sc.chart(label).action_angle = aa[label]
        table = {label: [{"energy": o.energy, "reachable": o.reachable, "reason": o.reason, "period": o.period,
                          "action": o.action, "volume": o.volume, "closure_error": o.closure_error}
                         for o in a.orbits] for label, a in aa.items()}
        freq = {label: a.frequency for label, a in aa.items()}
        rep.stage("action_angle", "ok", levels=table, frequency=freq,
                  action_monotone={label: a.action_is_monotone() for label, a in aa.items()})
    _density(sc, rep, weights, aa)
    _trajectories(sc, rep, aa)


def _density(sc, rep, weights, aa):
    cfg = sc.classical
    if not any(len(e) for e, _ in weights.values()):
        rep.stage("classical_density", "skipped", reason="empty level list")
        return
    if sc.system.dof != 1:
        rep.stage("classical_density", "skipped", reason="densities are built for one degree of freedom per chart")
        return
    unreachable = []
    kept = {}
    for label, (energies, w) in weights.items():
        ok = np.array([aa[label].orbit(float(e)).reachable for e in energies], bool)
        unreachable += [{"chart": label, "energy": float(e), "weight": float(x)} for e, x in zip(energies[~ok], w[~ok])]
        kept[label] = (energies[ok], w[ok])
    dropped = sum(u["weight"] for u in unreachable)
    total = sum(float(w.sum()) for _, w in kept.values())
    if unreachable:
        rep.warnings.append(f"{len(unreachable)} unreachable level(s) dropped, carrying weight {dropped:.6g}")
        for u in unreachable:
            print(f"unreachable level: chart {u['chart']!r} H = {u['energy']:g}")
    if total > 0:
        kept = {label: (e, w / total) for label, (e, w) in kept.items()}
    smearing = None if cfg["smearing"] == "auto" else cfg["smearing"]
    dens = cl.classical_density(kept, {k: aa[k] for k in kept}, sc.phase_grid, smearing, sc.hbar)
    rep.emitted(io.save_field(rep.path("density.sdc"), dens.field, {"smearing": dens.smearing}))
    rep.emitted(io.write_field_csv(rep.path("density.csv"), dens.field))
    per_chart = {}
    if len(kept) > 1:
        for label in kept:
            f = dens.chart_field(label)
            rep.emitted(io.save_field(rep.path(f"density_{label}.sdc"), f, {"smearing": dens.smearing}))
            per_chart[label] = float(f.integral().real)
    uniformity = {}
    for label, (energies, w) in kept.items():
        for e, x in zip(energies, w):
            if x > 0:
                uniformity[f"{label}@{e:g}"] = cl.angular_uniformity(dens, label, aa[label], float(e))
    phase, spectral = cl.duality_check(dens, lambda e, _: e)
    summary = {
        "smearing": dens.smearing,
        "min": float(dens.field.values.real.min()),
        "integral": float(dens.field.integral().real),
        "chart_integrals": per_chart,
        "angular_uniformity": uniformity,
        "angular_uniformity_max": max(uniformity.values()) if uniformity else None,
        "duality_energy": {"phase_space": phase, "spectral": spectral,
                           "relative_error": abs(phase - spectral) / abs(spectral) if spectral else None},
        "unreachable": unreachable,
        "dropped_weight": dropped,
    }
    if cfg["flow_probe"] > 0:
        try:
            summary["flow_invariance"] = cl.density_flow_invariance(
                dens.field, sc.system, cfg["flow_probe"], n_samples=cfg["flow_samples"], seed=sc.seed, step=cfg["step"])
        except PreconditionError as exc:
            summary["flow_invariance"] = None
            rep.warnings.append(f"flow invariance: {exc}")
    rep.stage("classical_density", "ok", **summary)


def _trajectories(sc, rep, aa):
    cfg = sc.classical
    results = []
    for i, tr in enumerate(cfg["trajectories"]):
        chart = sc.chart(tr["chart"])
        entry = {"chart": tr["chart"], "energy": tr["energy"], "tau0": tr["tau0"], "duration": tr["duration"]}
        if tr["energy"] is not None:
            if sc.system.dof != 1:
                raise ScenarioError("level-based trajectories need one degree of freedom; give q0 and p0",
                                    field=f"classical.trajectories[{i}]")
            a = aa[tr["chart"]]
            if not a.orbit(tr["energy"]).reachable:
                entry["status"] = "unreachable"
                print(f"unreachable trajectory level: chart {tr['chart']!r} H = {tr['energy']:g}")
                results.append(entry)
                continue
            t = cl.sample_trajectory(a, tr["energy"], tr["tau0"], tr["duration"], tr["step"])
            times, q, p, energy, consts, left = t.times, t.q, t.p, t.energy, t.constants, t.left_chart
            if times.size > 2:
                fit = cl.angle_fit(times, cl.orbit_angle(a, tr["energy"], q, p))
                entry["angle_fit"] = fit
                entry["angle_rate_relative_error"] = abs(fit["rate"] / a.orbit(tr["energy"]).angular_rate - 1.0)
        else:
            q0 = np.asarray(tr["q0"], float)
            p0 = np.asarray(tr["p0"], float)
            if q0.shape != (sc.system.dof,) or p0.shape != (sc.system.dof,):
                raise ScenarioError(f"q0 and p0 need {sc.system.dof} entries", field=f"classical.trajectories[{i}]")
            times, q, p = flow(sc.system, q0, p0, tr["duration"], tr["step"])
            energy = sc.system.energy(q, p)
            consts = {c.name: np.asarray(c(q, p), float) for c in chart.constants}
            left = not bool(np.all(chart.contains(q, p)))
        path = io.write_trajectory_csv(rep.path(f"trajectory_{i}.csv"), times, q, p, energy, list(consts.values()))
        rep.emitted(path)
        entry.update({
            "status": "ok",
            "energy_drift": float(np.abs(energy - energy[0]).max()),
            "left_chart": bool(left),
            "constant_variation": {k: float(np.ptp(v)) for k, v in consts.items()},
            "columns": io.trajectory_header(q.shape[1], len(consts)),
        })
        if left:
            rep.warnings.append(f"trajectory {i} leaves chart {tr['chart']!r}")
        results.append(entry)
    if results:
        rep.stage("trajectories", "ok", items=results)
    else:
        rep.stage("trajectories", "skipped", reason="no trajectories requested")


# -- commands ------------------------------------------------------------------


def _run_stage(rep: RunReport, name: str, fn, *args) -> bool:
    try:
        fn(*args)
        return True
    except STAGE_ERRORS as exc:
        rep.stage(name, "failed", error=f"{type(exc).__name__}: {exc}")
        print(f"{name} failed: {exc}", file=sys.stderr)
        rep.fail(EXIT_NUMERICAL)
        return False


def cmd_validate(sc, rep, args):
    _run_stage(rep, "validate", stage_validate, sc, rep)


def cmd_decohere(sc, rep, args):
    if not sc.state_spec:
        raise ScenarioError("decohere needs a [state] section", field="state")
    if sc.time_grid is None:
        raise ScenarioError("decohere needs a [time_grid] section", field="time_grid")
    _run_stage(rep, "decohere", _decohere, sc, rep, True)


def cmd_wigner(sc, rep, args):
    _run_stage(rep, "wigner", stage_wigner, sc, rep, args.threads)


def cmd_classical(sc, rep, args):
    _run_stage(rep, "classical", stage_classical, sc, rep)


def cmd_verify(args) -> int:
    from .verify import run_suite

    out_dir = Path(args.output) if args.output else None
    seed = 0 if args.seed is None else args.seed
    rep = RunReport("verify", None, seed, out_dir)
    checks = run_suite(seed, echo=print)
    rep.invariants = [c.as_dict() for c in checks]
    failed = [c.name for c in checks if not c.passed]
    rep.stage("verify", "failed" if failed else "ok", n_checks=len(checks), failed=failed)
    if failed:
        rep.fail(EXIT_VALIDATION)
    rep.write()
    print(f"{len(checks) - len(failed)}/{len(checks)} invariant checks passed")
    return rep.exit_code


COMMANDS = {
    "validate": cmd_validate,
    "decohere": cmd_decohere,
    "wigner": cmd_wigner,
    "classical": cmd_classical,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfdecoherence", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*COMMANDS, "verify"):
        p = sub.add_parser(name)
        if name != "verify":
            p.add_argument("scenario", type=Path, help="scenario TOML file")
        p.add_argument("-o", "--output", help="output directory (overrides the scenario)")
        p.add_argument("--seed", type=int, help="override the scenario seed")
        p.add_argument("--threads", type=int, default=None, help="FFT worker threads")
        g = p.add_mutually_exclusive_group()
        g.add_argument("-v", "--verbose", action="store_true", help="debug logging")
        g.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_PARSE
    if args.command == "verify":
        return cmd_verify(args)
    try:
        sc = load_scenario(args.scenario)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if args.seed is not None:
        sc.seed = args.seed
    if args.output:
        sc.output_dir = Path(args.output)
    rep = RunReport(args.command, args.scenario, sc.seed, sc.output_dir)
    try:
        COMMANDS[args.command](sc, rep, args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        rep.fail(EXIT_PARSE)
    rep.write()
    status = "ok" if rep.exit_code == EXIT_OK else f"failed (exit {rep.exit_code})"
    print(f"{args.command}: {status}; report in {sc.output_dir / 'report.json'}")
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main())
