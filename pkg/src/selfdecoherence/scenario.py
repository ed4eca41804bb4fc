"""Scenario files: one TOML document describing a complete run."""

from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import spectral as sp
from .charts import (
    Chart,
    EnergyWindow,
    HalfPlane,
    Partition,
    Rectangle,
    SeparatrixSide,
    make_constant,
)
from .dynamics import SYSTEMS, HamiltonianSystem, make_system
from .errors import ScenarioError
from .wigner import SCHEMES, PhaseGrid

__all__ = ["Scenario", "load_scenario", "parse_scenario"]

_SECTIONS = {
    "seed", "hbar", "system", "energy_grid", "state", "observable", "time_grid",
    "phase_grid", "charts", "classical", "wigner", "output", "description",
}


class _Locator:
    """Maps (table path, key) to a source line for diagnostics."""

    _header = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
    _key = re.compile(r"^\s*([A-Za-z0-9_\-\"]+)\s*=")

    def __init__(self, text: str):
        self.index: dict = {}
        self.tables: dict = {}
        current = ""
        counts: dict = {}
        for n, line in enumerate(text.splitlines(), start=1):
            m = self._header.match(line)
            if m:
                name = m.group(1).strip()
                if line.lstrip().startswith("[["):
                    k = counts.get(name, 0)
                    counts[name] = k + 1
                    name = f"{name}[{k}]"
                current = name
                self.tables.setdefault(current, n)
                continue
            m = self._key.match(line)
            if m:
                self.index.setdefault((current, m.group(1).strip('"')), n)

    def line(self, table: str, key: str | None = None):
        if key is not None and (table, key) in self.index:
            return self.index[(table, key)]
        return self.tables.get(table)


@dataclass
class Scenario:
    path: Path | None
    raw: dict
    system: HamiltonianSystem
    hbar: float
    seed: int
    energy_grid: sp.EnergyGrid | None
    n_channels: int
    state_spec: dict
    observable_spec: dict
    time_grid: np.ndarray | None
    phase_grid: PhaseGrid | None
    scheme: str
    charts: list
    classical: dict
    wigner: dict
    output_dir: Path
    _locator: _Locator = field(repr=False, default=None)

    @property
    def base_dir(self) -> Path:
        return self.path.parent if self.path is not None else Path.cwd()

    def error(self, message: str, table: str, key: str | None = None) -> ScenarioError:
        line = self._locator.line(table, key) if self._locator else None
        return ScenarioError(message, field=".".join(x for x in (table, key) if x), line=line)

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    # -- spectral objects ------------------------------------------------

    def build_state(self, rng: np.random.Generator | None = None) -> sp.VanHoveState:
        spec = self.state_spec
        if "file" in spec:
            from .io import load_kernel

            kernel, meta = load_kernel(self.base_dir / spec["file"])
            return sp.VanHoveState(kernel, float(meta.get("hbar", self.hbar)))
        grid, m = self.energy_grid, self.n_channels
        rng = self.rng() if rng is None else rng
        singular = _singular(grid, m, spec.get("singular", {"generator": "none"}), rng)
        regular = _regular(grid, m, spec.get("regular", {"generator": "none"}))
        return sp.VanHoveState(sp.SpectralKernel(grid, m, singular, regular), self.hbar)

    def build_observable(self) -> sp.VanHoveObservable:
        spec = self.observable_spec
        if "file" in spec:
            from .io import load_kernel

            kernel, _ = load_kernel(self.base_dir / spec["file"])
            return sp.VanHoveObservable(kernel)
        gen = spec.get("generator", "constant")
        if gen == "energy":
            return sp.energy_observable(self.energy_grid, self.n_channels, float(spec.get("regular_value", 1.0)))
        return sp.constant_observable(self.energy_grid, self.n_channels, float(spec.get("singular_value", 1.0)),
                                      float(spec.get("regular_value", 1.0)))

    def partition(self) -> Partition:
        return Partition(self.charts, self.phase_grid)

    def chart(self, label: str) -> Chart:
        for c in self.charts:
            if c.label == label:
                return c
        raise KeyError(label)


# -- generators --------------------------------------------------------------


def _channel_matrix(spec, m):
    w = spec.get("channel_weights")
    return None if w is None else np.diag(np.asarray(w, float))


def _singular(grid, m, spec, rng):
    gen = spec.get("generator", "none")
    scale = float(spec.get("scale", 1.0))
    if gen == "none":
        out = np.zeros((grid.n_points, m, m), complex)
    elif gen == "thermal":
        out = sp.thermal_singular(grid, m, float(spec.get("beta", 1.0)), _channel_matrix(spec, m))
    elif gen == "flat":
        out = sp.flat_singular(grid, m, spec.get("lo"), spec.get("hi"), _channel_matrix(spec, m))
    elif gen == "random_blocks":
        blocks = sp.random_hermitian_blocks(grid.n_points, m, rng, psd=True)
        blocks /= np.real(np.trace(blocks, axis1=1, axis2=2))[:, None, None]
        prof = sp.flat_singular(grid, 1, spec.get("lo"), spec.get("hi"))[:, 0, 0]
        out = prof[:, None, None] * blocks
    else:
        raise ValueError(f"unknown singular generator {gen!r}")
    return scale * out


def _regular(grid, m, spec):
    gen = spec.get("generator", "none")
    if gen == "none":
        return np.zeros((grid.n_points, grid.n_points, m, m), complex)
    kw = {k: float(v) for k, v in spec.items() if k != "generator"}
    if gen == "gaussian_nu":
        return sp.gaussian_nu_regular(grid, m, **kw)
    if gen == "compact_c1":
        return sp.compact_c1_regular(grid, m, **kw)
    raise ValueError(f"unknown regular generator {gen!r}")


_SINGULAR_KEYS = {"generator", "scale", "beta", "lo", "hi", "channel_weights"}
_REGULAR_KEYS = {
    "none": {"generator"},
    "gaussian_nu": {"generator", "sigma", "amplitude", "center", "window_width", "compensate"},
    "compact_c1": {"generator", "support", "amplitude", "center", "half_width"},
}
_SINGULAR_GENERATORS = {"none", "thermal", "flat", "random_blocks"}
_PREDICATES = {"energy-window", "half-plane", "rectangle", "separatrix-side"}
_CONSTANT_FORMS = {"hamiltonian", "harmonic_energy", "momentum", "position", "angular_momentum"}


# -- parsing -----------------------------------------------------------------


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc}") from None
    return parse_scenario(text, path)


def parse_scenario(text: str, path: Path | None = None) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ScenarioError(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None) from None
    loc = _Locator(text)
    return _Builder(raw, loc, path).build()


class _Builder:
    def __init__(self, raw, loc, path):
        self.raw = raw
        self.loc = loc
        self.path = path

    def fail(self, message, table, key=None):
        line = self.loc.line(table, key)
        return ScenarioError(message, field=".".join(x for x in (table, key) if x), line=line)

    def table(self, name, required=False):
        t = self.raw.get(name)
        if t is None:
            if required:
                raise ScenarioError(f"missing required section [{name}]", field=name)
            return None
        if not isinstance(t, dict):
            raise self.fail(f"[{name}] must be a table", name)
        return t

    def keys(self, table, name, allowed):
        extra = sorted(set(table) - set(allowed))
        if extra:
            raise self.fail(f"unknown key(s) {extra}; allowed: {sorted(allowed)}", name, extra[0])

    def number(self, table, name, key, default=None, *, lo=None, hi=None, strict_lo=False, integer=False):
        if key not in table:
            if default is None:
                raise self.fail(f"missing required key '{key}'", name)
            return default
        v = table[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.fail(f"'{key}' must be a number, got {v!r}", name, key)
        if integer and not isinstance(v, int):
            raise self.fail(f"'{key}' must be an integer, got {v!r}", name, key)
        if not math.isfinite(v):
            raise self.fail(f"'{key}' must be finite", name, key)
        if lo is not None and (v <= lo if strict_lo else v < lo):
            raise self.fail(f"'{key}' = {v} is out of range ({'>' if strict_lo else '>='} {lo} required)", name, key)
        if hi is not None and v > hi:
            raise self.fail(f"'{key}' = {v} is out of range (<= {hi} required)", name, key)
        return v

    def build(self) -> Scenario:
        raw = self.raw
        extra = sorted(set(raw) - _SECTIONS)
        if extra:
            raise self.fail(f"unknown top-level key(s) {extra}", "", extra[0])
        seed = self.number(raw, "", "seed", 0, lo=0, integer=True)
        hbar = float(self.number(raw, "", "hbar", 1.0, lo=0, strict_lo=True))

        system = self.system()
        egrid, n_channels = self.energy_grid()
        state_spec = self.state(egrid, n_channels)
        obs_spec = self.observable(egrid)
        time_grid = self.time_grid()
        phase_grid, scheme = self.phase_grid(system)
        charts = self.charts(system)
        classical = self.classical(charts, n_channels)
        wigner = self.wigner()
        out = self.table("output") or {}
        self.keys(out, "output", {"directory"})
        # relative output directories are taken from the working directory
        out_dir = Path(out.get("directory", "out"))
        return Scenario(self.path, raw, system, hbar, int(seed), egrid, n_channels, state_spec, obs_spec,
                        time_grid, phase_grid, scheme, charts, classical, wigner, out_dir, self.loc)

    def system(self):
        t = self.raw.get("system")
        if t is None:
            raise ScenarioError("exactly one [system] block is required, found none", field="system")
        if isinstance(t, list):
            raise self.fail(f"exactly one [system] block is required, found {len(t)}", "system[0]")
        name = t.get("name")
        if name not in SYSTEMS:
            raise self.fail(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}", "system", "name")
        params = {k: v for k, v in t.items() if k != "name"}
        for k in params:
            self.number(t, "system", k)
        try:
            return make_system(name, **params)
        except TypeError as exc:
            raise self.fail(f"bad parameters for {name}: {exc}", "system") from None

    def energy_grid(self):
        t = self.table("energy_grid")
        if t is None:
            return None, 1
        self.keys(t, "energy_grid", {"omega_min", "omega_max", "n_points", "n_channels"})
        lo = self.number(t, "energy_grid", "omega_min", lo=0)
        hi = self.number(t, "energy_grid", "omega_max")
        if hi <= lo:
            raise self.fail("omega_max must exceed omega_min", "energy_grid", "omega_max")
        n = self.number(t, "energy_grid", "n_points", lo=2, hi=4096, integer=True)
        m = self.number(t, "energy_grid", "n_channels", 1, lo=1, hi=64, integer=True)
        return sp.EnergyGrid(float(lo), float(hi), int(n)), int(m)

    def state(self, egrid, m):
        t = self.table("state")
        if t is None:
            return {}
        self.keys(t, "state", {"file", "singular", "regular"})
        if "file" in t:
            self.file_exists(t, "state")
            return dict(t)
        if egrid is None:
            raise self.fail("[state] generators need an [energy_grid]", "state")
        sing = t.get("singular", {"generator": "none"})
        reg = t.get("regular", {"generator": "none"})
        for key, spec in (("singular", sing), ("regular", reg)):
            if not isinstance(spec, dict):
                raise self.fail("must be an inline table", "state", key)
        gen = sing.get("generator", "none")
        if gen not in _SINGULAR_GENERATORS:
            raise self.fail(f"unknown singular generator {gen!r}; choose from {sorted(_SINGULAR_GENERATORS)}",
                            "state", "singular")
        bad = sorted(set(sing) - _SINGULAR_KEYS)
        if bad:
            raise self.fail(f"unknown singular parameter(s) {bad}", "state", "singular")
        w = sing.get("channel_weights")
        if w is not None and (len(w) != m or any(x < 0 for x in w)):
            raise self.fail(f"channel_weights must be {m} nonnegative numbers", "state", "singular")
        gen = reg.get("generator", "none")
        if gen not in _REGULAR_KEYS:
            raise self.fail(f"unknown regular generator {gen!r}; choose from {sorted(_REGULAR_KEYS)}",
                            "state", "regular")
        bad = sorted(set(reg) - _REGULAR_KEYS[gen])
        if bad:
            raise self.fail(f"unknown regular parameter(s) {bad} for {gen}", "state", "regular")
        if "sigma" in reg and not reg["sigma"] > 0:
            raise self.fail("sigma must be positive", "state", "regular")
        return {"singular": dict(sing), "regular": dict(reg)}

    def observable(self, egrid):
        t = self.table("observable")
        if t is None:
            return {"generator": "constant"}
        self.keys(t, "observable", {"generator", "file", "singular_value", "regular_value"})
        if "file" in t:
            self.file_exists(t, "observable")
        elif t.get("generator", "constant") not in ("constant", "energy"):
            raise self.fail("observable generator must be 'constant' or 'energy'", "observable", "generator")
        return dict(t)

    def file_exists(self, t, name):
        base = self.path.parent if self.path is not None else Path.cwd()
        if not (base / t["file"]).is_file():
            raise self.fail(f"referenced file {t['file']!r} does not exist", name, "file")

    def time_grid(self):
        t = self.table("time_grid")
        if t is None:
            return None
        self.keys(t, "time_grid", {"t_min", "t_max", "n_points"})
        lo = self.number(t, "time_grid", "t_min", 0.0, lo=0)
        hi = self.number(t, "time_grid", "t_max")
        n = self.number(t, "time_grid", "n_points", lo=1, hi=10**6, integer=True)
        if n > 1 and hi <= lo:
            raise self.fail("t_max must exceed t_min", "time_grid", "t_max")
        return np.linspace(float(lo), float(hi), int(n))

    def phase_grid(self, system):
        t = self.table("phase_grid")
        if t is None:
            return None, "fd4"
        self.keys(t, "phase_grid", {"q_min", "q_max", "n_q", "p_min", "p_max", "n_p", "scheme"})
        vals = {}
        for k in ("q_min", "q_max", "p_min", "p_max"):
            vals[k] = float(self.number(t, "phase_grid", k))
        for k in ("n_q", "n_p"):
            n = self.number(t, "phase_grid", k, lo=4, hi=4096, integer=True)
            if n % 2:
                raise self.fail(f"'{k}' must be even", "phase_grid", k)
            vals[k] = int(n)
        scheme = t.get("scheme", "fd4")
        if scheme not in SCHEMES:
            raise self.fail(f"scheme must be one of {list(SCHEMES)}", "phase_grid", "scheme")
        try:
            return PhaseGrid(dof=system.dof, **vals), scheme
        except ValueError as exc:
            raise self.fail(str(exc), "phase_grid") from None

    def charts(self, system):
        items = self.raw.get("charts", [])
        if not isinstance(items, list):
            raise self.fail("charts must be an array of tables ([[charts]])", "charts")
        charts = []
        for i, t in enumerate(items):
            name = f"charts[{i}]"
            self.keys(t, name, {"label", "predicate", "priority", "anchors", "constants", "low", "high",
                                "include_high", "normal", "offset", "closed", "lower", "upper", "energy",
                                "side", "p_sign"})
            label = t.get("label")
            if not isinstance(label, str) or not label:
                raise self.fail("chart needs a non-empty 'label'", name, "label")
            pred = t.get("predicate")
            if pred not in _PREDICATES:
                raise self.fail(f"predicate must be one of {sorted(_PREDICATES)}", name, "predicate")
            predicate = self.predicate(t, name, pred, system)
            constants = []
            for c in t.get("constants", []):
                form = c.get("form") if isinstance(c, dict) else None
                if form not in _CONSTANT_FORMS:
                    raise self.fail(f"constant form must be one of {sorted(_CONSTANT_FORMS)}", name, "constants")
                params = {k: v for k, v in c.items() if k != "form"}
                constants.append(make_constant(form, system, **params))
            anchors = t.get("anchors", [[0.0, 1]])
            if not (isinstance(anchors, list) and anchors
                    and all(isinstance(a, list) and len(a) == 2 and a[1] in (-1, 1) for a in anchors)):
                raise self.fail("anchors must be a list of [q, sign of p] pairs", name, "anchors")
            priority = self.number(t, name, "priority", 0, integer=True)
            charts.append(Chart(label, predicate, tuple(constants), int(priority),
                                tuple((float(a[0]), int(a[1])) for a in anchors)))
        labels = [c.label for c in charts]
        if len(set(labels)) != len(labels):
            raise self.fail(f"chart labels must be unique: {labels}", "charts[0]", "label")
        return charts

    def predicate(self, t, name, kind, system):
        n2 = 2 * system.dof
        if kind == "energy-window":
            return EnergyWindow(system.energy, float(self.number(t, name, "low", -math.inf)),
                                float(self.number(t, name, "high", math.inf)), bool(t.get("include_high", False)))
        if kind == "half-plane":
            normal = t.get("normal")
            if not (isinstance(normal, list) and len(normal) == n2):
                raise self.fail(f"'normal' must list {n2} coefficients (q..., p...)", name, "normal")
            return HalfPlane(tuple(float(x) for x in normal), float(self.number(t, name, "offset", 0.0)),
                             bool(t.get("closed", True)))
        if kind == "rectangle":
            lo, hi = t.get("lower"), t.get("upper")
            if not (isinstance(lo, list) and isinstance(hi, list) and len(lo) == len(hi) == n2):
                raise self.fail(f"'lower' and 'upper' must list {n2} bounds", name, "lower")
            return Rectangle(tuple(float(x) for x in lo), tuple(float(x) for x in hi))
        energy = t.get("energy", "separatrix")
        if energy == "separatrix":
            if system.separatrix is None:
                raise self.fail(f"system {system.name} has no separatrix; give 'energy'", name, "energy")
            energy = system.separatrix
        else:
            energy = float(self.number(t, name, "energy"))
        side = t.get("side", "inside")
        if side not in ("inside", "outside"):
            raise self.fail("side must be 'inside' or 'outside'", name, "side")
        p_sign = self.number(t, name, "p_sign", 0, lo=-1, hi=1, integer=True)
        return SeparatrixSide(system.energy, energy, side, int(p_sign))

    def classical(self, charts, n_channels):
        t = self.table("classical")
        if t is None:
            return {}
        allowed = {"step", "smearing", "max_time", "levels", "channel_map", "use_decohered", "trajectories",
                   "flow_probe", "flow_samples"}
        self.keys(t, "classical", allowed)
        out = {
            "step": float(self.number(t, "classical", "step", lo=0, hi=0.1, strict_lo=True)),
            "max_time": float(self.number(t, "classical", "max_time", 200.0, lo=0, strict_lo=True)),
            "flow_probe": float(self.number(t, "classical", "flow_probe", 1.0, lo=0)),
            "flow_samples": int(self.number(t, "classical", "flow_samples", 400, lo=1, integer=True)),
            "use_decohered": bool(t.get("use_decohered", False)),
        }
        smearing = t.get("smearing")
        if smearing is None:
            raise self.fail("missing required key 'smearing' (a width in energy units, or \"auto\")", "classical")
        if smearing != "auto":
            smearing = float(self.number(t, "classical", "smearing", lo=0, strict_lo=True))
        out["smearing"] = smearing
        labels = {c.label for c in charts}
        levels = []
        for i, lv in enumerate(t.get("levels", [])):
            name = "classical"
            if not isinstance(lv, dict) or set(lv) - {"chart", "energy", "weight"}:
                raise self.fail("levels entries are {chart, energy, weight}", name, "levels")
            if lv.get("chart") not in labels:
                raise self.fail(f"level {i} names unknown chart {lv.get('chart')!r}", name, "levels")
            e, w = lv.get("energy"), lv.get("weight", 1.0)
            if not isinstance(e, (int, float)) or not isinstance(w, (int, float)) or w < 0:
                raise self.fail(f"level {i}: energy must be a number and weight >= 0", name, "levels")
            levels.append((lv["chart"], float(e), float(w)))
        out["levels"] = levels
        cmap = t.get("channel_map")
        if cmap is not None:
            if len(cmap) != n_channels or any(c not in labels for c in cmap):
                raise self.fail(f"channel_map must list {n_channels} chart labels", "classical", "channel_map")
        if out["use_decohered"] and cmap is None:
            raise self.fail("use_decohered needs a channel_map", "classical", "channel_map")
        out["channel_map"] = cmap
        trajectories = []
        for i, tr in enumerate(t.get("trajectories", [])):
            name = f"classical.trajectories[{i}]"
            self.keys(tr, name, {"chart", "energy", "tau0", "duration", "step", "q0", "p0"})
            if tr.get("chart") not in labels:
                raise self.fail(f"unknown chart {tr.get('chart')!r}", name, "chart")
            trajectories.append({
                "chart": tr["chart"],
                "energy": None if "energy" not in tr else float(self.number(tr, name, "energy")),
                "q0": tr.get("q0"),
                "p0": tr.get("p0"),
                "tau0": float(self.number(tr, name, "tau0", 0.0)),
                "duration": float(self.number(tr, name, "duration", lo=0)),
                "step": float(self.number(tr, name, "step", out["step"], lo=0, strict_lo=True)),
            })
            if trajectories[-1]["energy"] is None and (tr.get("q0") is None or tr.get("p0") is None):
                raise self.fail("trajectory needs either 'energy' or both 'q0' and 'p0'", name)
        out["trajectories"] = trajectories
        return out

    def wigner(self):
        t = self.table("wigner")
        if t is None:
            return {}
        self.keys(t, "wigner", {"q_min", "q_max", "n", "states", "operators", "products", "scheme"})
        lo = float(self.number(t, "wigner", "q_min"))
        hi = float(self.number(t, "wigner", "q_max"))
        if hi <= lo:
            raise self.fail("q_max must exceed q_min", "wigner", "q_max")
        n = self.number(t, "wigner", "n", lo=4, hi=4096, integer=True)
        if n % 2:
            raise self.fail("'n' must be even", "wigner", "n")
        scheme = t.get("scheme", "fd4")
        if scheme not in SCHEMES:
            raise self.fail(f"scheme must be one of {list(SCHEMES)}", "wigner", "scheme")
        states = list(t.get("states", []))
        for s in states:
            if s.get("kind") not in ("ho_ground", "gaussian"):
                raise self.fail("state kind must be 'ho_ground' or 'gaussian'", "wigner", "states")
        operators = list(t.get("operators", []))
        for o in operators:
            if o.get("kind") not in ("identity", "position", "momentum", "ho_ground_projector"):
                raise self.fail("operator kind must be identity, position, momentum or ho_ground_projector",
                                "wigner", "operators")
        products = list(t.get("products", []))
        for pr in products:
            if pr.get("type") not in ("star", "moyal", "poisson"):
                raise self.fail("product type must be star, moyal or poisson", "wigner", "products")
            for key in ("f", "g"):
                if pr.get(key) not in _FIELD_FORMS:
                    raise self.fail(f"product operand {key} must be one of {sorted(_FIELD_FORMS)}",
                                    "wigner", "products")
            order = pr.get("order", 1)
            if not isinstance(order, int) or not 0 <= order <= 4:
                raise self.fail("product order must be an integer in [0, 4]", "wigner", "products")
        return {"q_min": lo, "q_max": hi, "n": int(n), "scheme": scheme, "states": states,
                "operators": operators, "products": products}


_FIELD_FORMS = {"q", "p", "q2", "p2", "qp", "H", "sin_q", "cos_q", "one"}


def field_form(name: str, system: HamiltonianSystem | None = None):
    """Closed-form phase-space functions addressable from scenario files."""
    forms = {
        "q": lambda Q, P: Q,
        "p": lambda Q, P: P,
        "q2": lambda Q, P: Q * Q,
        "p2": lambda Q, P: P * P,
        "qp": lambda Q, P: Q * P,
        "sin_q": lambda Q, P: np.sin(Q),
        "cos_q": lambda Q, P: np.cos(Q),
        "one": lambda Q, P: np.ones_like(Q),
    }
    if name == "H":
        if system is None or system.dof != 1:
            raise ValueError("'H' needs a one-degree-of-freedom system")
        return system.field_function()
    return forms[name]
