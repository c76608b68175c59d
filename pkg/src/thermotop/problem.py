"""Problem definitions: a small ``key = value`` text format and the beam presets.

Example::

    # bi-clamped beam, point load at the bottom centre
    dims = 0.5 0.25 0.02
    resolution = 100 50 3
    fix = x=min
    fix = x=max
    load = x=0.25 y=min force=0,-1e5,0
    thermal = uniform 1
    constraint = compliance 5
    vf_target = 0.25

Node selectors are ``axis=coord`` tokens (``coord`` may be ``min``/``max``);
every selected node lies on all listed planes.  Repeatable keys (``fix``,
``load``, ``pressure``, ``temperature``, ``flux``, ``constraint``) accumulate;
a ``preset = name`` line loads a benchmark whose entries are replaced by the
first occurrence of the same key later in the file.

Thermal modes:

* ``thermal = uniform DT``: prescribed uniform change, no thermal solve;
* ``thermal = gradient LEFT RIGHT``: faces ``x=min`` and ``x=max`` held at
  ``t0 + LEFT`` and ``t0 + RIGHT``;
* ``thermal = dirichlet``: absolute temperatures from ``temperature = SEL T``
  lines plus optional ``flux = SEL WATTS`` (total, split over the nodes).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .driver import ConstraintSpec, OptimizerConfig, Problem
from .fea import FEModel, SolverSettings
from .grid import (
    AXES,
    BoundaryConditions,
    Dirichlet,
    FacePressure,
    MaterialModel,
    UniformDelta,
    VoxelGrid,
    build_grid,
)

REQUIRED = ("dims", "resolution", "fix", "constraint")
REPEATABLE = ("fix", "load", "pressure", "temperature", "flux", "constraint")
MATERIAL_KEYS = {"E": "E", "poisson": "nu", "alpha": "alpha", "conductivity": "k", "t0": "t0"}
CONFIG_KEYS = {f.name: f for f in dataclasses.fields(OptimizerConfig)}
SCALAR_KEYS = ("dims", "resolution", "thermal", *MATERIAL_KEYS, *CONFIG_KEYS)


class ProblemError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


Selector = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Fix:
    where: Selector
    dofs: str = "xyz"


@dataclass(frozen=True)
class Load:
    where: Selector
    force: tuple[float, float, float]


@dataclass(frozen=True)
class Pressure:
    where: Selector
    value: float
    direction: str


@dataclass(frozen=True)
class NodalValue:
    where: Selector
    value: float


@dataclass(frozen=True)
class ConstraintDef:
    kind: str
    factor: float
    where: Selector = ()
    component: str = ""


@dataclass
class ProblemDefinition:
    dims: tuple[float, float, float]
    resolution: tuple[int, int, int]
    material: dict = field(default_factory=dict)
    fix: list[Fix] = field(default_factory=list)
    load: list[Load] = field(default_factory=list)
    pressure: list[Pressure] = field(default_factory=list)
    thermal: tuple = ("uniform", 0.0)
    temperature: list[NodalValue] = field(default_factory=list)
    flux: list[NodalValue] = field(default_factory=list)
    constraint: list[ConstraintDef] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def grid(self) -> VoxelGrid:
        return build_grid(self.dims, self.resolution)

    def material_model(self) -> MaterialModel:
        return MaterialModel(**{MATERIAL_KEYS[k]: v for k, v in self.material.items()})

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(**self.config)

    def boundary_conditions(self, grid: VoxelGrid) -> BoundaryConditions:
        fixed = []
        for fx in self.fix:
            nodes = _select(grid, fx.where)
            for c in fx.dofs:
                fixed.append(3 * nodes + AXES.index(c))
        loads = []
        for ld in self.load:
            nodes = _select(grid, ld.where)
            share = np.asarray(ld.force) / nodes.size
            loads.extend((int(n), share) for n in nodes)
        pressures = []
        for pr in self.pressure:
            if len(pr.where) != 1:
                raise ProblemError("pressure needs exactly one plane, e.g. y=max")
            axis = AXES.index(pr.where[0][0])
            index = _plane(grid, axis, pr.where[0][1])
            direction = [0.0, 0.0, 0.0]
            direction[AXES.index(pr.direction[1])] = -1.0 if pr.direction[0] == "-" else 1.0
            pressures.append(FacePressure(axis, index, pr.value, tuple(direction)))
        t0 = self.material_model().t0
        mode = self.thermal[0]
        if mode == "uniform":
            thermal = UniformDelta(self.thermal[1])
        else:
            nodes, values = [], []
            if mode == "gradient":
                for coord, dt in (("min", self.thermal[1]), ("max", self.thermal[2])):
                    sel = _select(grid, (("x", coord),))
                    nodes.append(sel)
                    values.append(np.full(sel.size, t0 + dt))
            for tv in self.temperature:
                sel = _select(grid, tv.where)
                nodes.append(sel)
                values.append(np.full(sel.size, tv.value))
            if not nodes:
                raise ProblemError("dirichlet thermal mode needs at least one temperature line")
            nodes_arr = np.concatenate(nodes)
            values_arr = np.concatenate(values)
            # later lines win on shared nodes
            last = {int(n): v for n, v in zip(nodes_arr, values_arr)}
            keys = np.array(sorted(last), dtype=np.int64)
            flux = None
            if self.flux:
                flux = np.zeros(grid.n_nodes)
                for fl in self.flux:
                    sel = _select(grid, fl.where)
                    flux[sel] += fl.value / sel.size
            thermal = Dirichlet(keys, np.array([last[k] for k in keys]), flux)
        return BoundaryConditions(np.concatenate(fixed) if fixed else [], loads, pressures, thermal)

    def constraint_specs(self, grid: VoxelGrid) -> list[ConstraintSpec]:
        specs = []
        for c in self.constraint:
            dof = None
            if c.kind == "displacement":
                nodes = _select(grid, c.where)
                if nodes.size != 1:
                    raise ProblemError(f"displacement selector must pick one node, got {nodes.size}")
                dof = 3 * int(nodes[0]) + AXES.index(c.component)
            specs.append(ConstraintSpec(c.kind, c.factor, dof))
        return specs

    def build(self, solver: SolverSettings | None = None) -> Problem:
        grid = self.grid()
        config = self.optimizer_config()
        solver = solver or SolverSettings(tol=config.cg_tol, preconditioner=config.preconditioner)
        model = FEModel(grid, self.material_model(), self.boundary_conditions(grid), solver)
        return Problem(model, self.constraint_specs(grid))


def _plane(grid: VoxelGrid, axis: int, coord: str) -> int:
    if coord == "min":
        return 0
    if coord == "max":
        return grid.shape[axis]
    return grid.plane_index(axis, float(coord))


def _select(grid: VoxelGrid, where: Selector) -> np.ndarray:
    mask = np.ones(grid.n_nodes, dtype=bool)
    for axis_name, coord in where:
        axis = AXES.index(axis_name)
        mask &= grid.node_ijk[:, axis] == _plane(grid, axis, coord)
    nodes = np.flatnonzero(mask)
    if nodes.size == 0:
        raise ProblemError(f"selector {_fmt_selector(where)} matches no nodes")
    return nodes


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _float(text: str, what: str, line: int) -> float:
    try:
        return float(text)
    except ValueError:
        raise ProblemError(f"{what}: expected a number, got {text!r}", line) from None


def _parse_selector(tokens: list[str], line: int) -> tuple[Selector, dict[str, str]]:
    parts: list[str] = []
    for tok in tokens:
        for part in tok.split(","):
            if part and "=" not in part and parts and parts[-1].split("=", 1)[0] not in AXES:
                parts[-1] += "," + part  # comma-separated value such as force=0,-1,0
            elif part:
                parts.append(part)
    where, extra = [], {}
    for part in parts:
        if "=" not in part:
            raise ProblemError(f"expected key=value, got {part!r}", line)
        k, v = part.split("=", 1)
        if k in AXES:
            if v not in ("min", "max"):
                _float(v, f"coordinate {k}", line)
            where.append((k, v))
        else:
            extra[k] = v
    return tuple(where), extra


def _parse_entry(key: str, value: str, line: int, prob: dict) -> None:
    tokens = value.split()
    if key == "dims":
        if len(tokens) != 3:
            raise ProblemError("dims needs three lengths", line)
        dims = tuple(_float(t, "dims", line) for t in tokens)
        if min(dims) <= 0:
            raise ProblemError("dims must be positive", line)
        prob["dims"] = dims
    elif key == "resolution":
        try:
            res = tuple(int(t) for t in tokens)
        except ValueError:
            raise ProblemError("resolution needs three integers", line) from None
        if len(res) != 3 or min(res) < 1:
            raise ProblemError("resolution needs three positive integers", line)
        prob["resolution"] = res
    elif key in MATERIAL_KEYS:
        prob["material"][key] = _float(value, key, line)
        try:
            MaterialModel(**{MATERIAL_KEYS[k]: v for k, v in prob["material"].items()})
        except ValueError as exc:
            raise ProblemError(f"{key} out of range: {exc}", line) from None
    elif key in CONFIG_KEYS:
        prob["config"][key] = _config_value(key, value, line)
    elif key == "fix":
        where, extra = _parse_selector(tokens, line)
        dofs = extra.pop("dofs", "xyz")
        if extra or not where or not dofs or set(dofs) - set(AXES):
            raise ProblemError("fix expects a selector and optional dofs=xyz", line)
        prob["fix"].append(Fix(where, "".join(sorted(set(dofs)))))
    elif key == "load":
        where, extra = _parse_selector(tokens, line)
        if set(extra) != {"force"} or not where:
            raise ProblemError("load expects a selector and force=fx,fy,fz", line)
        force = tuple(_float(t, "force", line) for t in extra["force"].split(",") if t)
        if len(force) != 3:
            raise ProblemError("force needs three components", line)
        prob["load"].append(Load(where, force))
    elif key == "pressure":
        if len(tokens) != 3:
            raise ProblemError("pressure expects: PLANE VALUE DIRECTION (e.g. y=max 6e5 -y)", line)
        where, extra = _parse_selector(tokens[:1], line)
        direction = tokens[2]
        if extra or len(where) != 1 or len(direction) != 2 or direction[0] not in "+-" or direction[1] not in AXES:
            raise ProblemError("pressure expects: PLANE VALUE DIRECTION (e.g. y=max 6e5 -y)", line)
        prob["pressure"].append(Pressure(where, _float(tokens[1], "pressure", line), direction))
    elif key == "thermal":
        mode = tokens[0] if tokens else ""
        if mode == "uniform" and len(tokens) == 2:
            prob["thermal"] = ("uniform", _float(tokens[1], "thermal", line))
        elif mode == "gradient" and len(tokens) == 3:
            prob["thermal"] = ("gradient", _float(tokens[1], "thermal", line), _float(tokens[2], "thermal", line))
        elif mode == "dirichlet" and len(tokens) == 1:
            prob["thermal"] = ("dirichlet",)
        else:
            raise ProblemError("thermal expects 'uniform DT', 'gradient LEFT RIGHT' or 'dirichlet'", line)
    elif key in ("temperature", "flux"):
        if len(tokens) < 2:
            raise ProblemError(f"{key} expects a selector and a value", line)
        where, extra = _parse_selector(tokens[:-1], line)
        if extra or not where:
            raise ProblemError(f"{key} expects a selector and a value", line)
        prob[key].append(NodalValue(where, _float(tokens[-1], key, line)))
    elif key == "constraint":
        if len(tokens) < 2:
            raise ProblemError("constraint expects KIND FACTOR", line)
        kind, factor = tokens[0], _float(tokens[1], "constraint factor", line)
        if kind not in ("compliance", "stress", "displacement"):
            raise ProblemError(f"unknown constraint kind {kind!r}", line)
        if not factor > 0:
            raise ProblemError("constraint factor must be positive", line)
        if kind == "displacement":
            where, extra = _parse_selector(tokens[2:], line)
            comp = extra.pop("dir", "")
            if extra or not where or comp not in AXES or not comp:
                raise ProblemError("displacement constraint expects a node selector and dir=x|y|z", line)
            prob["constraint"].append(ConstraintDef(kind, factor, where, comp))
        else:
            if len(tokens) != 2:
                raise ProblemError(f"{kind} constraint takes only a factor", line)
            prob["constraint"].append(ConstraintDef(kind, factor))
    else:
        raise ProblemError(f"unknown key {key!r}", line)


def _config_value(key: str, value: str, line: int):
    if key == "preconditioner":
        if value not in ("jacobi", "amg"):
            raise ProblemError("preconditioner must be jacobi or amg", line)
        return value
    if CONFIG_KEYS[key].type == "bool":
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ProblemError(f"{key} expects true or false", line)
        return value.lower() in ("true", "1", "yes")
    if key == "inner_max":
        try:
            return int(value)
        except ValueError:
            raise ProblemError("inner_max expects an integer", line) from None
    return _float(value, key, line)


def _empty() -> dict:
    return {
        "material": {},
        "config": {},
        "thermal": ("uniform", 0.0),
        **{k: [] for k in REPEATABLE},
    }


def parse_problem(text: str, overrides: list[str] | dict | None = None) -> ProblemDefinition:
    """Parse the text format (or a bare preset name) into a validated definition."""
    stripped = text.strip()
    if stripped in PRESETS:
        text = f"preset = {stripped}\n"
    prob = _empty()
    replaced: set[tuple[str, bool]] = set()
    lines = text.splitlines()
    entries = []
    for no, raw in enumerate(lines, start=1):
        content = raw.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ProblemError(f"expected 'key = value', got {content!r}", no)
        key, value = (s.strip() for s in content.split("=", 1))
        entries.append((no, key, value))
    if overrides:
        items = overrides.items() if isinstance(overrides, dict) else (o.split("=", 1) for o in overrides)
        for pair in items:
            if len(pair) != 2:
                raise ProblemError(f"override must be key=value, got {pair!r}")
            entries.append((None, pair[0].strip(), str(pair[1]).strip()))

    preset_done = False
    for no, key, value in entries:
        if key == "preset":
            if preset_done or prob["constraint"] or prob["fix"]:
                raise ProblemError("preset must come first and only once", no)
            if value not in PRESETS:
                raise ProblemError(f"unknown preset {value!r}; choose from {sorted(PRESETS)}", no)
            base = parse_problem(PRESETS[value])
            prob = _as_dict(base)
            preset_done = True
            continue
        if key in REPEATABLE:
            # preset entries yield to the file, file entries yield to overrides
            tag = (key, no is None)
            if (preset_done or no is None) and tag not in replaced:
                prob[key] = []
            replaced.add(tag)
        _parse_entry(key, value, no, prob)

    missing = [k for k in REQUIRED if not prob.get(k)]
    if missing:
        raise ProblemError(f"missing required keys: {', '.join(missing)} (required: {', '.join(REQUIRED)})")
    if not prob["load"] and not prob["pressure"] and prob["thermal"] == ("uniform", 0.0):
        raise ProblemError("problem has no load: add load, pressure or a thermal change")
    if prob["thermal"][0] == "dirichlet" and not prob["temperature"]:
        raise ProblemError("thermal = dirichlet needs at least one temperature line")
    if prob["thermal"][0] == "uniform" and (prob["temperature"] or prob["flux"]):
        raise ProblemError("temperature/flux lines need thermal = dirichlet or gradient")
    try:
        OptimizerConfig(**prob["config"])
    except (TypeError, ValueError) as exc:
        raise ProblemError(f"optimizer settings: {exc}") from None
    return ProblemDefinition(**prob)


def _as_dict(defn: ProblemDefinition) -> dict:
    d = {f.name: getattr(defn, f.name) for f in dataclasses.fields(defn)}
    d["material"] = dict(d["material"])
    d["config"] = dict(d["config"])
    for k in REPEATABLE:
        d[k] = list(d[k])
    return d


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _num(x: float) -> str:
    return repr(float(x))


def _fmt_selector(where: Selector) -> str:
    return " ".join(f"{k}={v}" for k, v in where)


def serialize_problem(defn: ProblemDefinition) -> str:
    out = [
        f"dims = {' '.join(_num(v) for v in defn.dims)}",
        f"resolution = {' '.join(str(v) for v in defn.resolution)}",
    ]
    out += [f"{k} = {_num(v)}" for k, v in defn.material.items()]
    out += [f"fix = {_fmt_selector(f.where)} dofs={f.dofs}" for f in defn.fix]
    out += [f"load = {_fmt_selector(ld.where)} force={','.join(_num(v) for v in ld.force)}" for ld in defn.load]
    out += [f"pressure = {_fmt_selector(p.where)} {_num(p.value)} {p.direction}" for p in defn.pressure]
    mode = defn.thermal[0]
    out.append(f"thermal = {' '.join([mode, *(_num(v) for v in defn.thermal[1:])])}")
    out += [f"temperature = {_fmt_selector(t.where)} {_num(t.value)}" for t in defn.temperature]
    out += [f"flux = {_fmt_selector(t.where)} {_num(t.value)}" for t in defn.flux]
    for c in defn.constraint:
        tail = f" {_fmt_selector(c.where)} dir={c.component}" if c.kind == "displacement" else ""
        out.append(f"constraint = {c.kind} {_num(c.factor)}{tail}")
    for k, v in defn.config.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = _num(v)
        out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# benchmarks
# ---------------------------------------------------------------------------

PRESETS = {
    "clamped-beam-point": """\
# bi-clamped beam, point load at the centre of the bottom edge
dims = 0.5 0.25 0.02
resolution = 100 50 3
fix = x=min dofs=xyz
fix = x=max dofs=xyz
load = x=0.25 y=min force=0.0,-100000.0,0.0
thermal = uniform 1.0
constraint = compliance 5.0
vf_target = 0.25
history = true
smooth = true
preconditioner = amg
dv_recover = true
symmetric_ties = true
cg_tol = 1e-11
""",
    "clamped-beam-distributed": """\
# bi-clamped beam, uniform pressure on the top face
dims = 0.5 0.28 0.01
resolution = 125 60 2
fix = x=min dofs=xyz
fix = x=max dofs=xyz
pressure = y=max 600000.0 -y
thermal = uniform 20.0
constraint = compliance 5.0
vf_target = 0.3
history = true
smooth = true
preconditioner = amg
dv_recover = true
symmetric_ties = true
cg_tol = 1e-11
""",
}


def generate_benchmark(name: str, overrides: list[str] | dict | None = None) -> ProblemDefinition:
    """Preset beam problem with ``key=value`` overrides (repeatable keys are replaced)."""
    if name not in PRESETS:
        raise ProblemError(f"unknown benchmark {name!r}; choose from {sorted(PRESETS)}")
    return parse_problem(PRESETS[name], overrides)


def load_problem(source: str, overrides: list[str] | dict | None = None) -> ProblemDefinition:
    """Read a problem file, or expand a preset name."""
    if source in PRESETS:
        return generate_benchmark(source, overrides)
    try:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ProblemError(f"cannot read problem file {source!r}: {exc.strerror}") from None
    return parse_problem(text, overrides)
