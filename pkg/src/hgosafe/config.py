"""Run configuration: TOML in, validated model objects out.

Every block is optional and defaults to the double-integrator case study.
A block that is present must be complete where partial input would be
ambiguous (a ``[system]`` block needs ``n``, ``a``, ``b`` and ``a0``).
Unknown keys are rejected so typos do not pass silently. Times are seconds.

Example::

    seed = 0
    threads = 0

    [system]
    n = 2
    a = "1"
    b = "0"
    a0 = 1.0

    [controller]
    beta = 0.2          # or K = [-0.2, -0.2]
    v_mode = "constant" # or "interval" (v is then v_max)
    v = 0.0
    u_max = 1.0

    [observer]
    alphas = [4.0, 4.0]
    epsilon = 0.01

    [sets]
    x_box = [[-4.0, 4.0], [-3.0, 3.0]]

    [horizon]
    mode = "infinite"   # or "finite"
    T = 5.0             # finite horizon
    c = 16.0            # omit to use the largest fitting sublevel set
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import tomli

from .errors import ConfigError, HgoSafeError
from .observer import ObserverDesign, build_observer
from .plant import ConstraintSets, LinearizingController, NormalFormSystem
from .reach import Grid, ReachConfig
from .sim import IntegratorConfig


@dataclass(frozen=True)
class SystemBlock:
    n: int = 2
    a: str = "1"
    b: str = "0"
    a0: float = 1.0


@dataclass(frozen=True)
class ControllerBlock:
    beta: float | None = 0.2
    K: tuple | None = None
    v_mode: str = "constant"
    v: float = 0.0
    u_max: float = 1.0


@dataclass(frozen=True)
class ObserverBlock:
    alphas: tuple = (4.0, 4.0)
    epsilon: float = 0.01
    rho: float | None = None


@dataclass(frozen=True)
class SetsBlock:
    x_box: tuple = ((-4.0, 4.0), (-3.0, 3.0))


@dataclass(frozen=True)
class HorizonBlock:
    mode: str = "infinite"
    T: float = 5.0
    c: float | None = 16.0
    x0_norm_sq: float | None = None
    tol: float = 1e-4


@dataclass(frozen=True)
class GridBlock:
    counts: int | tuple = 101
    inflate: float = 0.25
    mins: tuple | None = None
    maxs: tuple | None = None


@dataclass(frozen=True)
class ConstantsBlock:
    grid_density: int = 41
    safety_factor: float = 1.1


@dataclass(frozen=True)
class BoundBlock:
    mode: str = "stable"
    literal_c2hat: bool = False


@dataclass(frozen=True)
class ReachBlock:
    cfl: float = 0.5
    include_saturation: bool = True
    max_steps: int = 1_000_000
    xi: float = 0.0


@dataclass(frozen=True)
class SimBlock:
    x0: tuple = (-2.0, 2.0)
    xhat0: tuple | None = None  # None -> centre of X_safe
    T: float = 10.0
    samples: int = 20


@dataclass(frozen=True)
class SweepBlock:
    betas: tuple = tuple(round(0.05 * i, 2) for i in range(1, 11))


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "out"
    label: str = "run"
    contours: bool = True


@dataclass(frozen=True)
class RunConfig:
    system: SystemBlock = field(default_factory=SystemBlock)
    controller: ControllerBlock = field(default_factory=ControllerBlock)
    observer: ObserverBlock = field(default_factory=ObserverBlock)
    sets: SetsBlock = field(default_factory=SetsBlock)
    horizon: HorizonBlock = field(default_factory=HorizonBlock)
    grid: GridBlock = field(default_factory=GridBlock)
    constants: ConstantsBlock = field(default_factory=ConstantsBlock)
    bound: BoundBlock = field(default_factory=BoundBlock)
    reach: ReachBlock = field(default_factory=ReachBlock)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    sim: SimBlock = field(default_factory=SimBlock)
    sweep: SweepBlock = field(default_factory=SweepBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    seed: int = 0
    threads: int = 0

    def with_overrides(self, **blocks) -> "RunConfig":
        """Replace individual keys, e.g. ``with_overrides(observer={"epsilon": 1e-3})``."""
        cfg = self
        for name, values in blocks.items():
            block = getattr(cfg, name)
            if isinstance(values, dict):
                cfg = replace(cfg, **{name: replace(block, **values)})
            else:
                cfg = replace(cfg, **{name: values})
        return cfg

    def build(self) -> "Model":
        return build_model(self)


_REQUIRED = {"system": ("n", "a", "b", "a0")}
_TUPLE_KEYS = {"K", "alphas", "x_box", "x0", "xhat0", "betas", "mins", "maxs", "counts"}


def _as_tuple(v):
    if isinstance(v, list):
        return tuple(_as_tuple(x) for x in v)
    return v


def _block(cls, name: str, data) -> object:
    if not isinstance(data, dict):
        raise ConfigError(f"[{name}] must be a table")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    for key in _REQUIRED.get(name, ()):
        if key not in data:
            raise ConfigError(f"missing required field {name}.{key}")
    kw = {k: (_as_tuple(v) if k in _TUPLE_KEYS else v) for k, v in data.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


_BLOCKS = {f.name: f.default_factory for f in fields(RunConfig) if f.name not in ("seed", "threads")}


def config_from_dict(data: dict) -> RunConfig:
    unknown = sorted(set(data) - set(_BLOCKS) - {"seed", "threads"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kw = {}
    for name, factory in _BLOCKS.items():
        if name in data:
            kw[name] = _block(factory, name, data[name])
    for key in ("seed", "threads"):
        if key in data:
            if not isinstance(data[key], int) or data[key] < 0:
                raise ConfigError(f"{key} must be a nonnegative integer")
            kw[key] = data[key]
    return RunConfig(**kw)


def parse_config(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    return config_from_dict(data)


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text)


@dataclass(frozen=True)
class Model:
    """Validated objects built from a ``RunConfig``."""

    config: RunConfig
    system: NormalFormSystem
    controller: LinearizingController
    observer: ObserverDesign
    sets: ConstraintSets
    grid: Grid
    reach: ReachConfig


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def build_model(cfg: RunConfig) -> Model:
    """Validate every block and construct the model objects; raises ``ConfigError``."""
    s, c, o = cfg.system, cfg.controller, cfg.observer
    _check(isinstance(s.n, int) and 1 <= s.n <= 4, "system.n must be an integer in [1, 4]")
    for key in ("a", "b"):
        _check(isinstance(getattr(s, key), str), f"system.{key} must be an expression string")
    try:
        system = NormalFormSystem.from_expressions(s.n, s.a, s.b, float(s.a0))
    except ConfigError as exc:
        raise ConfigError(f"system: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"system: {exc}") from exc

    _check((c.beta is None) != (c.K is None), "controller needs exactly one of beta or K")
    try:
        if c.K is not None:
            _check(len(c.K) == s.n, f"controller.K must have {s.n} entries")
            controller = LinearizingController(np.array(c.K, dtype=float), None, c.v_mode, float(c.v))
        else:
            controller = LinearizingController.from_beta(float(c.beta), s.n, v_mode=c.v_mode, v=float(c.v))
        box = np.array(cfg.sets.x_box, dtype=float)
        _check(box.shape == (s.n, 2), f"sets.x_box must have shape ({s.n}, 2)")
        _check(bool(np.all(box[:, 0] < box[:, 1])), "sets.x_box intervals must satisfy lo < hi")
        sets = ConstraintSets(box, float(c.u_max))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"controller/sets: {exc}") from exc

    _check(len(o.alphas) == s.n, f"observer.alphas must have {s.n} entries")
    _check(isinstance(o.epsilon, (int, float)) and o.epsilon > 0, "observer.epsilon must be positive")
    try:
        observer = build_observer(np.array(o.alphas, dtype=float), float(o.epsilon), o.rho)
    except HgoSafeError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"observer: {exc}") from exc

    h = cfg.horizon
    _check(h.mode in ("finite", "infinite"), "horizon.mode must be 'finite' or 'infinite'")
    _check(h.T > 0 and math.isfinite(h.T), "horizon.T must be positive and finite")
    _check(h.c is None or h.c > 0, "horizon.c must be positive")
    _check(h.tol > 0, "horizon.tol must be positive")
    _check(cfg.bound.mode in ("general", "stable"), "bound.mode must be 'general' or 'stable'")
    _check(cfg.reach.xi >= 0, "reach.xi must be nonnegative")
    _check(0 < cfg.reach.cfl <= 1, "reach.cfl must lie in (0, 1]")
    _check(cfg.constants.grid_density >= 2, "constants.grid_density must be >= 2")
    _check(cfg.constants.safety_factor >= 1, "constants.safety_factor must be >= 1")
    _check(len(cfg.sim.x0) == s.n, f"sim.x0 must have {s.n} entries")
    _check(cfg.sim.xhat0 is None or len(cfg.sim.xhat0) == s.n, f"sim.xhat0 must have {s.n} entries")
    _check(cfg.sim.T > 0, "sim.T must be positive")
    _check(len(cfg.sweep.betas) >= 1, "sweep.betas must be nonempty")
    _check(isinstance(cfg.output.label, str) and cfg.output.label != "" and "/" not in cfg.output.label,
           "output.label must be a nonempty name without '/'")

    g = cfg.grid
    try:
        if g.mins is not None or g.maxs is not None:
            _check(g.mins is not None and g.maxs is not None, "grid.mins and grid.maxs go together")
            counts = np.broadcast_to(np.asarray(g.counts), (s.n,))
            grid = Grid(tuple(g.mins), tuple(g.maxs), tuple(counts))
        else:
            grid = Grid.around(sets.x_box, g.counts, g.inflate)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc
    _check(grid.ndim == s.n, "grid dimension must match system.n")
    _check(grid.covers(sets.x_box), "grid must cover X_safe with at least two cells of margin")

    reach = ReachConfig(cfl=cfg.reach.cfl, tol=h.tol, max_steps=cfg.reach.max_steps,
                        include_saturation=cfg.reach.include_saturation, threads=cfg.threads)
    return Model(cfg, system, controller, observer, sets, grid, reach)
