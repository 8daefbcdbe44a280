"""Experiment configuration: TOML file -> validated frozen dataclasses.

Grammar (TOML; every section optional except ``system``, ``data``, ``basis``)::

    [system]
    order = 1                  # 1 or 2
    N = 100
    d = 1
    include_self = true
    masses = 1.0               # scalar or list of N (order 2)
    kernel = { type = "opinion_threshold" }   # | cutoff(radius) | rapid_decay
                                              # | basis_expansion(K, R, coefficients)

    [data]
    M = 3
    L = 6
    T = 5.0
    T_f = 10.0                 # prediction horizon for `evaluate`
    ic_low = [0.0]
    ic_high = [12.0]
    vel_low = [-0.2]           # order 2
    vel_high = [0.2]
    seed = 7

    [basis]
    K = 100
    R = 10.0

    [noise]
    levels = [0.0]             # fractions of the mean speed

    [sbl]
    hyperprior = "laplace"     # | "flat"
    noise_fraction = 0.01      # beta
    noise_init = "energy"      # s2 = beta*||b||^2  | "mean_square": beta*||b||^2/n
    noise_reestimate = false   # true: re-estimate s2 whenever the greedy loop stalls
    max_iterations = 1000
    convergence_tol = 1e-8

    [selection]
    criterion = "wTU"          # | "wPE" | "wEU"
    candidates = "all"         # or a list of one-based indices
    correct_support = [1, 10]  # inclusive range counted as success in sweeps

    [sweep]
    M_values = [3]
    trials = 10

    [integrator]
    rtol = 1e-5
    atol = 1e-6

    [output]
    dir = "runs"               # overridden by --out

Unknown keys anywhere are rejected.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .kernels import InteractionKernel, kernel_from_dict, kernel_to_dict


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SystemBlock:
    order: int = 1
    N: int = 100
    d: int = 1
    include_self: bool = True
    masses: Union[float, tuple] = 1.0
    kernel: dict = field(default_factory=lambda: {"type": "opinion_threshold"})


@dataclass(frozen=True)
class DataBlock:
    M: int = 3
    L: int = 6
    T: float = 5.0
    T_f: Optional[float] = None
    ic_low: tuple = (0.0,)
    ic_high: tuple = (12.0,)
    vel_low: Optional[tuple] = None
    vel_high: Optional[tuple] = None
    seed: int = 0


@dataclass(frozen=True)
class BasisBlock:
    K: int = 100
    R: float = 10.0


@dataclass(frozen=True)
class NoiseBlock:
    levels: tuple = (0.0,)


@dataclass(frozen=True)
class SblBlock:
    hyperprior: str = "laplace"
    noise_fraction: float = 0.01
    noise_init: str = "energy"
    noise_reestimate: bool = False
    max_iterations: int = 1000
    convergence_tol: float = 1e-8


@dataclass(frozen=True)
class SelectionBlock:
    criterion: str = "wTU"
    candidates: Union[str, tuple] = "all"
    correct_support: Optional[tuple] = None


@dataclass(frozen=True)
class SweepBlock:
    M_values: tuple = (3,)
    trials: int = 10


@dataclass(frozen=True)
class IntegratorBlock:
    rtol: float = 1e-5
    atol: float = 1e-6


@dataclass(frozen=True)
class OutputBlock:
    dir: str = "runs"


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemBlock = SystemBlock()
    data: DataBlock = DataBlock()
    basis: BasisBlock = BasisBlock()
    noise: NoiseBlock = NoiseBlock()
    sbl: SblBlock = SblBlock()
    selection: SelectionBlock = SelectionBlock()
    sweep: SweepBlock = SweepBlock()
    integrator: IntegratorBlock = IntegratorBlock()
    output: OutputBlock = OutputBlock()

    # -- derived objects -------------------------------------------------
    def kernel(self) -> InteractionKernel:
        return kernel_from_dict(self.system.kernel)

    def system_spec(self):
        from .dynamics import SystemSpec

        m = self.system.masses
        masses = None if self.system.order == 1 else (m if isinstance(m, float) else list(m))
        return SystemSpec(order=self.system.order, N=self.system.N, d=self.system.d,
                          kernel=self.kernel(), masses=masses,
                          include_self=self.system.include_self)

    def ic_box(self):
        from .data import ICBox

        return ICBox(self.data.ic_low, self.data.ic_high, self.data.vel_low, self.data.vel_high)

    def basis_family(self):
        from .kernels import BasisFamily

        return BasisFamily(self.basis.R, self.basis.K)

    def sbl_config(self):
        from .sbl import SblConfig

        b = self.sbl
        return SblConfig(hyperprior=b.hyperprior, max_iterations=b.max_iterations,
                         convergence_tol=b.convergence_tol, noise_fraction=b.noise_fraction,
                         noise_init=b.noise_init, noise_reestimate=b.noise_reestimate)

    def integrator_config(self):
        from .dynamics import IntegratorConfig

        return IntegratorConfig(rtol=self.integrator.rtol, atol=self.integrator.atol)

    def candidate_list(self):
        c = self.selection.candidates
        return None if c == "all" else list(c)

    def support_range(self):
        cs = self.selection.correct_support
        return None if cs is None else (int(cs[0]), int(cs[1]))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        """Short digest of every section except ``output`` (where results go is not part of the experiment)."""
        d = self.to_dict()
        d.pop("output")
        blob = json.dumps(d, sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **sections) -> "ExperimentConfig":
        """``cfg.replace(data={"M": 5})`` returns a validated copy."""
        d = self.to_dict()
        for sec, vals in sections.items():
            if sec not in d:
                raise ConfigError(f"unknown section {sec!r}")
            d[sec].update(vals)
        return from_dict(d)


_BLOCKS = {
    "system": SystemBlock, "data": DataBlock, "basis": BasisBlock, "noise": NoiseBlock,
    "sbl": SblBlock, "selection": SelectionBlock, "sweep": SweepBlock,
    "integrator": IntegratorBlock, "output": OutputBlock,
}


def _tuple(x, name, n=None, cast=float):
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        x = [x]
    if not isinstance(x, (list, tuple)):
        raise ConfigError(f"{name} must be a list")
    try:
        out = tuple(cast(v) for v in x)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} has non-numeric entries") from None
    if n is not None and len(out) != n:
        raise ConfigError(f"{name} must have length {n}")
    return out


def _int(x, name, lo=None):
    if isinstance(x, bool) or not isinstance(x, int):
        raise ConfigError(f"{name} must be an integer")
    if lo is not None and x < lo:
        raise ConfigError(f"{name} must be >= {lo}")
    return x


def _pos(x, name):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not x > 0:
        raise ConfigError(f"{name} must be a positive number")
    return float(x)


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    s, dt, b = cfg.system, cfg.data, cfg.basis
    if s.order not in (1, 2):
        raise ConfigError("system.order must be 1 or 2")
    _int(s.N, "system.N", 2)
    _int(s.d, "system.d", 1)
    if not isinstance(s.include_self, bool):
        raise ConfigError("system.include_self must be a boolean")
    try:
        kernel_to_dict(kernel_from_dict(s.kernel))
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"system.kernel: {exc}") from None
    masses = s.masses
    if isinstance(masses, (int, float)) and not isinstance(masses, bool):
        masses = float(masses)
        if not masses > 0:
            raise ConfigError("system.masses must be positive")
    else:
        masses = _tuple(masses, "system.masses", s.N)
        if min(masses) <= 0:
            raise ConfigError("system.masses must be positive")
    _int(dt.M, "data.M", 1)
    _int(dt.L, "data.L", 1)
    T = _pos(dt.T, "data.T")
    T_f = None if dt.T_f is None else _pos(dt.T_f, "data.T_f")
    if T_f is not None and T_f < T:
        raise ConfigError("data.T_f must be at least data.T")
    lo = _tuple(dt.ic_low, "data.ic_low", s.d)
    hi = _tuple(dt.ic_high, "data.ic_high", s.d)
    if any(a >= c for a, c in zip(lo, hi)):
        raise ConfigError("data.ic_low must be below data.ic_high")
    vlo = vhi = None
    if s.order == 2:
        if dt.vel_low is None or dt.vel_high is None:
            raise ConfigError("order-2 systems need data.vel_low and data.vel_high")
        vlo = _tuple(dt.vel_low, "data.vel_low", s.d)
        vhi = _tuple(dt.vel_high, "data.vel_high", s.d)
        if any(a >= c for a, c in zip(vlo, vhi)):
            raise ConfigError("data.vel_low must be below data.vel_high")
    _int(dt.seed, "data.seed", 0)
    _int(b.K, "basis.K", 2)
    R = _pos(b.R, "basis.R")
    levels = _tuple(cfg.noise.levels, "noise.levels")
    if any(v < 0 for v in levels):
        raise ConfigError("noise.levels must be nonnegative")
    sb = cfg.sbl
    if sb.hyperprior not in ("flat", "laplace"):
        raise ConfigError("sbl.hyperprior must be 'flat' or 'laplace'")
    frac = _pos(sb.noise_fraction, "sbl.noise_fraction")
    if frac > 1:
        raise ConfigError("sbl.noise_fraction must be <= 1")
    if sb.noise_init not in ("mean_square", "energy"):
        raise ConfigError("sbl.noise_init must be 'mean_square' or 'energy'")
    if not isinstance(sb.noise_reestimate, bool):
        raise ConfigError("sbl.noise_reestimate must be a boolean")
    _int(sb.max_iterations, "sbl.max_iterations", 1)
    tol = _pos(sb.convergence_tol, "sbl.convergence_tol")
    sel = cfg.selection
    if sel.criterion not in ("wTU", "wPE", "wEU"):
        raise ConfigError("selection.criterion must be wTU, wPE or wEU")
    cands = sel.candidates
    if cands != "all":
        cands = _tuple(cands, "selection.candidates", cast=int)
        if not cands or any(not 1 <= k <= b.K for k in cands):
            raise ConfigError(f"selection.candidates must lie in 1..{b.K}")
    support = None
    if sel.correct_support is not None:
        support = _tuple(sel.correct_support, "selection.correct_support", 2, cast=int)
        if not 1 <= support[0] <= support[1] <= b.K:
            raise ConfigError("selection.correct_support must be an ordered range in 1..K")
    Ms = _tuple(cfg.sweep.M_values, "sweep.M_values", cast=int)
    if not Ms or min(Ms) < 1:
        raise ConfigError("sweep.M_values must be positive integers")
    _int(cfg.sweep.trials, "sweep.trials", 1)
    rtol = _pos(cfg.integrator.rtol, "integrator.rtol")
    atol = _pos(cfg.integrator.atol, "integrator.atol")
    if rtol >= 1:
        raise ConfigError("integrator.rtol must be < 1")
    return ExperimentConfig(
        system=dataclasses.replace(s, masses=masses, kernel=dict(s.kernel)),
        data=dataclasses.replace(dt, T=T, T_f=T_f, ic_low=lo, ic_high=hi, vel_low=vlo, vel_high=vhi),
        basis=BasisBlock(K=b.K, R=R),
        noise=NoiseBlock(levels=levels),
        sbl=dataclasses.replace(sb, noise_fraction=frac, convergence_tol=tol),
        selection=SelectionBlock(criterion=sel.criterion, candidates=cands, correct_support=support),
        sweep=SweepBlock(M_values=Ms, trials=cfg.sweep.trials),
        integrator=IntegratorBlock(rtol=rtol, atol=atol),
        output=OutputBlock(dir=str(cfg.output.dir)),
    )


def from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - set(_BLOCKS)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    missing = {"system", "data", "basis"} - set(raw)
    if missing:
        raise ConfigError(f"missing required sections: {sorted(missing)}")
    blocks = {}
    for name, cls in _BLOCKS.items():
        sec = raw.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        allowed = {f.name for f in dataclasses.fields(cls)}
        extra = set(sec) - allowed
        if extra:
            raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
        blocks[name] = cls(**sec)
    return _validate(ExperimentConfig(**blocks))


def load(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from None
    return from_dict(raw)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, dict):
        return "{ " + ", ".join(f"{k} = {_toml_value(x)}" for k, x in v.items()) + " }"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dumps(cfg: ExperimentConfig) -> str:
    """TOML text that ``load`` turns back into ``cfg`` (unset optional keys are omitted)."""
    lines = []
    for section, body in cfg.to_dict().items():
        lines.append(f"[{section}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in body.items() if v is not None)
        lines.append("")
    return "\n".join(lines)
