"""Strict JSON run configuration.

Every section is a frozen dataclass. Unknown keys anywhere raise
ConfigurationError; missing keys take the documented defaults, and the
fully expanded config is what gets hashed and written to the manifest.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .lattice import LatticeSpec
from .smearing import KernelParams
from .dynamics import CollapseParams


@dataclass(frozen=True)
class LatticeConfig:
    L: int = 60
    T: int = 1200
    dx: float = 0.05
    dt: float = 1e-6
    x1_origin: float = -1.475

    def spec(self) -> LatticeSpec:
        return LatticeSpec(self.L, self.T, self.dx, self.dt, self.x1_origin)


@dataclass(frozen=True)
class KernelConfig:
    k: float = 1.0
    mode: str = "static"
    T00: float = 1.0
    idealization: str = "plateau"

    def params(self) -> KernelParams:
        return KernelParams(k=self.k, mode=self.mode, T_static=((self.T00, 0.0), (0.0, 0.0)))


@dataclass(frozen=True)
class CollapseConfig:
    lam: float = 0.5
    epsilon: float = 0.01
    integrator: str = "nonlinear"
    scheme: str = "exponential"

    def params(self, integrator: str | None = None) -> CollapseParams:
        return CollapseParams(self.lam, self.epsilon, integrator or self.integrator, self.scheme)


@dataclass(frozen=True)
class BranchConfig:
    c: tuple[float, float]
    regions: tuple[tuple[float, float], ...]
    J: float

    @property
    def amplitude(self) -> complex:
        return complex(self.c[0], self.c[1])


@dataclass(frozen=True)
class ExperimentConfig:
    branches: tuple[BranchConfig, ...] = ()
    paths: int = 200
    foliation: str = "time"
    sigma_f: object = "tau"
    interaction_levels: int = 0
    beable_window: tuple[float, float] = (1.0e-3, 1.2e-3)


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json", "svg")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 1
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    kernel: KernelConfig = field(default_factory=KernelConfig)
    collapse: CollapseConfig = field(default_factory=CollapseConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)

    def with_overrides(self, seed=None, paths=None, integrator=None, foliation=None, out=None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = dataclasses.replace(cfg, seed=int(seed))
        if paths is not None:
            cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, paths=int(paths)))
        if integrator is not None:
            cfg = dataclasses.replace(cfg, collapse=dataclasses.replace(cfg.collapse, integrator=integrator))
        if foliation is not None:
            cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, foliation=foliation))
        if out is not None:
            cfg = dataclasses.replace(cfg, output=dataclasses.replace(cfg.output, directory=str(out)))
        return validate(cfg)


# -- parsing ------------------------------------------------------------------

def _take(section: str, raw: dict, cls):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"section {section!r} must be a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {section!r}: {', '.join(unknown)}")
    return dict(raw)


def _num(section, key, v, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"{section}.{key} must be a number, got {v!r}")
    if kind is int:
        if float(v) != int(v):
            raise ConfigurationError(f"{section}.{key} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def _numbers(section, raw: dict, cls, ints=()):
    out = {}
    for f in dataclasses.fields(cls):
        if f.name in raw:
            out[f.name] = _num(section, f.name, raw[f.name], int if f.name in ints else float)
    return out


def _branch(k: int, raw) -> BranchConfig:
    sec = f"experiment.branches[{k}]"
    d = _take(sec, raw, BranchConfig)
    missing = {"c", "regions", "J"} - set(d)
    if missing:
        raise ConfigurationError(f"{sec} is missing {', '.join(sorted(missing))}")
    c = d["c"]
    if isinstance(c, list):
        if len(c) != 2:
            raise ConfigurationError(f"{sec}.c must be a number or [re, im]")
        c = (_num(sec, "c", c[0]), _num(sec, "c", c[1]))
    else:
        c = (_num(sec, "c", c), 0.0)
    regions = d["regions"]
    if not isinstance(regions, list) or not regions:
        raise ConfigurationError(f"{sec}.regions must be a non-empty list of [lower, upper]")
    regs = []
    for r in regions:
        if not isinstance(r, list) or len(r) != 2:
            raise ConfigurationError(f"{sec}.regions entries must be [lower, upper]")
        lo, hi = _num(sec, "regions", r[0]), _num(sec, "regions", r[1])
        if not lo < hi:
            raise ConfigurationError(f"{sec}: region [{lo}, {hi}] is empty")
        regs.append((lo, hi))
    return BranchConfig(c, tuple(regs), _num(sec, "J", d["J"]))


def from_dict(raw: dict) -> RunConfig:
    top = _take("config", raw, RunConfig)
    seed = top.get("seed", 1)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigurationError(f"seed must be an integer in [0, 2^64), got {seed!r}")

    lat = _take("lattice", top.get("lattice", {}), LatticeConfig)
    lattice = LatticeConfig(**_numbers("lattice", lat, LatticeConfig, ints=("L", "T")))

    ker = _take("kernel", top.get("kernel", {}), KernelConfig)
    kernel = KernelConfig(**_numbers("kernel", {k: v for k, v in ker.items() if k in ("k", "T00")}, KernelConfig),
                          **{k: str(v) for k, v in ker.items() if k in ("mode", "idealization")})

    col = _take("collapse", top.get("collapse", {}), CollapseConfig)
    collapse = CollapseConfig(**_numbers("collapse", {k: v for k, v in col.items() if k in ("lam", "epsilon")},
                                         CollapseConfig),
                              **{k: str(v) for k, v in col.items() if k in ("integrator", "scheme")})

    exp = _take("experiment", top.get("experiment", {}), ExperimentConfig)
    kw = {}
    if "branches" in exp:
        if not isinstance(exp["branches"], list):
            raise ConfigurationError("experiment.branches must be a list")
        kw["branches"] = tuple(_branch(k, b) for k, b in enumerate(exp["branches"]))
    for key in ("paths", "interaction_levels"):
        if key in exp:
            kw[key] = _num("experiment", key, exp[key], int)
    if "foliation" in exp:
        kw["foliation"] = str(exp["foliation"])
    if "sigma_f" in exp:
        s = exp["sigma_f"]
        kw["sigma_f"] = s if isinstance(s, str) else _num("experiment", "sigma_f", s, int)
    if "beable_window" in exp:
        w = exp["beable_window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ConfigurationError("experiment.beable_window must be [x0_start, x0_end]")
        kw["beable_window"] = (_num("experiment", "beable_window", w[0]), _num("experiment", "beable_window", w[1]))
    experiment = ExperimentConfig(**kw)

    out = _take("output", top.get("output", {}), OutputConfig)
    okw = {}
    if "directory" in out:
        okw["directory"] = str(out["directory"])
    if "formats" in out:
        if not isinstance(out["formats"], list):
            raise ConfigurationError("output.formats must be a list")
        okw["formats"] = tuple(str(f) for f in out["formats"])
    output = OutputConfig(**okw)

    return validate(RunConfig(seed, lattice, kernel, collapse, experiment, output))


def validate(cfg: RunConfig) -> RunConfig:
    """Cross-field checks; constructs the library objects to reuse their guards."""
    spec = cfg.lattice.spec()
    cfg.kernel.params()
    cfg.collapse.params()
    if cfg.kernel.idealization not in ("plateau", "exact"):
        raise ConfigurationError(f"unknown idealization {cfg.kernel.idealization!r}")
    e = cfg.experiment
    if e.paths < 1:
        raise ConfigurationError("experiment.paths must be at least 1")
    if e.foliation not in ("time", "random"):
        raise ConfigurationError(f"experiment.foliation must be 'time' or 'random', got {e.foliation!r}")
    if isinstance(e.sigma_f, str):
        if e.sigma_f not in ("final", "tau"):
            raise ConfigurationError("experiment.sigma_f must be 'final', 'tau' or a time level")
    elif not 0 < e.sigma_f <= spec.T:
        raise ConfigurationError(f"experiment.sigma_f level {e.sigma_f} outside 1..{spec.T}")
    if not 0 <= e.interaction_levels < spec.T:
        raise ConfigurationError("experiment.interaction_levels must lie in [0, T)")
    bad = set(cfg.output.formats) - {"csv", "json", "svg"}
    if bad:
        raise ConfigurationError(f"unknown output format(s): {', '.join(sorted(bad))}")
    for b in e.branches:
        for lo, hi in b.regions:
            if hi <= spec.x1(0) or lo > spec.x1(spec.L - 1):
                raise ConfigurationError(f"region [{lo}, {hi}] lies outside the lattice")
    if e.branches and sum(abs(b.amplitude) ** 2 for b in e.branches) == 0:
        raise ConfigurationError("all branch amplitudes are zero")
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return default_config()
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config {path} is not valid JSON: {exc}") from exc
    return from_dict(raw)


def to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["experiment"]["branches"] = [
        {"c": list(b["c"]), "regions": [list(r) for r in b["regions"]], "J": b["J"]}
        for b in d["experiment"]["branches"]]
    d["experiment"]["beable_window"] = list(d["experiment"]["beable_window"])
    d["output"]["formats"] = list(d["output"]["formats"])
    return d


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(cfg: RunConfig) -> str:
    """Hash of everything that affects results (the output directory does not)."""
    d = to_dict(cfg)
    d.pop("output")
    return hashlib.sha256(canonical_json(d).encode()).hexdigest()[:12]


def two_lump_branches(J: float = 10.0, c1: complex = 1 / np.sqrt(2), c2: complex | None = None):
    if c2 is None:
        c2 = np.sqrt(max(0.0, 1.0 - abs(c1) ** 2))
    return (BranchConfig((float(np.real(c1)), float(np.imag(c1))), ((-1.0, 0.0),), float(J)),
            BranchConfig((float(np.real(c2)), float(np.imag(c2))), ((0.0, 1.0),), float(J)))


def default_config() -> RunConfig:
    """The two-lump reference experiment: lam = 0.5, J^2 = 100, equal amplitudes."""
    return validate(RunConfig(experiment=ExperimentConfig(branches=two_lump_branches())))
