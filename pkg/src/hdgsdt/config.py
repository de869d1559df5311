"""Run configuration: flat ``section.key = value`` text, defaults per example,
validation and an exact echo.

A key may be written without its section prefix when the bare name is
unambiguous. Blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from hdgsdt.mesh import DARCY, DARCY_BOUNDARY, STOKES_BOUNDARY
from hdgsdt.problem import (BearDispersion, ConfigurationError, ConstantDispersion, ConstantViscosity,
                            FlowBoundary, Problem, QuarterPowerViscosity, TransportBoundary,
                            VelocityDiagonalDispersion)

OUTPUT_ROOT_ENV = "HDGSDT_OUTPUT_ROOT"
EXAMPLES = ("example1", "example2", "example3", "custom")
SCHEMES = ("BE", "BDF3")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _opt_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _opt_int(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else int(text)


def _snapshots(text: str) -> tuple:
    """Times; the token ``dt`` stands for the first step."""
    out = []
    for tok in text.replace(",", " ").split():
        out.append("dt" if tok.lower() == "dt" else float(tok))
    return tuple(out)


# (section, parser); None values mean "fill from the example defaults"
_SCHEMA = {
    "example": ("run", str),
    "n": ("run", _opt_int),
    "meshes": ("run", _ints),
    "scheme": ("run", str),
    "dt": ("run", _opt_float),
    "T": ("run", _opt_float),
    "snapshots": ("run", _snapshots),
    "output": ("run", str),
    "progress_every": ("run", int),
    "vtk_samples": ("run", _opt_int),
    "k_f": ("discretization", _opt_int),
    "k_c": ("discretization", _opt_int),
    "compatibility": ("discretization", _bool),
    "beta_s": ("discretization", _opt_float),
    "beta_tr": ("discretization", _opt_float),
    "mean_constraint": ("discretization", lambda s: None if s.strip().lower() == "auto" else _bool(s)),
    "conservation_report": ("discretization", _bool),
    "static_condensation": ("discretization", _bool),
    "kappa": ("physics", float),
    "mu": ("physics", float),
    "viscosity": ("physics", str),
    "mu0": ("physics", float),
    "mu1": ("physics", float),
    "alpha": ("physics", _opt_float),
    "porosity": ("physics", _opt_float),
    "delta": ("physics", float),
    "d_m": ("physics", float),
    "d_l": ("physics", float),
    "d_t": ("physics", float),
    "inflow_concentration": ("physics", float),
}


@dataclass
class RunConfig:
    example: str = "example1"
    n: int | None = None
    meshes: tuple = (4, 8, 16)
    scheme: str = "BDF3"
    dt: float | None = None           # None: 0.1 h^k_f / (k_f + 1) for the manufactured examples
    T: float | None = None
    snapshots: tuple | None = None
    output: str = "output"
    progress_every: int = 0
    vtk_samples: int | None = None
    k_f: int | None = None
    k_c: int | None = None
    compatibility: bool = True        # k_c = k_f - 1
    beta_s: float | None = None
    beta_tr: float | None = None
    mean_constraint: bool | None = None
    conservation_report: bool = True
    static_condensation: bool = True
    kappa: float = 1.0
    mu: float = 1.0
    viscosity: str | None = None      # "constant" or "quarter-power"
    mu0: float = 0.9
    mu1: float = 1.3
    alpha: float | None = None
    porosity: float | None = None
    delta: float = 1e-6
    d_m: float = 1e-5
    d_l: float = 1e-5
    d_t: float = 1e-5
    inflow_concentration: float = 0.05
    explicit: set = field(default_factory=set, repr=False, compare=False)

    # -- derived ------------------------------------------------------------

    @property
    def h(self) -> float:
        return 1.0 / self.n

    def output_dir(self) -> Path:
        out = Path(self.output)
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if root and not out.is_absolute():
            out = Path(root) / out
        return out

    def snapshot_times(self) -> tuple:
        return tuple(self.dt if s == "dt" else s for s in (self.snapshots or ()))

    def echo(self) -> str:
        """Effective configuration; parsing it back reproduces this config exactly."""
        lines = ["# effective configuration"]
        for f in fields(self):
            if f.name == "explicit":
                continue
            section, _ = _SCHEMA[f.name]
            lines.append(f"{section}.{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write_echo(self, directory: Path | None = None) -> Path:
        d = directory or self.output_dir()
        d.mkdir(parents=True, exist_ok=True)
        path = d / "effective_config.txt"
        path.write_text(self.echo())
        return path


def _render(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(v_ if isinstance(v_, str) else repr(v_) for v_ in v)
    return str(v)


def parse_text(text: str, source: str = "<config>") -> dict:
    """``{key: raw string}`` from config text, resolving section prefixes."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[_resolve_key(key, f"{source}:{lineno}")] = value
    return out


def _resolve_key(key: str, where: str) -> str:
    if "." in key:
        section, name = key.split(".", 1)
        if name not in _SCHEMA or _SCHEMA[name][0] != section:
            raise ConfigurationError(f"{where}: unknown key {key!r}")
        return name
    if key not in _SCHEMA:
        raise ConfigurationError(f"{where}: unknown key {key!r}")
    return key


def build_config(raw: dict) -> RunConfig:
    """Apply parsers, example defaults and validation to ``{key: string}``."""
    cfg = RunConfig()
    for key, text in raw.items():
        name = _resolve_key(key, "override")
        try:
            setattr(cfg, name, _SCHEMA[name][1](text) if isinstance(text, str) else text)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {name}: {text!r} ({exc})") from None
        cfg.explicit.add(name)
    _apply_defaults(cfg)
    validate(cfg)
    return cfg


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file (optional) and apply ``overrides`` on top."""
    raw = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {p}: {exc}") from exc
        raw.update(parse_text(text, str(p)))
    for k, v in (overrides or {}).items():
        raw[_resolve_key(k, "command line")] = v
    return build_config(raw)


def _apply_defaults(cfg: RunConfig):
    ex = cfg.example
    if ex not in EXAMPLES:
        raise ConfigurationError(f"unknown example {ex!r}; choose from {', '.join(EXAMPLES)}")
    plume = ex == "example3"
    if cfg.k_f is None:
        cfg.k_f = {"example1": 2, "example2": 3, "example3": 3, "custom": 2}[ex]
    if cfg.k_c is None and cfg.compatibility:
        cfg.k_c = cfg.k_f - 1
    if cfg.n is None:
        cfg.n = 80 if plume else 8
    if cfg.T is None:
        cfg.T = 15.0 if plume else 0.1
    if cfg.dt is None:
        cfg.dt = 1e-3 if plume else 0.1 * cfg.h ** cfg.k_f / (cfg.k_f + 1)
    if cfg.snapshots is None:
        cfg.snapshots = ("dt", 3.0, 6.0, 9.0, 12.0, 15.0) if plume else (cfg.T,)
    if cfg.viscosity is None:
        cfg.viscosity = "constant" if ex in ("example1", "custom") else "quarter-power"
    if cfg.alpha is None and plume:
        cfg.alpha = 0.5
    if cfg.porosity is None:
        cfg.porosity = 0.4 if plume else 1.0
    if cfg.mean_constraint is None:
        cfg.mean_constraint = not plume
    if cfg.beta_s is None and cfg.k_f is not None:
        cfg.beta_s = 6.0 * cfg.k_f ** 2
    if cfg.beta_tr is None and cfg.k_c is not None:
        cfg.beta_tr = 6.0 * cfg.k_c ** 2


def validate(cfg: RunConfig):
    if cfg.compatibility and cfg.k_f < 2:
        raise ConfigurationError(
            f"k_f={cfg.k_f} with compatibility (k_c = k_f - 1) requires k_f >= 2 in two dimensions")
    if cfg.compatibility and cfg.k_c != cfg.k_f - 1:
        raise ConfigurationError(f"inconsistent degrees: compatibility needs k_c = k_f - 1, got k_c={cfg.k_c}")
    if cfg.k_c is None or cfg.k_c < 1:
        raise ConfigurationError("k_c must be >= 1")
    if cfg.n < 2 or cfg.n % 2:
        raise ConfigurationError(f"n must be an even integer >= 2 (interface at x2 = 0.5), got {cfg.n}")
    if any(m < 2 or m % 2 for m in cfg.meshes):
        raise ConfigurationError(f"mesh list entries must be even integers >= 2, got {cfg.meshes}")
    if cfg.scheme not in SCHEMES:
        raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {cfg.scheme!r}")
    if not cfg.dt > 0 or cfg.T < 0:
        raise ConfigurationError("need dt > 0 and T >= 0")
    if cfg.viscosity not in ("constant", "quarter-power"):
        raise ConfigurationError(f"viscosity model must be 'constant' or 'quarter-power', got {cfg.viscosity!r}")
    if min(cfg.kappa, cfg.mu, cfg.mu0, cfg.mu1) <= 0:
        raise ConfigurationError("kappa, mu, mu0 and mu1 must be positive")
    if cfg.porosity is not None and not 0 < cfg.porosity <= 1:
        raise ConfigurationError("porosity must lie in (0, 1]")
    if cfg.beta_s <= 0 or cfg.beta_tr <= 0:
        raise ConfigurationError("penalty parameters must be positive")
    if cfg.vtk_samples is not None and cfg.vtk_samples < 1:
        raise ConfigurationError("vtk_samples must be >= 1")


def viscosity_model(cfg: RunConfig):
    if cfg.viscosity == "constant":
        return ConstantViscosity(cfg.mu)
    return QuarterPowerViscosity(cfg.mu0, cfg.mu1)


def build_problem(cfg: RunConfig):
    """``(problem, exact)`` for a config; ``exact`` is None without a manufactured solution."""
    from hdgsdt import verification as ver
    from hdgsdt.examples import plume_problem

    exact = None
    if cfg.example in ("example1", "example2"):
        exact = ver.ExactSolution(cfg.kappa, viscosity_model(cfg))
        disp = (ConstantDispersion(ver.EXAMPLE1_DISPERSION, ver.EXAMPLE1_DISPERSION)
                if cfg.example == "example1" else VelocityDiagonalDispersion())
        prob = ver.manufactured_problem(exact, cfg.k_f, disp, porosity=cfg.porosity)
        if cfg.alpha is not None:
            raise ConfigurationError("alpha is fixed by the manufactured solution; leave it unset")
    elif cfg.example == "example3":
        prob = plume_problem(
            k_f=cfg.k_f, alpha=cfg.alpha, porosity=cfg.porosity, viscosity=viscosity_model(cfg),
            dispersion=BearDispersion(cfg.delta, cfg.d_m, cfg.d_l, cfg.d_t),
            inflow_concentration=cfg.inflow_concentration)
    else:
        zero_v = lambda x, t: np.zeros(np.shape(x))
        prob = Problem(
            k_f=cfg.k_f, viscosity=viscosity_model(cfg),
            permeability=lambda x: np.full(np.shape(x)[:-1], cfg.kappa),
            alpha=1.0 if cfg.alpha is None else cfg.alpha,
            porosity=lambda x, sub: np.where(np.asarray(sub) == DARCY, cfg.porosity, 1.0),
            dispersion=BearDispersion(cfg.delta, cfg.d_m, cfg.d_l, cfg.d_t),
            flow_boundary=FlowBoundary(velocity={k: zero_v for k in STOKES_BOUNDARY},
                                       normal_flux={k: zero_v for k in DARCY_BOUNDARY}),
            transport_boundary=TransportBoundary(inflow_value=0.0),
        )
    fb = prob.flow_boundary
    needs_mean = not (fb.pressure or fb.traction)
    if cfg.mean_constraint != needs_mean:
        raise ConfigurationError(
            f"mean_constraint={cfg.mean_constraint} but this example "
            f"{'has no' if needs_mean else 'has'} pressure or traction boundary data")
    prob = dataclasses.replace(prob, k_c=cfg.k_c, beta_s=cfg.beta_s, beta_tr=cfg.beta_tr,
                               mean_constraint=cfg.mean_constraint)
    return prob, exact


__all__ = ["RunConfig", "build_problem", "viscosity_model", "load_config", "build_config", "parse_text",
           "validate", "OUTPUT_ROOT_ENV", "EXAMPLES"]
