"""Run configuration: sectioned INI (or JSON) with defaults, overrides and validation."""

from __future__ import annotations

import configparser
import copy
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError
from .mesh import DomainSpec, Region

# every key with its default, as the strings an INI file would hold
DEFAULTS: dict[str, dict[str, str]] = {
    "domain": {"kind": "interval", "extents": "1.0", "resolution": "200"},
    "regions": {
        "omega_center": "auto",
        "omega_radius": "0.2",
        "ball_center": "auto",
        "ball_radius": "0.2",
        "omega0_center": "auto",
        "omega0_radius": "0.05",
    },
    "time": {"T": "1.0"},
    "constants": {
        "mode": "manual",
        "b": "2.0",
        "eta": "2.0",
        "C3": "auto",
        "max_stages": "6",
        "target_mode": "squared",
    },
    "eigen": {"count": "all", "method": "dense", "write_vectors": "false"},
    "integrator": {"kind": "spectral", "cn_substeps": "64"},
    "control": {"eps": "0.01", "tau": "auto", "cg_tol": "1e-12", "cg_max_iter": "5000", "max_tuning_rounds": "80"},
    "simulate": {"samples": "21", "initial": "random"},
    "analysis": {
        "T": "0.5",
        "samples": "50",
        "beta_grid": "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9",
        "profile": "decaying",
        "gaussian_h": "0.1",
        "gaussian_times": "20",
    },
    "run": {"seed": "0", "out": "out"},
}


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    raw: dict  # resolved section -> key -> string
    domain: DomainSpec
    omega: Region
    ball: Region
    omega0: Region
    T: float
    constants_mode: str
    b: float
    eta: float
    C3: float | None  # None means fit from a pilot stage
    max_stages: int
    target_mode: str
    eigen_count: int | None
    eigen_method: str
    write_vectors: bool
    integrator: str
    cn_substeps: int
    eps: float
    tau: float | None
    cg_tol: float
    cg_max_iter: int
    max_tuning_rounds: int
    simulate_samples: int
    initial: str
    analysis_T: float
    samples: int
    beta_grid: tuple[float, ...]
    profile: str
    gaussian_h: float
    gaussian_times: int
    seed: int
    out: Path

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        cp.read_dict(self.raw)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _read(path: Path) -> dict:
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: JSON parse error: {exc}") from None
        if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
            raise ConfigurationError(f"{path}: JSON config must map sections to key/value objects")
        return {s: {k: _as_text(v) for k, v in kv.items()} for s, kv in data.items()}
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: parse error: {exc}") from None
    return {s: dict(cp[s]) for s in cp.sections()}


def _as_text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v)


def _merge(raw: dict, extra: dict, origin: str) -> None:
    for section, kv in extra.items():
        if section not in raw:
            raise ConfigurationError(f"{origin}: unknown section [{section}]")
        for key, value in kv.items():
            if key not in raw[section]:
                raise ConfigurationError(f"{origin}: unknown key {section}.{key}")
            raw[section][key] = value


def parse_overrides(items) -> dict:
    out: dict[str, dict[str, str]] = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not KEY=VALUE")
        key, value = item.split("=", 1)
        if "." not in key:
            raise ConfigurationError(f"override key {key!r} must be section.key")
        section, name = key.strip().split(".", 1)
        out.setdefault(section, {})[name] = value.strip()
    return out


def parse_config(path=None, overrides=(), seed: int | None = None, out=None) -> RunConfig:
    """Load a config file (INI or ``.json``), apply ``section.key=value`` overrides, validate."""
    raw = copy.deepcopy(DEFAULTS)
    if path is not None:
        _merge(raw, _read(Path(path)), str(path))
    _merge(raw, parse_overrides(overrides), "override")
    if seed is not None:
        raw["run"]["seed"] = str(int(seed))
    if out is not None:
        raw["run"]["out"] = str(out)
    return _build(raw)


class _Field:
    """Typed accessor that reports the offending key on failure."""

    def __init__(self, raw):
        self.raw = raw

    def get(self, section, key, conv):
        text = self.raw[section][key]
        try:
            return conv(text)
        except (TypeError, ValueError):
            raise ConfigurationError(f"{section}.{key}: cannot parse {text!r}") from None


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(text)


def _ball(center, radius, dim, name) -> Region:
    if len(center) != dim:
        raise ConfigurationError(f"{name} center needs {dim} coordinate(s), got {len(center)}")
    if not radius > 0:
        raise ConfigurationError(f"{name} radius must be positive")
    return Region.ball(center, radius, label=name)


def _build(raw: dict) -> RunConfig:
    f = _Field(raw)
    kind = raw["domain"]["kind"]
    extents = f.get("domain", "extents", _floats)
    resolution = f.get("domain", "resolution", lambda t: tuple(int(v) for v in t.split(",")))
    domain = DomainSpec(kind, extents, resolution)
    dim = domain.dim

    def region(prefix):
        if raw["regions"][f"{prefix}_center"].strip().lower() == "auto":
            c = tuple(0.5 * e for e in extents)
            raw["regions"][f"{prefix}_center"] = ",".join(repr(v) for v in c)
        else:
            c = f.get("regions", f"{prefix}_center", _floats)
        r = f.get("regions", f"{prefix}_radius", float)
        return _ball(c, r, dim, prefix)

    omega, ball, omega0 = region("omega"), region("ball"), region("omega0")
    for name, reg in (("omega", omega), ("omega0", omega0)):
        lo = [c - reg.radius for c in reg.center]
        hi = [c + reg.radius for c in reg.center]
        if any(a <= 0 or b >= e for a, b, e in zip(lo, hi, extents)):
            raise ConfigurationError(f"{name} must lie strictly inside the domain")

    T = f.get("time", "T", float)
    if not T > 0:
        raise ConfigurationError("T must be positive")
    mode = raw["constants"]["mode"]
    if mode not in ("manual", "fixed_point"):
        raise ConfigurationError(f"constants.mode must be manual or fixed_point, got {mode!r}")
    b = f.get("constants", "b", float)
    eta = f.get("constants", "eta", float)
    if not b > 1:
        raise ConfigurationError("b must exceed 1")
    if not eta > 1:
        raise ConfigurationError("eta must exceed 1")
    c3_text = raw["constants"]["C3"].strip().lower()
    C3 = None if c3_text == "auto" else f.get("constants", "C3", float)
    if C3 is not None and not C3 > 0:
        raise ConfigurationError("C3 must be positive")
    max_stages = f.get("constants", "max_stages", int)
    if max_stages < 1:
        raise ConfigurationError("max_stages must be at least 1")
    target_mode = raw["constants"]["target_mode"]
    if target_mode not in ("squared", "literal"):
        raise ConfigurationError("constants.target_mode must be squared or literal")

    count_text = raw["eigen"]["count"].strip().lower()
    count = None if count_text == "all" else f.get("eigen", "count", int)
    if count is not None and count < 1:
        raise ConfigurationError("eigen.count must be positive")
    method = raw["eigen"]["method"]
    if method not in ("dense", "sparse"):
        raise ConfigurationError("eigen.method must be dense or sparse")
    integrator = raw["integrator"]["kind"]
    if integrator not in ("spectral", "cn"):
        raise ConfigurationError("integrator.kind must be spectral or cn")
    substeps = f.get("integrator", "cn_substeps", int)
    if substeps < 1:
        raise ConfigurationError("integrator.cn_substeps must be at least 1")

    eps = f.get("control", "eps", float)
    if not 0 < eps < 1:
        raise ConfigurationError("control.eps must lie in (0, 1)")
    tau_text = raw["control"]["tau"].strip().lower()
    tau = None if tau_text == "auto" else f.get("control", "tau", float)
    if tau is not None and not 0 < tau < T:
        raise ConfigurationError("control.tau must lie in (0, T)")
    cg_tol = f.get("control", "cg_tol", float)
    cg_max_iter = f.get("control", "cg_max_iter", int)
    rounds = f.get("control", "max_tuning_rounds", int)
    if not cg_tol > 0 or cg_max_iter < 1 or rounds < 1:
        raise ConfigurationError("control tolerances must be positive")

    sim_samples = f.get("simulate", "samples", int)
    initial = raw["simulate"]["initial"].strip()
    if initial != "random" and not (initial.startswith("mode:") and initial[5:].isdigit() and int(initial[5:]) >= 1):
        raise ConfigurationError("simulate.initial must be random or mode:<i>")

    aT = f.get("analysis", "T", float)
    samples = f.get("analysis", "samples", int)
    betas = f.get("analysis", "beta_grid", _floats)
    if not aT > 0:
        raise ConfigurationError("analysis.T must be positive")
    if samples < 10:
        raise ConfigurationError("analysis.samples must be at least 10")
    if not betas or any(not 0 < v < 1 for v in betas):
        raise ConfigurationError("analysis.beta_grid values must lie in (0, 1)")
    profile = raw["analysis"]["profile"]
    if profile not in ("decaying", "flat"):
        raise ConfigurationError("analysis.profile must be decaying or flat")
    gh = f.get("analysis", "gaussian_h", float)
    gtimes = f.get("analysis", "gaussian_times", int)
    if not gh > 0 or gtimes < 2:
        raise ConfigurationError("analysis.gaussian_h must be positive and gaussian_times >= 2")

    seed = f.get("run", "seed", int)
    return RunConfig(
        raw=raw, domain=domain, omega=omega, ball=ball, omega0=omega0, T=T,
        constants_mode=mode, b=b, eta=eta, C3=C3, max_stages=max_stages, target_mode=target_mode,
        eigen_count=count, eigen_method=method, write_vectors=f.get("eigen", "write_vectors", _bool),
        integrator=integrator, cn_substeps=substeps,
        eps=eps, tau=tau, cg_tol=cg_tol, cg_max_iter=cg_max_iter, max_tuning_rounds=rounds,
        simulate_samples=sim_samples, initial=initial,
        analysis_T=aT, samples=samples, beta_grid=betas, profile=profile,
        gaussian_h=gh, gaussian_times=gtimes,
        seed=seed, out=Path(raw["run"]["out"]),
    )
