"""Flat key-value experiment configs with dotted section names.

The format is one ``key = value`` pair per line, ``#`` comments, keys like
``ar1.gamma``.  Lists are comma separated; model families use a call-like
value such as ``geometric(0.5, 512)`` or ``exponential(1.0)``.  Every field
is validated against the target module's invariants before any computation,
and the fully resolved config (defaults included) is echoed into the run
report so a run is reproducible from its artifacts alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from .ar1 import Ar1Params
from .errors import ConfigError
from .fracvol import (
    RhoProcess,
    SdeParams,
    VolatilityKernel,
    linear_drift,
    saturating_drift,
)
from .logvol import LogvolParams, fractional_ma, geometric_ma

EXPERIMENTS = ("ar1-bound", "ar1-couple", "logvol-sim", "logvol-couple", "sde-sim")

_CALL_RE = re.compile(r"^([a-z_]+)\(([^)]*)\)$")


def parse_config_text(text: str) -> dict[str, str]:
    """Raw key -> value strings; later duplicates override earlier ones."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not re.fullmatch(r"[a-z0-9_]+(\.[a-z0-9_]+)*", key):
            raise ConfigError(f"line {lineno}: malformed key {key!r}")
        out[key] = value.strip()
    return out


class _Fields:
    """Typed accessor over raw key/value strings that records what it reads."""

    def __init__(self, raw: dict[str, str]):
        self.raw = dict(raw)
        self.resolved: dict[str, Any] = {}
        self.read: set[str] = set()

    def _get(self, key: str, default):
        self.read.add(key)
        if key in self.raw:
            return self.raw[key]
        if default is _REQUIRED:
            raise ConfigError(f"{key}: required field is missing")
        return default

    def str_(self, key: str, default=None) -> str:
        val = self._get(key, default)
        self.resolved[key] = val
        return val

    def int_(self, key: str, default=None) -> int:
        val = self._get(key, default)
        try:
            out = int(str(val))
        except ValueError:
            raise ConfigError(f"{key}: expected integer, got {val!r}") from None
        self.resolved[key] = out
        return out

    def float_(self, key: str, default=None) -> float:
        val = self._get(key, default)
        try:
            out = float(str(val))
        except ValueError:
            raise ConfigError(f"{key}: expected number, got {val!r}") from None
        self.resolved[key] = out
        return out

    def float_list(self, key: str, default=None) -> tuple[float, ...]:
        val = self._get(key, default)
        if isinstance(val, tuple):
            out = val
        else:
            try:
                out = tuple(float(v) for v in str(val).split(",") if v.strip())
            except ValueError:
                raise ConfigError(f"{key}: expected comma-separated numbers, got {val!r}") from None
        if not out:
            raise ConfigError(f"{key}: list must be nonempty")
        self.resolved[key] = out
        return out

    def int_list(self, key: str, default=None) -> tuple[int, ...]:
        vals = self.float_list(key, default)
        out = tuple(int(v) for v in vals)
        if any(float(i) != v for i, v in zip(out, vals)):
            raise ConfigError(f"{key}: expected integers")
        self.resolved[key] = out
        return out

    def unused_keys(self) -> list[str]:
        return sorted(k for k in self.raw if k not in self.read)


_REQUIRED = object()


def _parse_call(key: str, text: str, families: dict[str, int]) -> tuple[str, list[float]]:
    m = _CALL_RE.match(text.strip())
    if not m:
        raise ConfigError(f"{key}: expected one of {sorted(families)} with arguments, got {text!r}")
    name, argtext = m.group(1), m.group(2)
    if name not in families:
        raise ConfigError(f"{key}: unknown family {name!r}; expected one of {sorted(families)}")
    try:
        args = [float(a) for a in argtext.split(",")] if argtext.strip() else []
    except ValueError:
        raise ConfigError(f"{key}: malformed arguments in {text!r}") from None
    if len(args) not in (families[name], families[name] - 1):
        raise ConfigError(f"{key}: {name} takes up to {families[name]} numeric arguments")
    return name, args


def _ma_coeffs(fields: _Fields) -> tuple[float, ...]:
    text = fields.str_("logvol.ma", "geometric(0.5, 512)")
    if "(" in text:
        name, args = _parse_call("logvol.ma", text, {"geometric": 2, "fractional": 2})
        lag = int(args[1]) if len(args) > 1 else 512
        if name == "geometric":
            return geometric_ma(args[0], lag)
        return fractional_ma(args[0], lag)
    try:
        coeffs = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"logvol.ma: malformed coefficient list {text!r}") from None
    if not coeffs:
        raise ConfigError("logvol.ma: coefficient list must be nonempty")
    return coeffs


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int
    replicas: int
    output_dir: str
    model: Any
    options: dict[str, Any]
    resolved: dict[str, Any] = field(repr=False, default_factory=dict)


def _wrap_invariant(section: str, exc: Exception) -> ConfigError:
    return ConfigError(f"{section}: {exc}")


def load_config_text(text: str) -> ExperimentConfig:
    raw = parse_config_text(text)
    fields = _Fields(raw)
    experiment = fields.str_("experiment", _REQUIRED)
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown kind {experiment!r}; expected one of {EXPERIMENTS}")
    seed = fields.int_("seed", 12345)
    output_dir = fields.str_("output.dir", f"runs/{experiment}")

    options: dict[str, Any] = {}
    replicas = 1
    if experiment == "ar1-bound":
        gamma = fields.float_("ar1.gamma", 0.5)
        beta = fields.float_("ar1.beta", 0.4 * (1.0 - gamma**2))
        x0 = fields.float_("ar1.x0", 0.0)
        eta = fields.float_("ar1.eta", 0.1)
        try:
            model = Ar1Params(gamma=gamma, beta=beta, x0=x0, eta=eta)
        except ValueError as exc:
            raise _wrap_invariant("ar1", exc) from None
        options["t_grid"] = fields.int_list("ar1.t_grid", (10, 100, 1000, 10000))
        if min(options["t_grid"]) < 2:
            raise ConfigError("ar1.t_grid: horizons must be at least 2")
    elif experiment == "ar1-couple":
        gamma = fields.float_("ar1.gamma", 0.5)
        beta = fields.float_("ar1.beta", 0.4 * (1.0 - gamma**2))
        x0 = fields.float_("ar1.x0", 1.0)
        try:
            model = Ar1Params(gamma=gamma, beta=beta, x0=x0)
        except ValueError as exc:
            raise _wrap_invariant("ar1", exc) from None
        options["n"] = fields.int_("couple.n", 3)
        options["s"] = fields.int_("couple.s", 50)
        options["t"] = fields.int_("couple.t", 100)
        if not 1 <= options["s"] <= options["t"]:
            raise ConfigError("couple.s: need 1 <= s <= t")
        if options["n"] < 0:
            raise ConfigError("couple.n: ladder index must be nonnegative")
        replicas = fields.int_("replicas", 10000)
    elif experiment in ("logvol-sim", "logvol-couple"):
        gamma = fields.float_("logvol.gamma", 0.5)
        rho = fields.float_("logvol.rho", 0.3)
        x0 = fields.float_("logvol.x0", 0.0)
        coeffs = _ma_coeffs(fields)
        try:
            model = LogvolParams(gamma=gamma, rho=rho, ma_coeffs=coeffs, x0=x0)
        except ValueError as exc:
            raise _wrap_invariant("logvol", exc) from None
        if experiment == "logvol-sim":
            options["checkpoints"] = fields.int_list("logvol.checkpoints", (10, 100))
            if min(options["checkpoints"]) < 1:
                raise ConfigError("logvol.checkpoints: horizons must be at least 1")
        else:
            options["m_max"] = fields.int_("logvol.m_max", 4)
            options["target_block"] = fields.int_("logvol.target_block", 3)
            options["step_cap"] = fields.int_("logvol.step_cap", 20000)
            options["x0_pair"] = fields.float_list("logvol.x0_pair", (1.0, -1.0))
            if options["m_max"] < options["target_block"]:
                raise ConfigError("logvol.m_max: must cover the target block")
            if len(options["x0_pair"]) != 2:
                raise ConfigError("logvol.x0_pair: need exactly two starts")
        replicas = fields.int_("replicas", 10000)
    else:  # sde-sim
        drift_text = fields.str_("sde.drift", "linear(1.0)")
        name, args = _parse_call("sde.drift", drift_text, {"linear": 1, "saturating": 2})
        try:
            drift = linear_drift(*args) if name == "linear" else saturating_drift(*args)
        except ValueError as exc:
            raise _wrap_invariant("sde.drift", exc) from None
        kern_text = fields.str_("sde.kernel", "exponential(1.0)")
        kname, kargs = _parse_call("sde.kernel", kern_text, {"exponential": 1, "fractional": 1})
        try:
            if kname == "exponential":
                kernel = VolatilityKernel(kind="exponential", lam=kargs[0] if kargs else 1.0)
            else:
                kernel = VolatilityKernel(kind="fractional", h=kargs[0] if kargs else 0.1)
        except ValueError as exc:
            raise _wrap_invariant("sde.kernel", exc) from None
        rho: float | RhoProcess = fields.float_("sde.rho", 0.3)
        try:
            model = SdeParams(
                zeta=drift,
                kernel=kernel,
                rho=rho,
                dt=fields.float_("sde.dt", 1.0 / 256.0),
                horizon=fields.float_("sde.horizon", 20.0),
                burn_in=fields.float_("sde.burn_in", 10.0),
            )
        except ValueError as exc:
            raise _wrap_invariant("sde", exc) from None
        options["l0"] = fields.float_list("sde.l0", (-2.0, 2.0))
        options["checkpoints"] = fields.float_list("sde.checkpoints", (5.0, 10.0, 20.0))
        options["increment_lags"] = fields.float_list("sde.increment_lags", (0.1, 0.01))
        options["increment_base"] = fields.float_("sde.increment_base", 10.0)
        options["tv_threshold"] = fields.float_("sde.tv_threshold", 0.1)
        for t in options["checkpoints"]:
            if not 0.0 <= t <= model.horizon:
                raise ConfigError(f"sde.checkpoints: {t} outside [0, horizon]")
        reach = options["increment_base"] + max(options["increment_lags"])
        if not 0.0 <= options["increment_base"] <= model.horizon or reach > model.horizon:
            raise ConfigError("sde.increment_base: increment window leaves [0, horizon]")
        replicas = fields.int_("replicas", 10000)

    if experiment != "ar1-bound":
        if replicas < 100:
            raise ConfigError("replicas: Monte Carlo experiments need at least 100 replicas")

    unused = fields.unused_keys()
    if unused:
        raise ConfigError(f"{unused[0]}: unknown field for experiment {experiment!r}")

    resolved = dict(fields.resolved)
    resolved["experiment"] = experiment
    return ExperimentConfig(
        experiment=experiment,
        seed=seed,
        replicas=replicas,
        output_dir=output_dir,
        model=model,
        options=options,
        resolved=resolved,
    )


def load_config(path: str) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config_text(fh.read())
