"""INI run configuration with environment overrides and line-anchored diagnostics."""
from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import ENGINES, ControlTask, OptimizerConfig, get_task
from .model import ConfigurationError, DomainError, QubitState, SystemParams

ENV_PREFIX = "DRIVENQUBIT_"


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_float(text: str):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _floats(text: str) -> list[float]:
    return [float(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _engines(text: str) -> tuple[str, ...]:
    text = text.strip().lower()
    if text == "both":
        return ENGINES
    names = tuple(v for v in re.split(r"[,\s]+", text) if v)
    bad = [n for n in names if n not in ENGINES]
    if bad or not names:
        raise ValueError(f"engines must be drawn from {ENGINES}, got {text!r}")
    return names


def _step_mode(text: str) -> str:
    text = text.strip().lower()
    if text not in ("auto", "window", "fixed"):
        raise ValueError(f"expected 'auto', 'window' or 'fixed', got {text!r}")
    return text


def _formats(text: str) -> tuple[str, ...]:
    names = tuple(v for v in re.split(r"[,\s]+", text.strip().lower()) if v)
    bad = [n for n in names if n not in ("csv", "json", "png", "py")]
    if bad:
        raise ValueError(f"unknown output formats {bad}")
    return names


# section -> key -> (parser, default as text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "delta": (float, "1.0"),
        "gamma0": (float, "0.5"),
        "omega_c": (float, "5.0"),
        "beta": (float, "1.0"),
        "fft_size": (int, "80000"),
        "fft_step_mode": (_step_mode, "auto"),
        "fft_energy_step": (_optional_float, "auto"),
    },
    "qme": {
        "dt": (float, "0.001"),
        "lamb_shift_on": (_bool, "true"),
        "keep_diagonal": (_bool, "true"),
    },
    "negf": {
        "dt": (_optional_float, "auto"),
        "corrector_tol": (float, "1e-9"),
        "dump_gf": (_bool, "false"),
    },
    "control": {
        "task": (str, "reset"),
        "engines": (_engines, "qme"),
        "population": (int, "15"),
        "iterations": (int, "10"),
        "bound": (float, "10"),
        "M": (int, "4"),
        "seed": (int, "1"),
        "mutation_factor": (float, "0.8"),
        "crossover_rate": (float, "0.9"),
        "workers": (int, "1"),
        "coeffs": (_floats, ""),
        "kind": (str, ""),
        "control_time": (_optional_float, "auto"),
        "initial": (_floats, ""),
        "target": (_floats, ""),
    },
    "output": {
        "directory": (str, "results"),
        "formats": (_formats, "csv,json,png,py"),
    },
}


def _line_index(text: str) -> dict[tuple[str, str | None], int]:
    """``(section, key) -> line`` with ``key=None`` for section headers."""
    index = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip()
            index.setdefault((section, None), lineno)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", stripped)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = lineno
    return index


@dataclass
class RunConfig:
    values: dict
    source: str = "<defaults>"
    long: bool = False

    def get(self, section: str, key: str):
        return self.values[section][key]

    # -- derived objects ------------------------------------------------
    @property
    def params(self) -> SystemParams:
        m = self.values["model"]
        step = m["fft_energy_step"]
        if m["fft_step_mode"] == "fixed" and step is None:
            raise ConfigurationError("model.fft_step_mode = fixed needs model.fft_energy_step")
        return SystemParams(
            delta=m["delta"], gamma0=m["gamma0"], omega_c=m["omega_c"], beta=m["beta"],
            fft_size=m["fft_size"], fft_energy_step=step if m["fft_step_mode"] == "fixed" else None,
            fft_oversample=1 if m["fft_step_mode"] == "window" else 2,
            qme_dt=self.values["qme"]["dt"], negf_dt=self.values["negf"]["dt"],
        )

    @property
    def optimizer(self) -> OptimizerConfig:
        c = self.values["control"]
        return OptimizerConfig(c["population"], c["iterations"], c["bound"], c["mutation_factor"],
                               c["crossover_rate"], c["seed"], c["M"])

    @property
    def task(self) -> ControlTask:
        c = self.values["control"]
        if not c["kind"]:
            base = get_task(c["task"])
            if c["control_time"] is None and not c["initial"] and not c["target"]:
                return base
            kind, t_c = base.kind, c["control_time"] or base.control_time
            initial = _state(c["initial"], "control.initial") if c["initial"] else base.rho_initial
            target = _state(c["target"], "control.target") if c["target"] else base.rho_target
        else:
            kind = c["kind"]
            if c["control_time"] is None or not c["initial"]:
                raise ConfigurationError("custom task needs control.control_time and control.initial")
            t_c = c["control_time"]
            initial = _state(c["initial"], "control.initial")
            target = _state(c["target"], "control.target") if c["target"] else None
        return ControlTask(kind, initial, target, t_c, name=c["task"])

    @property
    def engines(self) -> tuple[str, ...]:
        return self.values["control"]["engines"]

    @property
    def coeffs(self) -> np.ndarray:
        c = self.values["control"]
        if c["coeffs"]:
            if len(c["coeffs"]) != c["M"]:
                raise ConfigurationError(f"control.coeffs has {len(c['coeffs'])} entries, M = {c['M']}")
            return np.array(c["coeffs"])
        return np.zeros(c["M"])

    @property
    def out_dir(self) -> Path:
        return Path(self.values["output"]["directory"])

    @property
    def formats(self) -> tuple[str, ...]:
        return self.values["output"]["formats"]

    def engine_kwargs(self, engine: str) -> dict:
        if engine == "qme":
            q = self.values["qme"]
            return {"lamb_shift": q["lamb_shift_on"], "keep_diagonal": q["keep_diagonal"]}
        return {"corrector_tol": self.values["negf"]["corrector_tol"]}

    def resolved(self) -> dict:
        """JSON-ready view of every key after defaults and overrides."""
        out = {}
        for section, keys in self.values.items():
            out[section] = {k: (list(v) if isinstance(v, tuple) else v) for k, v in keys.items()}
        return out

    def with_overrides(self, section: str, key: str, value) -> RunConfig:
        values = {s: dict(k) for s, k in self.values.items()}
        values[section][key] = value
        return RunConfig(values, self.source, self.long)


def _state(bloch: list[float], name: str) -> QubitState:
    if len(bloch) != 3:
        raise ConfigurationError(f"{name} needs three Bloch components")
    try:
        return QubitState.from_bloch(*bloch).validate()
    except DomainError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


def load_config(path=None, environ=None) -> RunConfig:
    """Read ``path`` (optional), apply ``DRIVENQUBIT_<SECTION>_<KEY>`` overrides, validate.

    Errors are raised as :class:`ConfigurationError` naming file, line and key.
    """
    environ = os.environ if environ is None else environ
    raw = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    where = {}
    source = "<defaults>"
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"{path}: cannot read config: {exc.strerror}") from None
        lines = _line_index(text)
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str.lower
        try:
            parser.read_string(text, source=source)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        for section in parser.sections():
            line = lines.get((section, None), 0)
            if section not in SCHEMA:
                raise ConfigurationError(f"{path}:{line}: unknown section [{section}]")
            known = {k.lower(): k for k in SCHEMA[section]}
            for key, value in parser.items(section):
                line = lines.get((section, key), 0)
                if key not in known:
                    raise ConfigurationError(f"{path}:{line}: unknown key '{key}' in [{section}]")
                raw[section][known[key]] = value
                where[(section, known[key])] = f"{path}:{line}"
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        known = {k.lower(): k for k in SCHEMA.get(section, {})}
        if section not in SCHEMA or key not in known:
            raise ConfigurationError(f"environment {name}: unknown key '{section}.{key}'")
        raw[section][known[key]] = value
        where[(section, known[key])] = f"environment {name}"

    values = {}
    for section, keys in SCHEMA.items():
        values[section] = {}
        for key, (parse, _) in keys.items():
            try:
                values[section][key] = parse(raw[section][key])
            except (TypeError, ValueError) as exc:
                loc = where.get((section, key), source)
                raise ConfigurationError(f"{loc}: {section}.{key}: {exc}") from None
    cfg = RunConfig(values, source)
    validate(cfg, where)
    return cfg


# field names used in error messages of derived objects -> (section, key)
_BLAME = {
    "qme_dt": ("qme", "dt"), "negf_dt": ("negf", "dt"), "fft_energy_step": ("model", "fft_energy_step"),
    "delta": ("model", "delta"), "gamma0": ("model", "gamma0"), "omega_c": ("model", "omega_c"),
    "beta": ("model", "beta"), "fft_size": ("model", "fft_size"), "fft_step_mode": ("model", "fft_step_mode"),
    "population_size": ("control", "population"), "max_iterations": ("control", "iterations"),
    "mutation_factor": ("control", "mutation_factor"), "crossover_rate": ("control", "crossover_rate"),
    "bound": ("control", "bound"), "num_modes": ("control", "M"), "control.coeffs": ("control", "coeffs"),
    "control_time": ("control", "control_time"), "control.initial": ("control", "initial"),
    "control.target": ("control", "target"), "task": ("control", "task"), "kind": ("control", "kind"),
}


def validate(cfg: RunConfig, where: dict | None = None) -> None:
    """Build every derived object once so bad values fail before any run starts."""
    where = where or {}
    try:
        cfg.params, cfg.optimizer, cfg.task, cfg.coeffs
        if cfg.values["control"]["workers"] < 1:
            raise ConfigurationError("control.workers must be >= 1")
    except ConfigurationError as exc:
        section, key = _blame(str(exc))
        loc = where.get((section, key), cfg.source)
        raise ConfigurationError(f"{loc}: {section}.{key}: {exc}") from None


def _blame(message: str) -> tuple[str, str]:
    if "workers" in message:
        return "control", "workers"
    for name in sorted(_BLAME, key=len, reverse=True):
        if name in message:
            return _BLAME[name]
    return "control", "task"


def example_config() -> str:
    """Commented INI listing every key with its default."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        lines += [f"{key} = {default}" for key, (_, default) in keys.items()]
        lines.append("")
    return "\n".join(lines)

