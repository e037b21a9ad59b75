"""INI configuration with a fixed schema.

Sections follow the package modules. Every key has a type and a default;
unknown sections or keys are rejected with the line they appear on. The
resolved configuration renders back to canonical INI text, whose SHA-256
prefix identifies a run in every artifact it writes.
"""

from __future__ import annotations

import configparser
import hashlib
import re
from dataclasses import dataclass
from typing import Any, Callable

from .market import MarketParams, MonitoringSchedule, SpatialGrid
from .oracles import McConfig
from .pipeline import RunSpec

OUTPUT_ROOT_ENV = "QLOOKBACK_OUTPUT_ROOT"

BENCH_METHODS = ("fd", "expm-m1", "expm-m2", "varqite-m1", "varqite-m2", "mc")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(message if line is None else f"line {line}: {message}")


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none", "exact") else int(text)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text

    return parse


def _methods(text: str) -> tuple[str, ...]:
    items = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in items if t not in BENCH_METHODS]
    if bad or not items:
        raise ValueError(f"methods must be drawn from {', '.join(BENCH_METHODS)}, got {text!r}")
    return items


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "exact"
    if isinstance(value, tuple):
        return ", ".join(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "market": {"r": (float, 0.05), "sigma": (float, 0.2), "T": (int, 2)},
    "schedule": {"N": (_optional_int, None)},
    "grid": {"qubits": (int, 4), "z_max": (float, 2.5)},
    "operators": {"h": (float, 1e-3)},
    "pipeline": {
        "method": (_choice("M1", "M2"), "M2"),
        "engine": (_choice("expm", "varqite"), "expm"),
        "p": (int, 100),
        "dt": (float, 0.01),
        "shots": (_optional_int, None),
        "seed": (int, 0),
        "ridge": (float, 1e-8),
        "mode": (_choice("pure", "oracle-assisted"), "pure"),
        "jump_window": (_choice("step", "expm"), "step"),
        "fit_restarts": (int, 20),
    },
    "mc": {
        "paths": (int, 1_000_000),
        "seed": (int, 20240601),
        "steps_per_interval": (int, 1),
        "antithetic": (_bool, False),
        "workers": (int, 1),
    },
    "fd": {"dt": (float, 1e-3), "scheme": (_choice("implicit", "explicit", "cn"), "cn")},
    "benchmark": {
        "methods": (_methods, ("fd", "expm-m1", "expm-m2", "mc")),
        "z_report_max": (float, 2.0),
    },
    "output": {"dir": (str, "runs"), "verbosity": (_choice("quiet", "info", "debug"), "info")},
}


def _locate(text: str) -> dict[tuple[str, str | None], int]:
    """Line numbers of section headers and keys, as written."""
    where: dict[tuple[str, str | None], int] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            section = m.group(1).strip()
            where.setdefault((section, None), lineno)
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", stripped)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip()), lineno)
    return where


@dataclass(frozen=True)
class Config:
    values: dict[str, dict[str, Any]]

    @classmethod
    def defaults(cls) -> "Config":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_text(cls, text: str) -> "Config":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        parser.optionxform = str
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}", getattr(exc, "lineno", None)) from None
        where = _locate(text)
        overrides: dict[str, str] = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", where.get((section, None)))
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown key {section}.{key}", where.get((section, key)))
                overrides[f"{section}.{key}"] = raw
        return cls.defaults().with_overrides(overrides, lines={k: where.get(tuple(k.split(".", 1))) for k in overrides})

    def with_overrides(self, overrides: dict[str, str], lines: dict[str, int | None] | None = None) -> "Config":
        values = {s: dict(v) for s, v in self.values.items()}
        for dotted, raw in overrides.items():
            section, _, key = dotted.partition(".")
            line = (lines or {}).get(dotted)
            if section not in SCHEMA or key not in SCHEMA[section]:
                raise ConfigError(f"unknown key {dotted}", line)
            parse = SCHEMA[section][key][0]
            try:
                values[section][key] = parse(raw.strip())
            except ValueError as exc:
                raise ConfigError(f"{dotted}: {exc}", line) from None
        cfg = Config(values)
        cfg.validate()
        return cfg

    def __getitem__(self, dotted: str) -> Any:
        section, _, key = dotted.partition(".")
        return self.values[section][key]

    def validate(self) -> None:
        """Build the typed objects once so that range errors surface as ConfigError."""
        try:
            self.run_spec()
            self.mc_config()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None

    def to_text(self) -> str:
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {_fmt(self.values[section][k])}" for k in keys)
            lines.append("")
        return "\n".join(lines)

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def params(self) -> MarketParams:
        return MarketParams(r=self["market.r"], sigma=self["market.sigma"], T=self["market.T"])

    def schedule(self) -> MonitoringSchedule:
        N = self["schedule.N"]
        T = self["market.T"]
        return MonitoringSchedule.annual(T) if N is None else MonitoringSchedule(T, N)

    def grid(self) -> SpatialGrid:
        return SpatialGrid.for_qubits(self["grid.qubits"], self["grid.z_max"])

    def run_spec(self, method: str | None = None, engine: str | None = None) -> RunSpec:
        return RunSpec(
            method=method or self["pipeline.method"],
            engine=engine or self["pipeline.engine"],
            params=self.params(),
            schedule=self.schedule(),
            grid=self.grid(),
            p=self["pipeline.p"],
            dt=self["pipeline.dt"],
            h=self["operators.h"],
            shots=self["pipeline.shots"],
            seed=self["pipeline.seed"],
            ridge=self["pipeline.ridge"],
            mode=self["pipeline.mode"],
            jump_window=self["pipeline.jump_window"],
            fit_restarts=self["pipeline.fit_restarts"],
        )

    def mc_config(self) -> McConfig:
        return McConfig(
            paths=self["mc.paths"],
            seed=self["mc.seed"],
            steps_per_interval=self["mc.steps_per_interval"],
            antithetic=self["mc.antithetic"],
            workers=self["mc.workers"],
        )
