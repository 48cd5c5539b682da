"""Experiment configuration: one INI-style file of ``key = value`` pairs
grouped in sections.  Unset keys fall back to ``DEFAULTS``."""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

DEFAULTS = {
    "space": {"generator": "uniform-line", "file": "", "seed": "0"},
    "lattice": {"mode": "lab", "C0": "", "A0": "", "k_min": "", "k_max": "", "tie_break_seed": ""},
    "kernel": {"family": "lambda-sum", "m": "2", "delta": "1.0", "CK": "1.0", "n": ""},
    "weights": {"exponents": "2, 2", "rho": "1.0", "alpha": "", "file": ""},
    "dominate": {"ftuple": "", "eta": "0.5", "eta_min": "0.4", "k_max_layers": "12",
                 "trunc_mode": "linf"},
    "verify": {"trials": "10", "seed": "0", "c_slack": "64", "weight_spread": "1.0",
               "duality_trials": "10"},
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    parser: configparser.ConfigParser
    base: Path

    def get(self, section: str, key: str) -> str:
        return self.parser.get(section, key, fallback="").strip()

    def number(self, section: str, key: str, default=None, kind=float):
        raw = self.get(section, key)
        if raw == "":
            return default
        try:
            return kind(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a {kind.__name__}") from exc

    def path(self, section: str, key: str) -> Path | None:
        raw = self.get(section, key)
        if not raw:
            return None
        p = Path(raw)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise ConfigError(f"[{section}] {key}: file {p} does not exist")
        return p

    def generator_params(self) -> dict:
        """Every [space] key other than the reserved ones, parsed as numbers."""
        out = {}
        for k, v in self.parser.items("space"):
            if k in DEFAULTS["space"]:
                continue
            out[k] = _number(v)
        return out

    def set(self, section: str, key: str, value) -> None:
        self.parser.set(section, key, str(value))

    def canonical(self) -> str:
        lines = []
        for sec in sorted(self.parser.sections()):
            lines.append(f"[{sec}]")
            lines.extend(f"{k} = {v.strip()}" for k, v in sorted(self.parser.items(sec)))
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]


def _number(v: str):
    for kind in (int, float):
        try:
            return kind(v)
        except ValueError:
            pass
    return v.strip()


def load_config(path: str | Path | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read_dict(DEFAULTS)
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        base = path.resolve().parent
    unknown = set(parser.sections()) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = ExperimentConfig(parser, base)
    if cfg.get("lattice", "mode") not in ("lab", "strict"):
        raise ConfigError("[lattice] mode must be lab or strict")
    return cfg
