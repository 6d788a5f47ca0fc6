"""Flat ``key = value`` configuration files and named scenario presets.

Blank lines and lines starting with ``#`` are ignored. Unknown keys are
rejected. Overrides given as ``key=value`` strings are applied after the
file is parsed.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable

from .errors import ConfigError

# config key -> (attribute, type)
KEYS = {
    "lambda": ("slow_rate", float),
    "Lambda": ("fast_rate", float),
    "gamma": ("gamma", float),
    "alpha": ("alpha", float),
    "sigma2": ("sigma2", float),
    "burn_in": ("burn_in", int),
    "slic_step": ("slic_step", int),
    "slic_compactness": ("slic_compactness", float),
    "slic_iters": ("slic_iters", int),
    "cva_tau": ("cva_tau", float),
    # scenario keys
    "height": ("height", int),
    "width": ("width", int),
    "bands": ("bands", int),
    "frames": ("frames", int),
    "change_frame": ("change_frame", int),
    "change_spread": ("change_spread", int),
    "snr_db": ("snr_db", float),
    "change_amplitude": ("change_amplitude", float),
    "changed_segments": ("changed_segments", int),
    "scene_seed": ("scene_seed", int),
    "metric": ("metric", str),
}

PRESETS = ("example1", "example2")


@dataclass(frozen=True)
class Settings:
    slow_rate: float | None = None
    fast_rate: float | None = None
    gamma: float = 0.1
    alpha: float = 0.05
    sigma2: float | None = None
    burn_in: int = 0
    slic_step: int | None = None
    slic_compactness: float = 10.0
    slic_iters: int = 10
    cva_tau: float | None = None
    height: int | None = None
    width: int | None = None
    bands: int | None = None
    frames: int | None = None
    change_frame: int | None = None
    change_spread: int = 0
    snr_db: float | None = None
    change_amplitude: float = 0.0
    changed_segments: int = 1
    scene_seed: int = 0
    metric: str = "delay"

    def require(self, *names: str):
        missing = [k for k, (attr, _) in KEYS.items() if attr in names and getattr(self, attr) is None]
        if missing:
            raise ConfigError(f"missing required config keys: {', '.join(missing)}")
        return tuple(getattr(self, n) for n in names)

    def to_text(self) -> str:
        lines = []
        for key, (attr, _) in KEYS.items():
            v = getattr(self, attr)
            if v is not None:
                lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

    def detector_config(self):
        from .detector import DetectorConfig
        lam, Lam, sigma2 = self.require("slow_rate", "fast_rate", "sigma2")
        return DetectorConfig(lam, Lam, self.gamma, self.alpha, sigma2, self.burn_in)

    def superpixel_params(self):
        from .superpixel import SuperpixelParams
        (step,) = self.require("slic_step")
        return SuperpixelParams(step, self.slic_compactness, self.slic_iters)


def _convert(key: str, raw: str):
    if key not in KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    attr, typ = KEYS[key]
    try:
        if typ is int:
            f = float(raw)
            if f != int(f):
                raise ValueError
            return attr, int(f)
        return attr, typ(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ.__name__}") from None


def parse_pairs(lines: Iterable[str], source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        attr, value = _convert(key, raw)
        values[attr] = value
    return values


def parse_config(text: str, overrides: Iterable[str] = (), source: str = "<config>") -> Settings:
    values = parse_pairs(text.splitlines(), source)
    values.update(parse_pairs(overrides, "--set"))
    return Settings(**values)


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return resources.files("graphcpd").joinpath("presets").joinpath(f"{name}.cfg").read_text()


def load_settings(path=None, overrides: Iterable[str] = (), preset: str | None = None) -> Settings:
    """Merge, in order: a named preset, a config file, then overrides."""
    text = preset_text(preset) if preset else ""
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        text += "\n" + p.read_text()
    return parse_config(text, overrides, source=str(path or preset or "<config>"))


def settings_fields() -> list[str]:
    return [f.name for f in fields(Settings)]
