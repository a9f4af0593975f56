"""Scenario configs: an INI file with a [map] and a [run] section.

[map]
family = linear | single_mode | generic | volume_preserving | smooth_conjugate
         | translation_conjugate | custom
matrix = 2 1 0, 1 2 1, 0 1 1      ; rows separated by commas
epsilon = 0.05
family_seed = 0                   ; generic family member
shift = 0.1 0.2 0.3               ; translation_conjugate
modes = 0 1 0 / 0.159 0 0 / 0 0 0 ; custom: k / sin amplitude / cos amplitude, modes joined by '|'

[run]
seed = 0                          ; mandatory
tag = wu
x = 0.1234 0.5678 0.3141
r = 0.25
...

Unknown keys are rejected; every numeric key has an admissible range.
"""

import configparser
import hashlib
import io
from dataclasses import dataclass, field

import numpy as np

from . import families
from .families import A_DEFAULT
from .torus_core import TAGS, AnosovMap, PerturbationField

FAMILIES = ("linear", "single_mode", "generic", "volume_preserving", "smooth_conjugate",
            "translation_conjugate", "custom")

# key: (parser, default, admissible check, description)
_vec = lambda s: np.array([float(t) for t in s.split()], dtype=float)
_floats = lambda s: [float(t) for t in s.replace(",", " ").split()]
_RUN = {
    "seed": (int, None, lambda v: v >= 0, "nonnegative integer"),
    "tag": (str, "wu", lambda v: v in TAGS, "one of uu, wu, s"),
    "tags": (lambda s: s.split(), list(TAGS), lambda v: set(v) <= set(TAGS), "subset of uu wu s"),
    "x": (_vec, np.array([0.1234, 0.5678, 0.3141]), lambda v: v.shape == (3,), "three reals"),
    "r": (float, 0.25, lambda v: 0 < v <= 1.0, "in (0, 1]"),
    "n_max": (int, None, lambda v: 1 <= v <= 60, "in [1, 60]"),
    "eps_schedule": (_floats, None, lambda v: all(e > 0 for e in v), "positive reals"),
    "max_step": (float, 1e-3, lambda v: 1e-6 <= v <= 0.1, "in [1e-6, 0.1]"),
    "grid_n": (int, 32, lambda v: 2 <= v <= 256, "in [2, 256]"),
    "residual_grid": (int, None, lambda v: 2 <= v <= 256, "in [2, 256]"),
    "tol": (float, 1e-9, lambda v: 1e-14 <= v <= 1e-2, "in [1e-14, 1e-2]"),
    "orbit_length": (int, 1000, lambda v: 1 <= v <= 10 ** 6, "in [1, 1e6]"),
    "ensemble": (int, 64, lambda v: 1 <= v <= 10 ** 5, "in [1, 1e5]"),
    "N": (int, 64, lambda v: 1 <= v <= 10 ** 4, "in [1, 1e4]"),
    "samples": (int, 4096, lambda v: 1 <= v <= 10 ** 7, "in [1, 1e7]"),
    "leaves": (int, 16, lambda v: 2 <= v <= 1024, "in [2, 1024]"),
    "base_points": (int, 64, lambda v: 2 <= v <= 10 ** 4, "in [2, 1e4]"),
    "entropy": (lambda s: s.strip().lower() in ("1", "yes", "true", "on"), True,
                lambda v: True, "boolean"),
    "entropy_n_max": (int, None, lambda v: 1 <= v <= 40, "in [1, 40]"),
    "chart_scale": (float, 0.125, lambda v: 0 < v <= 0.5, "in (0, 0.5]"),
    "ce_samples": (int, 200, lambda v: 1 <= v <= 10 ** 5, "in [1, 1e5]"),
}
_MAP = ("family", "matrix", "epsilon", "family_seed", "shift", "modes")


class ConfigError(ValueError):
    exit_code = 2


@dataclass
class ScenarioConfig:
    map_section: dict
    run: dict
    raw: dict = field(default_factory=dict)
    text: str = field(repr=False, default="")

    @property
    def seed(self):
        return self.run["seed"]

    def get(self, key):
        return self.run[key]

    def canonical(self):
        """Normalized INI text: sorted keys, stripped values."""
        out = ["[map]"] + [f"{k} = {self.map_section[k]}" for k in sorted(self.map_section)]
        out += ["", "[run]"] + [f"{k} = {self.raw[k]}" for k in sorted(self.raw)]
        return "\n".join(out) + "\n"

    @property
    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def build_map(self):
        return build_map(self.map_section)


def _matrix(text):
    rows = [r.split() for r in text.split(",")]
    A = np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
    if A.shape != (3, 3):
        raise ConfigError("matrix needs three rows of three integers")
    return A


def build_map(m):
    family = m.get("family", "linear")
    if family not in FAMILIES:
        raise ConfigError(f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")
    A = _matrix(m["matrix"]) if "matrix" in m else A_DEFAULT
    eps = float(m.get("epsilon", 0.05))
    if not 0.0 <= eps <= 1.0:
        raise ConfigError("epsilon must lie in [0, 1]")
    if family == "linear" or (family != "translation_conjugate" and eps == 0.0):
        return AnosovMap(A, name="linear")
    if family == "single_mode":
        return families.single_mode(eps, A)
    if family == "generic":
        return families.generic(int(m.get("family_seed", 0)), eps, A=A)
    if family == "volume_preserving":
        return families.volume_preserving(eps, A)
    if family == "smooth_conjugate":
        return families.smooth_conjugate(eps, A)
    if family == "translation_conjugate":
        return families.translation_conjugate(_vec(m.get("shift", "0.1 0.2 0.3")), A)
    ks, ss, cs = [], [], []
    for mode in m.get("modes", "").split("|"):
        if not mode.strip():
            continue
        parts = [p.split() for p in mode.split("/")]
        if len(parts) != 3 or any(len(p) != 3 for p in parts):
            raise ConfigError("each custom mode is 'k1 k2 k3 / s1 s2 s3 / c1 c2 c3'")
        ks.append([int(v) for v in parts[0]])
        ss.append([float(v) for v in parts[1]])
        cs.append([float(v) for v in parts[2]])
    if not ks:
        return AnosovMap(A, name="custom")
    return AnosovMap(A, PerturbationField(ks, ss, cs, eps), name="custom")


def parse_config(text, overrides=None):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    extra = set(cp.sections()) - {"map", "run"}
    if extra:
        raise ConfigError(f"unknown sections: {sorted(extra)}")
    m = dict(cp["map"]) if cp.has_section("map") else {}
    bad = set(m) - set(_MAP)
    if bad:
        raise ConfigError(f"unknown [map] keys: {sorted(bad)}")
    raw = dict(cp["run"]) if cp.has_section("run") else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = str(v)
    bad = set(raw) - set(_RUN)
    if bad:
        raise ConfigError(f"unknown [run] keys: {sorted(bad)}")
    if "seed" not in raw:
        raise ConfigError("seed is mandatory (set it in [run] or pass --seed)")
    run = {}
    for k, (conv, default, ok, desc) in _RUN.items():
        if k in raw:
            try:
                v = conv(raw[k])
            except ValueError as exc:
                raise ConfigError(f"{k}: cannot parse {raw[k]!r}") from exc
            if not ok(v):
                raise ConfigError(f"{k} = {raw[k]} is outside its admissible range ({desc})")
            run[k] = v
        else:
            run[k] = default
    cfg = ScenarioConfig(m, run, {k: " ".join(str(raw[k]).split()) for k in raw}, text)
    cfg.build_map()
    return cfg


def load_config(path=None, overrides=None):
    text = "" if path is None else io.open(path, encoding="utf-8").read()
    return parse_config(text, overrides)


__all__ = ["ScenarioConfig", "ConfigError", "parse_config", "load_config", "build_map"]
