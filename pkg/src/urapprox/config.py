"""Scenario configuration: an INI file with a single [scenario] section.

Numbers may be written as decimals or as powers of two ("2^-9"). Lists are
comma separated; parameter maps are "key=value" pairs separated by ";".

Keys and defaults
-----------------
name            scenario name (default: file stem)
boundary        flat_plane | polyline | lipschitz_graph | sawtooth_graph |
                cantor_four_corners | sphere | point_set
boundary_params map passed to the boundary factory
dim             ambient dimension (2)
spacing         sample spacing of E (2^-12)
k_min, k_max    generations of the surface grid (0, 6)
eta, K          corona parameters (2^-8, 2^12)
tau             Whitney fattening (1/8)
kappa           cone aperture (2)
eps             epsilon list for the approximant sweep (0.5, 0.25, 0.125)
data            boundary datum kind (halfplane_indicator)
data_params     map passed to the datum
h               solver spacing, or "auto" = 2^-(k_max+1)
box             working box "x0, y0[, z0], side"
whitney_extra   Whitney depth beyond k_max (4)
q0              root cube "k; i, j" for Carleson boxes (first root)
seed            RNG seed (0)
output          output directory (out/<name>)
adr_trials, nta_trials, families, extrapolation_samples
                sample counts (200, 30, 10, 40)
sweep           run the epsilon sweep (true)
global          run the global assembly (false)
stability       run the h-halving and added-depth checks (true)
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace


class ConfigError(ValueError):
    pass


def parse_number(text):
    s = str(text).strip().replace(" ", "")
    if "^" in s:
        base, exp = s.split("^", 1)
        return float(base) ** float(exp)
    if "/" in s:
        a, b = s.split("/", 1)
        return float(a) / float(b)
    return float(s)


def parse_list(text):
    return [parse_number(v) for v in str(text).split(",") if v.strip()]


def _value(text):
    s = text.strip()
    if s.lower() in ("true", "false"):
        return s.lower() == "true"
    if "," in s:
        try:
            return parse_list(s)
        except ValueError:
            return s
    try:
        v = parse_number(s)
        return int(v) if v.is_integer() and "." not in s and "^" not in s and "/" not in s else v
    except ValueError:
        return s


def parse_map(text):
    out = {}
    for part in str(text).split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigError(f"expected key=value in {part!r}")
        k, v = part.split("=", 1)
        out[k.strip()] = _value(v)
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    boundary: str = "flat_plane"
    boundary_params: dict = field(default_factory=dict)
    dim: int = 2
    spacing: float = 2.0 ** -12
    k_min: int = 0
    k_max: int = 6
    eta: float = 2.0 ** -8
    K: float = 2.0 ** 12
    tau: float = 0.125
    kappa: float = 2.0
    eps: tuple = (0.5, 0.25, 0.125)
    data: str = "halfplane_indicator"
    data_params: dict = field(default_factory=dict)
    h: float = math.nan
    box: tuple = (-1.0, -1.0, 2.0)
    whitney_extra: int = 4
    q0: tuple = ()
    seed: int = 0
    output: str = ""
    adr_trials: int = 200
    nta_trials: int = 30
    families: int = 10
    extrapolation_samples: int = 40
    sweep: bool = True
    global_: bool = False
    stability: bool = True

    def __post_init__(self):
        validate(self)

    @property
    def solver_h(self):
        return 2.0 ** -(self.k_max + 1) if math.isnan(self.h) else self.h

    @property
    def output_dir(self):
        return self.output or os.path.join("out", self.name)

    def deeper(self):
        """The same scenario with one more generation and h halved."""
        return replace(self, k_max=self.k_max + 1,
                       h=math.nan if math.isnan(self.h) else self.h / 2)

    def finer(self):
        return replace(self, h=self.solver_h / 2)

    def as_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            key = "global" if f.name == "global_" else f.name
            out[key] = list(v) if isinstance(v, tuple) else v
        if math.isnan(self.h):
            out["h"] = "auto"
        return out


def validate(c):
    if not 0 < c.eta <= 1 / 16:
        raise ConfigError(f"eta must lie in (0, 1/16], got {c.eta}")
    if not c.K >= 16:
        raise ConfigError(f"K must be at least 16, got {c.K}")
    if not 0 < c.tau <= 0.125:
        raise ConfigError(f"tau must lie in (0, 1/8], got {c.tau}")
    if not c.kappa > 0:
        raise ConfigError("kappa must be positive")
    if not c.eps or any(not 0 < e < 1 for e in c.eps):
        raise ConfigError(f"every eps must lie in (0, 1), got {c.eps}")
    if c.k_min > c.k_max:
        raise ConfigError("k_min must not exceed k_max")
    if c.dim not in (2, 3):
        raise ConfigError("dim must be 2 or 3")
    if len(c.box) != c.dim + 1 or not c.box[-1] > 0:
        raise ConfigError("box needs dim corner coordinates and a positive side")
    if not math.isnan(c.h) and not 0 < c.h <= 2.0 ** -(c.k_max + 1):
        raise ConfigError(f"h = {c.h} does not resolve generation {c.k_max}")
    if c.q0 and (len(c.q0) != 2 or len(c.q0[1]) != c.dim):
        raise ConfigError("q0 must be 'k; i, j'")


_INT = {"dim", "k_min", "k_max", "whitney_extra", "seed", "adr_trials", "nta_trials",
        "families", "extrapolation_samples"}
_BOOL = {"sweep", "global", "stability"}


def from_mapping(raw, name="scenario"):
    kw = {"name": name}
    for key, text in raw.items():
        text = str(text).strip()
        if key in _INT:
            kw[key] = int(parse_number(text))
        elif key in _BOOL:
            if text.lower() not in ("true", "false"):
                raise ConfigError(f"{key} must be true or false")
            kw["global_" if key == "global" else key] = text.lower() == "true"
        elif key in ("boundary_params", "data_params"):
            kw[key] = parse_map(text)
        elif key == "eps":
            kw[key] = tuple(parse_list(text))
        elif key == "box":
            kw[key] = tuple(parse_list(text))
        elif key == "h":
            kw[key] = math.nan if text.lower() == "auto" else parse_number(text)
        elif key == "q0":
            k, idx = text.split(";")
            kw[key] = (int(k), tuple(int(v) for v in idx.split(",")))
        elif key in ("eta", "K", "tau", "kappa", "spacing"):
            kw[key] = parse_number(text)
        elif key in ("name", "boundary", "data", "output"):
            kw[key] = text
        else:
            raise ConfigError(f"unknown key {key!r}")
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    if not cp.read(path):
        raise ConfigError(f"cannot read {path}")
    if "scenario" not in cp:
        raise ConfigError("missing [scenario] section")
    stem = os.path.splitext(os.path.basename(path))[0]
    return from_mapping(dict(cp["scenario"]), name=cp["scenario"].get("name", stem))
