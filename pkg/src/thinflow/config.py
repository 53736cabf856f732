"""Sectioned run configuration: parsing, defaults, resolution.

The format is a flat INI-like text: `[section]` headers followed by
`key = value` lines, with `#` or `;` starting a comment. Values are
numbers, whitespace-separated number lists, or a preset name; there are
no strings to quote and no environment lookups, so a config file fully
determines a run. Unknown sections and keys are rejected rather than
ignored, and every type error names the key and the line it came from.

Missing keys (or whole sections) resolve to the documented defaults, so
the empty text is itself a valid configuration. `RunConfig` keeps the
resolved values and knows how to build the problem objects from them;
`header_lines` replays the resolved state as `section.key = value` text
for the comment header every artifact starts with.
"""

from __future__ import annotations

from dataclasses import dataclass

from .constitutive import build_derived, corey
from .problem import Geometry, ProblemSpec, Regime, classify, preset_coefficients, preset_forcing
from .verify import DEFAULT_EPS_LADDER, SweepGrids


class ConfigError(ValueError):
    """Malformed or inadmissible configuration text."""


_FLOAT = "a number"
_INT = "an integer"
_FLOATS = "a number list"
_PRESET = "a preset name"

# (kind, default). A None default marks an optional key whose effective
# value is derived from other keys at build time.
SCHEMA = {
    "geometry": {
        "ell": (_FLOAT, 1.0),
        "epsilon": (_FLOAT, 0.1),
        "horizon": (_FLOAT, 0.5),
    },
    "constitutive": {
        "family": (_PRESET, "corey"),
        "n_w": (_FLOAT, 2.0),
        "n_o": (_FLOAT, 2.0),
        "visc_w": (_FLOAT, 1.0),
        "visc_o": (_FLOAT, 1.0),
        "entry_pressure": (_FLOAT, 1.0),
    },
    "regime": {
        "alpha": (_FLOAT, 1.0),
        "beta": (_FLOAT, 0.0),
    },
    "data": {
        "q0_coeffs": (_FLOATS, (1.0,)),
        "q_ell_coeffs": (_FLOATS, (0.0,)),
        "s_mean": (_FLOAT, 0.45),
        "s_amplitude": (_FLOAT, 0.15),
        "trace_amplitude": (_FLOAT, 0.08),
        "q_amplitude": (_FLOAT, 1.0),
        "q_cos_amplitude": (_FLOAT, 0.0),
        "support_delta": (_FLOAT, None),
        "k1_mean": (_FLOAT, 1.0),
        "k1_cos": (_FLOAT, 0.0),
        "porosity_mean": (_FLOAT, 0.35),
        "porosity_cos": (_FLOAT, 0.0),
        "kperp_mean": (_FLOAT, 1.0),
        "kperp_cos": (_FLOAT, 0.0),
    },
    "discretization": {
        "n_x": (_INT, 192),
        "n_t": (_INT, 160),
        "n_r": (_INT, 32),
        "disk_n_r": (_INT, 64),
        "disk_n_theta": (_INT, 64),
    },
    "sweep": {
        "ladder": (_FLOATS, DEFAULT_EPS_LADDER),
        "slack": (_FLOAT, 0.3),
        "tail": (_INT, 3),
    },
}

_PRESETS = {"family": ("corey",)}


def _convert(section: str, key: str, raw: str, kind: str, lineno: int):
    try:
        if kind == _FLOAT:
            return float(raw)
        if kind == _INT:
            return int(raw)
        if kind == _FLOATS:
            tokens = raw.replace(",", " ").split()
            if not tokens:
                raise ValueError
            return tuple(float(tok) for tok in tokens)
    except ValueError:
        raise ConfigError(
            "line %d: key '%s' in [%s] expects %s, got %r"
            % (lineno, key, section, kind, raw)
        ) from None
    if raw not in _PRESETS[key]:
        raise ConfigError(
            "line %d: key '%s' in [%s] expects one of %s, got %r"
            % (lineno, key, section, "/".join(_PRESETS[key]), raw)
        )
    return raw


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, tuple):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, int):
        return "%d" % value
    return "%.17g" % value


@dataclass(frozen=True)
class RunConfig:
    """Resolved configuration: one typed flat map per section."""

    geometry: dict
    constitutive: dict
    regime: dict
    data: dict
    discretization: dict
    sweep: dict

    @property
    def eps_ladder(self) -> tuple:
        return tuple(self.sweep["ladder"])

    @property
    def slack(self) -> float:
        return self.sweep["slack"]

    @property
    def tail(self) -> int:
        return self.sweep["tail"]

    def classify_regime(self) -> Regime:
        return classify(self.regime["alpha"], self.regime["beta"])

    def grids(self) -> SweepGrids:
        d = self.discretization
        return SweepGrids(
            n_x=d["n_x"], n_t=d["n_t"], n_r=d["n_r"],
            disk_n_r=d["disk_n_r"], disk_n_theta=d["disk_n_theta"],
        )

    def support_delta(self) -> float:
        given = self.data["support_delta"]
        return 0.1 * self.geometry["ell"] if given is None else given

    def build_spec(self) -> ProblemSpec:
        g, c, r, d = self.geometry, self.constitutive, self.regime, self.data
        derived = build_derived(corey(
            n_w=c["n_w"], n_o=c["n_o"],
            visc_w=c["visc_w"], visc_o=c["visc_o"],
            entry_pressure=c["entry_pressure"],
        ))
        geometry = Geometry(length_ell=g["ell"], epsilon=g["epsilon"],
                            horizon_T=g["horizon"])
        coefficients = preset_coefficients(
            g["ell"], r["beta"],
            k1_mean=d["k1_mean"], k1_cos=d["k1_cos"],
            porosity_mean=d["porosity_mean"], porosity_cos=d["porosity_cos"],
            kperp_mean=d["kperp_mean"], kperp_cos=d["kperp_cos"],
        )
        forcing = preset_forcing(
            g["ell"], g["horizon"], r["alpha"],
            q0_coeffs=d["q0_coeffs"], q_ell_coeffs=d["q_ell_coeffs"],
            s_mean=d["s_mean"], s_amplitude=d["s_amplitude"],
            trace_amplitude=d["trace_amplitude"],
            q_amplitude=d["q_amplitude"], q_cos_amplitude=d["q_cos_amplitude"],
            support_delta=self.support_delta(),
        )
        return ProblemSpec(geometry=geometry, coefficients=coefficients,
                           forcing=forcing, derived=derived)

    def header_lines(self) -> list:
        """The full resolved config as `section.key = value` lines."""
        lines = []
        for section, keys in SCHEMA.items():
            values = getattr(self, section)
            for key in keys:
                value = values[key]
                if section == "data" and key == "support_delta":
                    value = self.support_delta()
                lines.append("%s.%s = %s" % (section, key, _fmt(value)))
        return lines


def parse_config(text: str) -> RunConfig:
    """Parse sectioned key/value text into a fully resolved RunConfig."""
    raw: dict = {name: {} for name in SCHEMA}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        for marker in "#;":
            cut = line.find(marker)
            if cut >= 0:
                line = line[:cut]
        line = line.strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError("line %d: unterminated section header %r" % (lineno, line))
            name = line[1:-1].strip()
            if name not in SCHEMA:
                raise ConfigError(
                    "line %d: unknown section [%s]; expected one of %s"
                    % (lineno, name, ", ".join(SCHEMA))
                )
            section = name
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value', got %r" % (lineno, line))
        if section is None:
            raise ConfigError("line %d: key outside any [section]" % lineno)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in SCHEMA[section]:
            raise ConfigError(
                "line %d: unknown key '%s' in [%s]" % (lineno, key, section)
            )
        if key in raw[section]:
            raise ConfigError(
                "line %d: duplicate key '%s' in [%s]" % (lineno, key, section)
            )
        raw[section][key] = (value, lineno)

    resolved = {}
    for name, keys in SCHEMA.items():
        out = {}
        for key, (kind, default) in keys.items():
            if key in raw[name]:
                value, lineno = raw[name][key]
                out[key] = _convert(name, key, value, kind, lineno)
            else:
                out[key] = default
        resolved[name] = out
    return RunConfig(**resolved)


def default_config() -> RunConfig:
    """The all-defaults configuration (what the empty text parses to)."""
    return parse_config("")
