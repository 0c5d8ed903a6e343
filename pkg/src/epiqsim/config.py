"""Scenario configuration: a TOML schema mapped onto the library's builders.

One file describes one scenario.  Sections are independent so a single file
can drive evolution runs, uncertainty reports, and ensemble sampling alike;
subcommands demand only the sections they need.  Every value is re-validated
by the constructor it feeds (grids, families, evolution guards), so a config
that loads is a config that runs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .dynamics import EvolutionConfig, INTEGRATORS
from .ensemble import XI_KINDS
from .expressions import ExpressionError
from .families import ErrorFamily, FamilyError, family_from_label
from .fields import (
    Grid1D,
    GridError,
    MadelungFields,
    Potential,
    barrier_potential,
    double_well_potential,
    fields_from_snapshot_csv,
    free_potential,
    gaussian_fields,
    harmonic_potential,
    plane_wave_fields,
    two_gaussian_fields,
)


class ConfigError(ValueError):
    """Anything wrong with a scenario description (not with the physics run)."""


_REQUIRED = object()

# section -> key -> (python type, default); _REQUIRED means the key must appear.
_SCHEMAS: dict[str, dict[str, tuple[type, object]]] = {
    "grid": {
        "n_points": (int, _REQUIRED),
        "x_min": (float, _REQUIRED),
        "x_max": (float, _REQUIRED),
    },
    "physics": {
        "hbar": (float, 1.0),
        "mass": (float, 1.0),
    },
    "initial_state": {
        "kind": (str, _REQUIRED),
        "sigma_q": (float, None),
        "q_o": (float, None),
        "p_o": (float, None),
        "separation": (float, None),
        "center": (float, None),
        "pedestal": (float, None),
        "path": (str, None),
    },
    "potential": {
        "kind": (str, _REQUIRED),
        "omega": (float, None),
        "height": (float, None),
        "width": (float, None),
        "a": (float, None),
        "b": (float, None),
        "center": (float, None),
    },
    "error_family": {
        "spec": (str, _REQUIRED),
    },
    "evolution": {
        "dt": (float, _REQUIRED),
        "t_final": (float, _REQUIRED),
        "integrator": (str, "splitstep_strang"),
        "snapshot_every": (int, 0),
        "log_every": (int, 1),
    },
    "ensemble": {
        "n": (int, _REQUIRED),
        "seed": (int, _REQUIRED),
        "xi_kind": (str, "two_point"),
    },
}

# keys each initial-state kind accepts beyond "kind", with per-kind requireds.
_INITIAL_KINDS: dict[str, tuple[set[str], set[str]]] = {
    "gaussian": ({"sigma_q"}, {"q_o", "p_o", "pedestal"}),
    "plane_wave": ({"p_o"}, set()),
    "two_gaussian": ({"sigma_q", "separation"}, {"center", "pedestal"}),
    "from_file": ({"path"}, set()),
}

_POTENTIAL_KINDS: dict[str, tuple[set[str], set[str]]] = {
    "free": (set(), set()),
    "harmonic": ({"omega"}, {"center"}),
    "barrier": ({"height", "width"}, {"center"}),
    "double_well": ({"a", "b"}, {"center"}),
}


def _coerce(section: str, key: str, expected: type, value):
    if isinstance(value, bool):  # bool passes isinstance(..., int); reject it
        raise ConfigError(f"[{section}] {key}: expected {expected.__name__}, got bool")
    if expected is float and isinstance(value, int):
        return float(value)
    if not isinstance(value, expected):
        raise ConfigError(
            f"[{section}] {key}: expected {expected.__name__}, "
            f"got {type(value).__name__}"
        )
    return value


def _parse_section(section: str, raw: dict) -> dict:
    schema = _SCHEMAS[section]
    unknown = sorted(set(raw) - set(schema))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    out = {}
    for key, (expected, default) in schema.items():
        if key in raw:
            out[key] = _coerce(section, key, expected, raw[key])
        elif default is _REQUIRED:
            raise ConfigError(f"[{section}] missing required key '{key}'")
        else:
            out[key] = default
    return out


def _check_kind_keys(section: str, raw_keys: set[str], kind: str,
                     table: dict[str, tuple[set[str], set[str]]]) -> None:
    if kind not in table:
        raise ConfigError(
            f"[{section}] kind must be one of {sorted(table)}, got '{kind}'"
        )
    required, optional = table[kind]
    given = raw_keys - {"kind"}
    missing = sorted(required - given)
    if missing:
        raise ConfigError(f"[{section}] kind '{kind}' needs key(s): {', '.join(missing)}")
    extra = sorted(given - required - optional)
    if extra:
        raise ConfigError(
            f"[{section}] key(s) not valid for kind '{kind}': {', '.join(extra)}"
        )


@dataclass(frozen=True)
class ScenarioConfig:
    """Validated scenario description plus the hash of its source text."""

    sections: dict
    sha256: str
    base_dir: Path

    def has(self, section: str) -> bool:
        return section in self.sections

    def _section(self, name: str) -> dict:
        if name not in self.sections:
            raise ConfigError(f"missing [{name}] section")
        return self.sections[name]

    # --- builders; each one re-runs the owning module's guards -------------

    def build_grid(self) -> Grid1D:
        g = self._section("grid")
        try:
            return Grid1D(g["n_points"], g["x_min"], g["x_max"])
        except (GridError, ValueError) as exc:
            raise ConfigError(f"[grid] {exc}") from exc

    def physics(self) -> tuple[float, float]:
        p = self.sections.get("physics", {"hbar": 1.0, "mass": 1.0})
        if p["hbar"] <= 0.0 or p["mass"] <= 0.0:
            raise ConfigError("[physics] hbar and mass must be positive")
        return p["hbar"], p["mass"]

    def build_initial_fields(self) -> MadelungFields:
        init = self._section("initial_state")
        hbar, mass = self.physics()
        kind = init["kind"]
        try:
            if kind == "from_file":
                path = self.base_dir / init["path"]
                fields = fields_from_snapshot_csv(
                    path.read_text(), hbar=hbar, mass=mass
                )
                self._check_grid_matches(fields.grid)
                return fields
            grid = self.build_grid()
            if kind == "gaussian":
                return gaussian_fields(
                    grid, init["sigma_q"], q_o=init["q_o"] or 0.0,
                    p_o=init["p_o"] or 0.0, hbar=hbar, mass=mass,
                    pedestal=init["pedestal"] or 0.0,
                )
            if kind == "plane_wave":
                return plane_wave_fields(grid, init["p_o"], hbar=hbar, mass=mass)
            # two_gaussian; kind already vetted at load time
            return two_gaussian_fields(
                grid, init["sigma_q"], init["separation"],
                center=init["center"] or 0.0, hbar=hbar, mass=mass,
                pedestal=init["pedestal"] or 0.0,
            )
        except OSError as exc:
            raise ConfigError(f"[initial_state] cannot read '{init['path']}': {exc}") from exc
        except (GridError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[initial_state] {exc}") from exc

    def _check_grid_matches(self, grid: Grid1D) -> None:
        if not self.has("grid"):
            return
        declared = self.build_grid()
        if (declared.n_points != grid.n_points
                or abs(declared.x_min - grid.x_min) > 1e-9 * grid.length
                or abs(declared.x_max - grid.x_max) > 1e-9 * grid.length):
            raise ConfigError(
                "[grid] section disagrees with the grid stored in the snapshot file"
            )

    def build_potential(self, grid: Grid1D) -> Potential:
        pot = self._section("potential")
        kind = pot["kind"]
        _, mass = self.physics()
        try:
            if kind == "free":
                return free_potential(grid)
            if kind == "harmonic":
                return harmonic_potential(
                    grid, pot["omega"], mass=mass, center=pot["center"] or 0.0
                )
            if kind == "barrier":
                return barrier_potential(
                    grid, pot["height"], pot["width"], center=pot["center"] or 0.0
                )
            return double_well_potential(
                grid, pot["a"], pot["b"], center=pot["center"] or 0.0
            )
        except (GridError, ValueError) as exc:
            raise ConfigError(f"[potential] {exc}") from exc

    def build_family(self) -> ErrorFamily:
        spec = self._section("error_family")["spec"]
        try:
            return family_from_label(spec)
        except (FamilyError, ExpressionError, ValueError) as exc:
            raise ConfigError(f"[error_family] {exc}") from exc

    def build_evolution(self) -> EvolutionConfig:
        ev = self._section("evolution")
        try:
            return EvolutionConfig(
                dt=ev["dt"], t_final=ev["t_final"], integrator=ev["integrator"],
                snapshot_every=ev["snapshot_every"], log_every=ev["log_every"],
            )
        except ValueError as exc:
            raise ConfigError(f"[evolution] {exc}") from exc

    def ensemble_params(self) -> tuple[int, int, str]:
        ens = self._section("ensemble")
        if ens["n"] < 1:
            raise ConfigError("[ensemble] n must be at least 1")
        if ens["xi_kind"] not in XI_KINDS:
            raise ConfigError(f"[ensemble] xi_kind must be one of {XI_KINDS}")
        return ens["n"], ens["seed"], ens["xi_kind"]


def parse_config(text: str, base_dir: str | Path = ".") -> ScenarioConfig:
    """Parse and validate scenario TOML given as a string."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"not valid TOML: {exc}") from exc
    unknown = sorted(set(raw) - set(_SCHEMAS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    sections = {}
    for name, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level '{name}' must be a section, not a value")
        sections[name] = _parse_section(name, body)
    if "initial_state" in sections:
        init = sections["initial_state"]
        _check_kind_keys("initial_state", set(raw["initial_state"]), init["kind"],
                         _INITIAL_KINDS)
        if init["kind"] != "from_file" and "grid" not in sections:
            raise ConfigError("[initial_state] needs a [grid] section")
    if "potential" in sections:
        _check_kind_keys("potential", set(raw["potential"]),
                         sections["potential"]["kind"], _POTENTIAL_KINDS)
    if "evolution" in sections:
        integrator = sections["evolution"]["integrator"]
        if integrator not in INTEGRATORS:
            raise ConfigError(f"[evolution] integrator must be one of {INTEGRATORS}")
    sha = hashlib.sha256(text.encode()).hexdigest()
    return ScenarioConfig(sections=sections, sha256=sha, base_dir=Path(base_dir))


def load_config(path: str | Path) -> ScenarioConfig:
    """Load a scenario file; relative snapshot paths resolve next to it."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config '{path}': {exc}") from exc
    return parse_config(text, base_dir=path.parent)
