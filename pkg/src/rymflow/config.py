"""JSON run configuration: schema, defaults, initial-data presets and the four
curvature-case presets."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import re
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .bundle import BundleSpec, FlowState
from .flow import StepControl
from .mesh import MeshSurface, build_sphere_mesh, build_torus_mesh


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 4."""


_NUM = {"type": "number"}
_FIELD = {"oneOf": [{"type": "number"}, {"type": "string"}]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["surface", "bundle"],
    "properties": {
        "name": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"},
        "case": {"enum": ["chi_neg", "chi_zero", "chi_pos_trivial", "chi_pos_nontrivial"]},
        "surface": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["torus", "sphere", "homogeneous"]},
                "resolution": {"type": "integer"},
                "R_sigma": _NUM,
                "area": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "bundle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "k": {"type": "integer", "minimum": 1},
                "c1": {"type": "array", "items": {"type": "integer"}},
                "h0": {"type": "array", "items": _NUM},
                "lambda": {"enum": [-1, 0, 1]},
            },
        },
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "u": _FIELD,
                "f": {"oneOf": [_FIELD, {"type": "array", "items": _FIELD}]},
            },
        },
        "control": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "dt_max": {"type": "number", "exclusiveMinimum": 0},
                "dt_min": {"type": "number", "exclusiveMinimum": 0},
                "t_end": {"type": "number", "exclusiveMinimum": 0},
                "stride": {"type": "number", "exclusiveMinimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "scheme": {"enum": ["rk4", "imex"]},
                "blowup_threshold": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "snapshot_stride": {"type": "integer", "minimum": 1},
            },
        },
    },
}

DEFAULTS = {
    "name": "run",
    "surface": {"resolution": None},
    "bundle": {"k": 1, "c1": None, "h0": None, "lambda": 0},
    "initial": {"u": 0.0, "f": 0.0},
    "control": {"cfl": 0.5, "dt_max": 1e-2, "dt_min": 1e-12, "t_end": 1.0, "stride": 0.1,
                "seed": 0, "scheme": "rk4", "blowup_threshold": 20.0},
    "outputs": {"dir": "rym_out", "snapshot_stride": 1},
}

_DEFAULT_RESOLUTION = {"torus": 64, "sphere": 4}
_PRESET_RE = re.compile(r"^\s*(constant|cos_mode|z_mode|random_smooth|file)\s*\(\s*(.*?)\s*\)\s*$")


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration with every default filled in."""

    data: dict
    base_dir: Path = Path(".")

    def __getitem__(self, key):
        return self.data[key]

    def echo(self) -> str:
        """Canonical JSON text; parsing it again reproduces it byte for byte."""
        return json.dumps(self.data, indent=2, sort_keys=True) + "\n"

    @property
    def name(self) -> str:
        return self.data["name"]

    def control(self) -> StepControl:
        c = self.data["control"]
        return StepControl(cfl_factor=c["cfl"], dt_max=c["dt_max"], dt_min=c["dt_min"],
                           blowup_threshold=c["blowup_threshold"], scheme=c["scheme"])

    def bundle(self) -> BundleSpec:
        b = self.data["bundle"]
        k = b["k"]
        return BundleSpec(k=k, c1=tuple(b["c1"]), h0=np.array(b["h0"], float).reshape(k, k), lam=b["lambda"])

    def mesh(self) -> MeshSurface:
        s = self.data["surface"]
        if s["kind"] == "torus":
            return build_torus_mesh(s["resolution"])
        if s["kind"] == "sphere":
            return build_sphere_mesh(s["resolution"])
        raise ConfigError("homogeneous surfaces have no mesh")

    def initial_state(self) -> FlowState:
        mesh = self.mesh()
        spec = self.bundle()
        rng = np.random.default_rng(self.data["control"]["seed"])
        u = field_from_preset(self.data["initial"]["u"], mesh, rng, self.base_dir, "u")
        fp = self.data["initial"]["f"]
        fp = fp if isinstance(fp, list) else [fp] * spec.k
        f = np.array([field_from_preset(p, mesh, rng, self.base_dir, f"f_{i + 1}") for i, p in enumerate(fp)])
        return FlowState.initial(mesh, spec, u, f)

    def homogeneous_u0(self) -> float:
        p = self.data["initial"]["u"]
        kind, args = parse_preset(p)
        if kind != "constant":
            raise ConfigError(f"homogeneous surfaces accept only constant initial data, got {p!r}")
        return float(args[0])


def _merge(defaults: dict, given: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _locate(text: str, path) -> str:
    """Best-effort line number of the last key in a JSON error path."""
    keys = [p for p in path if isinstance(p, str)]
    if not keys:
        return ""
    for lineno, line in enumerate(text.splitlines(), 1):
        if f'"{keys[-1]}"' in line:
            return f" (line {lineno})"
    return ""


def parse_config(text: str, base_dir: Path | str = ".", name: str | None = None) -> RunConfig:
    """Parse and validate JSON text, fill defaults, and run semantic checks."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"at {where}{_locate(text, exc.absolute_path)}: {exc.message}") from exc

    data = _merge(DEFAULTS, raw)
    if name is not None and "name" not in raw:
        data["name"] = name
    surf, bun = data["surface"], data["bundle"]
    kind = surf["kind"]
    k = bun["k"]
    if bun["c1"] is None:
        bun["c1"] = [0] * k
    if bun["h0"] is None:
        bun["h0"] = np.eye(k).ravel().tolist()
    if len(bun["h0"]) != k * k:
        raise ConfigError(f"bundle/h0 needs {k * k} row-major entries, got {len(bun['h0'])}")
    if kind == "homogeneous":
        for key in ("R_sigma", "area"):
            if key not in surf:
                raise ConfigError(f"surface/{key} is required for homogeneous surfaces")
        surf.pop("resolution", None)
    else:
        if "R_sigma" in surf or "area" in surf:
            raise ConfigError("surface/R_sigma and surface/area apply to homogeneous surfaces only")
        if surf["resolution"] is None:
            surf["resolution"] = _DEFAULT_RESOLUTION[kind]
    try:
        spec = RunConfig(data).bundle()
    except ValueError as exc:
        raise ConfigError(f"bundle: {exc}") from exc
    f_init = data["initial"]["f"]
    if isinstance(f_init, list) and len(f_init) != k:
        raise ConfigError(f"initial/f lists {len(f_init)} presets for k={k}")
    for p in [data["initial"]["u"]] + (f_init if isinstance(f_init, list) else [f_init]):
        pk, _ = parse_preset(p)
        if kind == "homogeneous" and pk != "constant":
            raise ConfigError(f"homogeneous surfaces accept only constant initial data, got {p!r}")
        if pk == "z_mode" and kind != "sphere":
            raise ConfigError("z_mode applies to sphere surfaces only")
    if data["control"]["dt_min"] >= data["control"]["dt_max"]:
        raise ConfigError("control/dt_min must be below control/dt_max")
    if "case" in data:
        _check_case_consistency(data["case"], kind, surf.get("R_sigma"), spec)
    return RunConfig(data, Path(base_dir))


def _check_case_consistency(case, kind, R_sigma, spec):
    curvature = {"torus": 0.0, "sphere": 1.0}.get(kind, R_sigma)
    want = {"chi_neg": -1, "chi_zero": 0, "chi_pos_trivial": 1, "chi_pos_nontrivial": 1}[case]
    if np.sign(curvature) != want:
        raise ConfigError(f"case {case} does not match surface {kind} (R={curvature})")
    if case == "chi_pos_trivial" and not spec.trivial or case == "chi_pos_nontrivial" and spec.trivial:
        raise ConfigError(f"case {case} does not match c1={spec.c1}")


def infer_case(cfg: RunConfig) -> str:
    if "case" in cfg.data:
        return cfg.data["case"]
    surf = cfg["surface"]
    R = {"torus": 0.0, "sphere": 1.0}.get(surf["kind"], surf.get("R_sigma"))
    if R < 0:
        return "chi_neg"
    if R == 0:
        return "chi_zero"
    return "chi_pos_trivial" if cfg.bundle().trivial else "chi_pos_nontrivial"


def load_config(path: Path | str) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent, name=path.stem)


# --- initial data ------------------------------------------------------------


def parse_preset(p) -> tuple[str, list]:
    """Number -> constant; otherwise name(args) with one numeric or path argument."""
    if isinstance(p, (int, float)) and not isinstance(p, bool):
        return "constant", [float(p)]
    m = _PRESET_RE.match(str(p))
    if not m:
        raise ConfigError(f"unrecognized field preset {p!r}")
    kind, arg = m.groups()
    if kind == "file":
        return kind, [arg.strip("'\"")]
    try:
        return kind, [float(arg)]
    except ValueError:
        raise ConfigError(f"preset {kind} needs a numeric argument, got {arg!r}") from None


def random_smooth(mesh: MeshSurface, rng: np.random.Generator, amplitude: float, modes: int = 3) -> np.ndarray:
    """Seeded low-frequency field scaled to sup norm ``amplitude``."""
    if mesh.kind == "torus":
        x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
        field = np.zeros(mesh.n_vertices)
        for p in range(modes + 1):
            for q in range(-modes, modes + 1):
                if p == 0 and q <= 0:
                    continue
                c, s = rng.normal(size=2) / (p * p + q * q)
                field += c * np.cos(p * x + q * y) + s * np.sin(p * x + q * y)
    else:
        x, y, z = mesh.unit_positions().T
        field = np.zeros(mesh.n_vertices)
        for i, j, l in itertools.product(range(modes + 1), repeat=3):
            deg = i + j + l
            if 1 <= deg <= modes:
                field += rng.normal() / deg**2 * x**i * y**j * z**l
    peak = np.max(np.abs(field))
    return amplitude * field / peak if peak > 0 else field


def field_from_preset(p, mesh: MeshSurface, rng: np.random.Generator, base_dir: Path, column: str) -> np.ndarray:
    kind, args = parse_preset(p)
    n = mesh.n_vertices
    if kind == "constant":
        return np.full(n, args[0])
    if kind == "cos_mode":
        x = mesh.vertices[:, 0] if mesh.kind == "torus" else mesh.unit_positions()[:, 0]
        return args[0] * np.cos(x) if mesh.kind == "torus" else args[0] * x
    if kind == "z_mode":
        if mesh.kind != "sphere":
            raise ConfigError("z_mode applies to sphere surfaces only")
        return args[0] * mesh.unit_positions()[:, 2]
    if kind == "random_smooth":
        return random_smooth(mesh, rng, args[0])
    return _field_from_file(base_dir / args[0], column, n)


def _field_from_file(path: Path, column: str, n: int) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read field file {path}: {exc}") from exc
    if len(rows) != n or not rows or column not in rows[0]:
        raise ConfigError(f"{path}: need column {column!r} with {n} rows")
    return np.array([float(r[column]) for r in rows])


# --- curvature-case presets --------------------------------------------

PRESETS = {
    "case1": {
        "name": "case1", "case": "chi_neg",
        "surface": {"kind": "homogeneous", "R_sigma": -1.0, "area": 2 * np.pi},
        "bundle": {"k": 1, "c1": [1], "h0": [1.0], "lambda": 1},
        "initial": {"u": -1.0},
        "control": {"dt_max": 1e-3, "t_end": 20.0, "stride": 1.0},
    },
    "case2": {
        "name": "case2", "case": "chi_zero",
        "surface": {"kind": "torus", "resolution": 64},
        "bundle": {"k": 1, "c1": [1], "h0": [1.0], "lambda": 1},
        "initial": {"u": "cos_mode(0.5)", "f": 0.0},
        "control": {"scheme": "imex", "dt_max": 0.05, "t_end": 10.0, "stride": 1.0},
    },
    "case3": {
        "name": "case3", "case": "chi_pos_trivial",
        "surface": {"kind": "sphere", "resolution": 4},
        "bundle": {"k": 1, "c1": [0], "h0": [1.0], "lambda": 0},
        "initial": {"u": "z_mode(0.2)", "f": "z_mode(0.1)"},
        "control": {"scheme": "rk4", "t_end": 2.0, "stride": 0.05},
        "outputs": {"snapshot_stride": 5},
    },
    "case4": {
        "name": "case4", "case": "chi_pos_nontrivial",
        "surface": {"kind": "sphere", "resolution": 4},
        "bundle": {"k": 1, "c1": [1], "h0": [1.0], "lambda": 0},
        "initial": {"u": "z_mode(0.3)", "f": "z_mode(0.1)"},
        "control": {"scheme": "imex", "dt_max": 0.1, "t_end": 200.0, "stride": 10.0},
    },
}


def preset_config(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return parse_config(json.dumps(PRESETS[name]))
