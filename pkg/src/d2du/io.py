"""Scenario files, result serialisation, run manifests and seed streams."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
import zlib
from dataclasses import asdict, dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .model import DensityVector, NetworkConfig, dbm_to_watts, watts_to_dbm

# scenario key -> (config field, file units -> SI, SI -> file units)
_ident = (lambda v: v, lambda v: v)
_dbm = (dbm_to_watts, watts_to_dbm)
_mhz = (lambda v: v * 1e6, lambda v: v / 1e6)
_mbps = _mhz

SCENARIO_FIELDS = {
    "r_cell_m": ("r_cell", _ident),
    "L_d_m": ("L_d", _ident),
    "L_w_m": ("L_w", _ident),
    "P_C_dBm": ("P_C", _dbm),
    "P_D_dBm": ("P_D", _dbm),
    "P_W_dBm": ("P_W", _dbm),
    "B_l_MHz": ("B_l", _mhz),
    "B_u_MHz": ("B_u", _mhz),
    "alpha": ("alpha", _ident),
    "P_th_CU_dBm": ("P_th_CU", _dbm),
    "P_th_DU_dBm": ("P_th_DU", _dbm),
    "P_th_W_dBm": ("P_th_W", _dbm),
    "R_th_C_Mbps": ("R_th_C", _mbps),
    "R_th_D_Mbps": ("R_th_D", _mbps),
    "R_th_W_Mbps": ("R_th_W", _mbps),
    "noise_psd_W_per_Hz": ("noise_psd", _ident),
    "tau": ("tau", _ident),
}
# optional sections a scenario may carry
OPTIONAL_SECTIONS = ("densities", "budgets", "name", "description")
DENSITY_KEYS = ("lambda_C", "lambda_D", "lambda_CU", "lambda_DU", "lambda_W")
BUDGET_KEYS = ("lambda_all_C", "lambda_all_D", "lambda_W")


@dataclass(frozen=True)
class Scenario:
    cfg: NetworkConfig
    densities: DensityVector | None = None
    budgets: tuple | None = None          # (lambda_all_C, lambda_all_D, lambda_W)
    path: str | None = None
    digest: str = ""


def scenario_dict(cfg: NetworkConfig) -> dict:
    """Scenario-file representation of a configuration."""
    out = {}
    for key, (attr, (_, back)) in SCENARIO_FIELDS.items():
        v = back(getattr(cfg, attr))
        out[key] = round(v, 12) if key.endswith(("dBm", "MHz", "Mbps")) else v
    return out


def _number(key: str, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"field '{key}' must be a number, got {v!r}")
    return float(v)


def parse_scenario(data: dict, path: str | None = None) -> Scenario:
    if not isinstance(data, dict):
        raise ConfigError("scenario must be a JSON object")
    unknown = sorted(set(data) - set(SCENARIO_FIELDS) - set(OPTIONAL_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown field '{unknown[0]}' in scenario")
    kwargs = {}
    for key, (attr, (conv, _)) in SCENARIO_FIELDS.items():
        if key not in data:
            raise ConfigError(f"missing field '{key}' in scenario")
        kwargs[attr] = conv(_number(key, data[key]))
    cfg = NetworkConfig(**kwargs)
    dens = None
    if "densities" in data:
        dens = parse_densities(data["densities"])
    budgets = None
    if "budgets" in data:
        b = data["budgets"]
        if not isinstance(b, dict):
            raise ConfigError("field 'budgets' must be an object")
        missing = [k for k in BUDGET_KEYS if k not in b]
        if missing:
            raise ConfigError(f"missing field 'budgets.{missing[0]}' in scenario")
        budgets = tuple(_number(f"budgets.{k}", b[k]) for k in BUDGET_KEYS)
    digest = hashlib.sha256(json.dumps(data, sort_keys=True).encode()).hexdigest()
    return Scenario(cfg, dens, budgets, path, digest)


def load_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {p}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario {p} is not valid JSON: {exc}") from exc
    return parse_scenario(data, str(p))


def parse_densities(value) -> DensityVector:
    """Densities from a mapping or a comma list of four or five numbers
    (lambda_C, lambda_D, lambda_CU, lambda_DU[, lambda_W])."""
    if isinstance(value, dict):
        unknown = sorted(set(value) - set(DENSITY_KEYS))
        if unknown:
            raise ConfigError(f"unknown field 'densities.{unknown[0]}'")
        return DensityVector(**{k: _number(f"densities.{k}", v) for k, v in value.items()})
    parts = [s.strip() for s in str(value).split(",") if s.strip()]
    if len(parts) not in (4, 5):
        raise ConfigError(f"--densities needs 4 or 5 comma-separated values, got {len(parts)}")
    try:
        vals = [float(s) for s in parts]
    except ValueError as exc:
        raise ConfigError(f"--densities: {exc}") from exc
    return DensityVector(*vals)


def parse_number_list(value: str, what: str, n: int) -> tuple:
    parts = [s.strip() for s in value.split(",") if s.strip()]
    if len(parts) != n:
        raise ConfigError(f"{what} needs {n} comma-separated values, got {len(parts)}")
    try:
        return tuple(float(s) for s in parts)
    except ValueError as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def stream_seed(seed: int, name: str, index: int = 0) -> int:
    """64-bit seed of the named, indexed sub-stream of a run seed."""
    ss = np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()), index))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(hi) << 32 | int(lo)


def jsonable(obj):
    """Convert results to plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if hasattr(obj, "__dataclass_fields__"):
        return jsonable(asdict(obj))
    return obj


def dump_json(obj, path=None) -> str:
    text = json.dumps(jsonable(obj), indent=2, allow_nan=False)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


@dataclass
class RunManifest:
    subcommand: str
    argv: list
    scenario_path: str | None
    scenario_sha256: str
    seed: int | None
    tolerances: dict
    outputs: list = field(default_factory=list)
    tool_version: str = field(default_factory=tool_version)
    started_at: float = field(default_factory=time.time)
    wall_clock_s: float = 0.0
    exit_code: int = 0

    def finish(self, code: int) -> None:
        self.exit_code = code
        self.wall_clock_s = time.time() - self.started_at

    def write(self, out_dir) -> Path:
        p = Path(out_dir) / f"{self.subcommand}.manifest.json"
        dump_json(asdict(self), p)
        return p
