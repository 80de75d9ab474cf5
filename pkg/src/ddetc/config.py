"""Versioned JSON experiment configurations, presets and run manifests."""
from __future__ import annotations

import copy
import hashlib
import json
import platform
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .datarep import NoiseBound, build_theta_bar_s, build_theta_s, example1_schedule, generate_data, \
    pendulum_schedule
from .sysmodel import ConfigError, LtiSystem, TriggerConfig, example1_plant, pendulum_plant

SCHEMA = "ddetc-config/1"
MANIFEST_SCHEMA = "ddetc-manifest/1"
RNG_NAME = "numpy.random.Philox"
PRESETS = ("fig3", "fig4", "fig5", "table1", "table2", "table3", "example1-sim", "zero-state", "msi-single")
KINDS = ("simulate", "collect", "msi", "codesign", "iterative", "convex-msi")

_SECTIONS = {
    "schema": str, "kind": str, "name": str, "seed": int, "backend": str,
    "plant": (str, dict), "data": dict, "trigger": dict, "timing": dict,
    "design": dict, "simulation": dict, "msi": dict, "verify": dict,
}


def rng_for(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by a 64-bit seed."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"])
    text = resources.files("ddetc").joinpath("presets", f"{name}.json").read_text()
    return validate_config(json.loads(text))


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from exc
    return validate_config(raw)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


def _num(problems, where, v, positive=False, nonneg=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        problems.append(f"{where}: expected a finite number, got {v!r}")
        return
    if positive and not v > 0:
        problems.append(f"{where}: must be > 0, got {v}")
    if nonneg and v < 0:
        problems.append(f"{where}: must be >= 0, got {v}")


def _matrix(problems, where, v):
    try:
        a = np.atleast_2d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        problems.append(f"{where}: expected a numeric matrix")
        return None
    if a.ndim != 2 or not np.all(np.isfinite(a)):
        problems.append(f"{where}: expected a finite 2-D matrix")
        return None
    return a


def validate_config(raw) -> dict:
    """Check structure and ranges; raise ``ConfigError`` listing every field-level problem."""
    if not isinstance(raw, dict):
        raise ConfigError(["config: top level must be a JSON object"])
    cfg = copy.deepcopy(raw)
    p = []
    if cfg.get("schema") != SCHEMA:
        p.append(f"schema: expected {SCHEMA!r}, got {cfg.get('schema')!r}")
    for key in cfg:
        if key not in _SECTIONS:
            p.append(f"{key}: unknown field")
        elif not isinstance(cfg[key], _SECTIONS[key]) or isinstance(cfg[key], bool):
            p.append(f"{key}: wrong type {type(cfg[key]).__name__}")
    kind = cfg.get("kind")
    if kind not in KINDS:
        p.append(f"kind: expected one of {', '.join(KINDS)}, got {kind!r}")
    if p:
        raise ConfigError(p)
    cfg.setdefault("seed", 0)
    cfg.setdefault("backend", "auto")
    if not 0 <= cfg["seed"] < 2 ** 64:
        p.append("seed: must be in [0, 2^64)")
    if cfg["backend"] not in ("auto", "ipm", "clarabel", "barrier"):
        p.append(f"backend: unknown backend {cfg['backend']!r}")

    plant = cfg.setdefault("plant", "example1")
    if isinstance(plant, str):
        if plant not in ("example1", "pendulum"):
            p.append(f"plant: unknown plant {plant!r}")
    else:
        for k in ("A", "B"):
            if k not in plant:
                p.append(f"plant.{k}: missing")
            else:
                _matrix(p, f"plant.{k}", plant[k])
        if "Bw" in plant:
            _matrix(p, "plant.Bw", plant["Bw"])

    data = cfg.setdefault("data", {})
    data.setdefault("schedule", "example1")
    if isinstance(data["schedule"], str):
        if data["schedule"] not in ("example1", "pendulum"):
            p.append(f"data.schedule: unknown schedule {data['schedule']!r}")
    elif not isinstance(data["schedule"], list) or len(data["schedule"]) < 2:
        p.append("data.schedule: expected a name or a list of at least two sample times")
    for k in ("wbar", "rd_rho", "u_amp"):
        if k in data:
            _num(p, f"data.{k}", data[k], nonneg=(k == "wbar"), positive=(k != "wbar"))

    trig = cfg.setdefault("trigger", {})
    for k in ("sigma1", "sigma2", "theta", "lam", "eta0"):
        if k in trig:
            _num(p, f"trigger.{k}", trig[k], nonneg=True)
    timing = cfg.setdefault("timing", {})
    for k in ("h", "h_lo", "d_lo", "d_hi"):
        if k in timing:
            _num(p, f"timing.{k}", timing[k], nonneg=True)
    if "h" in timing and not timing["h"] > 0:
        p.append("timing.h: must be > 0")
    if timing.get("d_lo", 0) > timing.get("d_hi", timing.get("d_lo", 0)):
        p.append("timing.d_lo: must not exceed timing.d_hi")
    design = cfg.setdefault("design", {})
    if "theorem" in design and design["theorem"] not in (1, 2, 3, 4, 5, 6):
        p.append(f"design.theorem: expected 1..6, got {design['theorem']!r}")
    for k in ("slack", "margin"):
        if k in design:
            _num(p, f"design.{k}", design[k], positive=True)
    for k in ("K", "Omega"):
        if k in design:
            _matrix(p, f"design.{k}", design[k])
    sim = cfg.setdefault("simulation", {})
    if "t_end" in sim:
        _num(p, "simulation.t_end", sim["t_end"], positive=True)
    if "d" in sim:
        _num(p, "simulation.d", sim["d"], nonneg=True)
    if "substeps" in sim and (not isinstance(sim["substeps"], int) or sim["substeps"] < 1):
        p.append("simulation.substeps: must be a positive integer")
    msi = cfg.setdefault("msi", {})
    for k in ("wbar", "dbar"):
        if k in msi:
            if not isinstance(msi[k], list) or not msi[k]:
                p.append(f"msi.{k}: expected a non-empty list")
            else:
                for i, v in enumerate(msi[k]):
                    _num(p, f"msi.{k}[{i}]", v, nonneg=True)
    if "theorems" in msi and (not isinstance(msi["theorems"], list)
                              or any(t not in (1, 2, 3, 5, 6) for t in msi["theorems"])):
        p.append("msi.theorems: expected a list drawn from 1, 2, 3, 5, 6")
    if "modes" in msi and (not isinstance(msi["modes"], list)
                           or any(mo not in ("AB", "knownB") for mo in msi["modes"])):
        p.append("msi.modes: expected a list drawn from 'AB', 'knownB'")
    if "bracket" in msi:
        br = msi["bracket"]
        if not (isinstance(br, list) and len(br) == 2 and all(isinstance(v, (int, float)) for v in br)
                and 0 < br[0] < br[1]):
            p.append("msi.bracket: expected [a, b] with 0 < a < b")
    if "tol" in msi:
        _num(p, "msi.tol", msi["tol"], positive=True)
    cfg.setdefault("verify", {})

    if kind in ("simulate", "codesign"):
        for k in ("theta", "lam", "sigma1", "sigma2"):
            if k not in trig:
                p.append(f"trigger.{k}: required for kind {kind!r}")
        if "h" not in timing:
            p.append(f"timing.h: required for kind {kind!r}")
        if "x0" not in sim:
            p.append(f"simulation.x0: required for kind {kind!r}")
    if kind == "simulate":
        for k in ("K", "Omega"):
            if k not in design:
                p.append(f"design.{k}: required for kind 'simulate'")
    if kind in ("codesign", "collect") and "wbar" not in data:
        p.append(f"data.wbar: required for kind {kind!r}")
    if kind == "codesign" and design.get("theorem") not in (5, 6):
        p.append("design.theorem: codesign needs 5 or 6")
    if kind == "msi" and "K" not in design:
        p.append("design.K: required for kind 'msi'")
    if kind in ("msi", "iterative", "convex-msi") and "wbar" not in msi:
        p.append(f"msi.wbar: required for kind {kind!r}")
    if p:
        raise ConfigError(p)
    if kind in ("simulate", "codesign"):
        try:
            plant_from(cfg)
        except ValueError as exc:
            raise ConfigError([f"plant: {exc}"]) from exc
        n = plant_from(cfg).n
        if len(sim["x0"]) != n:
            raise ConfigError([f"simulation.x0: expected {n} entries, got {len(sim['x0'])}"])
    return cfg


# -- builders ---------------------------------------------------------------

def plant_from(cfg: dict) -> LtiSystem:
    plant = cfg.get("plant", "example1")
    if plant == "example1":
        return example1_plant()
    if plant == "pendulum":
        return pendulum_plant()
    return LtiSystem(plant["A"], plant["B"], plant.get("Bw"))


def schedule_from(cfg: dict):
    s = cfg["data"].get("schedule", "example1")
    if s == "example1":
        return example1_schedule()
    if s == "pendulum":
        return pendulum_schedule()
    return np.asarray(s, dtype=float)


@dataclass
class DataSet:
    """One data realisation and the QMIs built from it."""

    data: object
    noise: NoiseBound
    theta: object
    theta_bar: object
    wbar: float


def noise_bound(wbar: float, samples: int, n_w: int, rd_rho=None) -> NoiseBound:
    """Interval noise bound ``Qd = -I``, ``Sd = 0``, ``Rd = wbar^2 rd_rho I`` (``rd_rho`` defaults to the sample count)."""
    r = samples if rd_rho is None else rd_rho
    return NoiseBound(-np.eye(samples), np.zeros((samples, n_w)), wbar ** 2 * r * np.eye(n_w))


def dataset(cfg: dict, wbar: float, seed: int) -> DataSet:
    """Collect data with ``Philox(seed)`` and build both data QMIs."""
    sysm = plant_from(cfg)
    d = cfg["data"]
    data = generate_data(sysm, schedule_from(cfg), wbar, rng_for(seed), u_amp=d.get("u_amp", 1.0))
    nb = noise_bound(wbar, data.X.shape[1], sysm.n_w, d.get("rd_rho"))
    return DataSet(data, nb, build_theta_s(data, nb, sysm.Bw), build_theta_bar_s(data, nb, sysm.B, sysm.Bw), wbar)


def trigger_from(cfg: dict, Omega=None, d=None) -> TriggerConfig:
    t, tm, sim = cfg["trigger"], cfg["timing"], cfg["simulation"]
    dd = sim.get("d", tm.get("d_hi", 0.0)) if d is None else d
    return TriggerConfig(t["sigma1"], t["sigma2"], t["theta"], t["lam"], Omega, h=tm["h"], d=dd,
                         eta0=t.get("eta0", 0.0))


def manifest(cfg: dict, command: str, seeds, backend: str, outputs=(), extra=None) -> dict:
    import clarabel
    import scipy

    from . import __version__
    m = {
        "schema": MANIFEST_SCHEMA,
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "rng": RNG_NAME,
        "seeds": [int(s) for s in seeds],
        "backend": backend,
        "versions": {"ddetc": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "clarabel": getattr(clarabel, "__version__", "unknown")},
        "outputs": [str(o) for o in outputs],
    }
    if extra:
        m.update(extra)
    return m
