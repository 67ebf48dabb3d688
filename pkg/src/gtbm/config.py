"""Experiment configuration: one INI-style file, flat overrides, validation."""

import configparser
from pathlib import Path

import numpy as np

from .errors import ConfigError
from . import geometry

# section -> {key: default-as-string}; None marks "no default, optional"
SCHEMA = {
    "experiment": {"name": "experiment"},
    "family": {
        "name": "sphere",
        "dim": "2",
        "kappa": "2.0",
        "size": "1.0",
        "periodic": "true",
        "amplitude": "0.2",
        "mode_kx": "1",
        "mode_ky": "0",
        "snapshot": "",
    },
    "nrf": {
        "amplitude": "0.2",
        "mode_kx": "1",
        "mode_ky": "0",
        "grid_n": "64",
        "t_end": "0.4",
        "dt": "",
        "n_store": "41",
    },
    "sim": {
        "t_horizon": "0.2",
        "n_steps": "200",
        "speed": "1.0",
        "direction": "forward",
        "seed": "12345",
        "x0": "0.0 0.0",
        "chart": "0",
    },
    "estimator": {
        "n_paths": "10000",
        "chunk_size": "20000",
        "residual_threshold": "3.0",
        "ks_pvalue_min": "0.01",
        "tol_frame_mult": "50.0",
        "max_gap": "0.05",
        "min_gap_static": "0.1",
        "l1_threshold": "0.05",
        "qv_rel_tolerance": "0.05",
        "grid_n": "32",
        "n_checkpoints": "5",
        "scale_factor": "2.0",
        "direction_v": "1.0 0.0",
        "coeffs": "z:1.0",
        "test_t2": "",
        "sample_points": "0.0 0.0; 0.5 0.0; 0.95 0.2; -0.6 0.75; 0.1 -1.0",
        "expect": "forward",
        "gram_bound": "0.05",
        "halving_tol": "0.30",
    },
    "output": {"dir": "out", "csv": "true", "figures": "true", "snapshot": "nrf_snapshot.npz"},
}


class ExperimentConfig:
    """Parsed configuration with typed, field-diagnosed accessors."""

    def __init__(self, sections=None):
        self.sections = {s: dict(v) for s, v in SCHEMA.items()}
        for sec, kv in (sections or {}).items():
            self._merge(sec, kv)

    def _merge(self, section, kv):
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in kv.items():
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            self.sections[section][key] = value

    def raw(self, section, key):
        try:
            return self.sections[section][key]
        except KeyError:
            raise ConfigError(f"missing config key {section}.{key}") from None

    def get_str(self, section, key):
        return str(self.raw(section, key)).strip()

    def get_float(self, section, key):
        try:
            return float(self.raw(section, key))
        except ValueError:
            raise ConfigError(
                f"{section}.{key}: expected a number, got {self.raw(section, key)!r}"
            ) from None

    def get_int(self, section, key):
        try:
            return int(float(self.raw(section, key)))
        except ValueError:
            raise ConfigError(
                f"{section}.{key}: expected an integer, got {self.raw(section, key)!r}"
            ) from None

    def get_bool(self, section, key):
        val = self.get_str(section, key).lower()
        if val in ("true", "1", "yes", "on"):
            return True
        if val in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key}: expected a boolean, got {val!r}")

    def get_vector(self, section, key):
        try:
            return np.array([float(v) for v in self.get_str(section, key).split()])
        except ValueError:
            raise ConfigError(
                f"{section}.{key}: expected space-separated numbers"
            ) from None

    def get_points(self, section, key):
        out = []
        for part in self.get_str(section, key).split(";"):
            part = part.strip()
            if part:
                out.append(np.array([float(v) for v in part.split()]))
        if not out:
            raise ConfigError(f"{section}.{key}: no points given")
        return out

    def get_coeffs(self, section, key):
        out = {}
        for part in self.get_str(section, key).split(","):
            part = part.strip()
            if not part:
                continue
            if ":" not in part:
                raise ConfigError(f"{section}.{key}: expected name:value pairs")
            name, val = part.split(":", 1)
            out[name.strip()] = float(val)
        if not out:
            raise ConfigError(f"{section}.{key}: no coefficients given")
        return out

    def echo(self):
        return {s: dict(v) for s, v in self.sections.items()}


def load_config(path=None):
    """Read an INI config file; missing path means all defaults."""
    cfg = ExperimentConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(p)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    for section in parser.sections():
        cfg._merge(section, dict(parser.items(section)))
    return cfg


def apply_overrides(cfg, overrides):
    """Apply repeated --set section.key=value flags."""
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        cfg._merge(section.strip(), {key.strip(): value.strip()})
    return cfg


def build_family(cfg, snapshot_override=None):
    """Construct the metric family the config describes.

    A torus_nrf family without a snapshot file is backed by a fresh flow
    solve from the [nrf] section.
    """
    section = dict(cfg.sections["family"])
    name = section.get("name", "").strip().lower()
    if name == "torus_nrf":
        from . import flow_solver

        path = snapshot_override or section.get("snapshot", "").strip()
        if path:
            sol = flow_solver.load_snapshot(path)
        else:
            grid_n = cfg.get_int("nrf", "grid_n")
            u0 = flow_solver.single_mode(
                grid_n,
                cfg.get_float("nrf", "amplitude"),
                cfg.get_int("nrf", "mode_kx"),
                cfg.get_int("nrf", "mode_ky"),
            )
            dt_raw = cfg.get_str("nrf", "dt")
            dt = float(dt_raw) if dt_raw else None
            sol = flow_solver.solve_nrf(
                u0,
                t_end=cfg.get_float("nrf", "t_end"),
                dt=dt,
                n_store=cfg.get_int("nrf", "n_store"),
            )
        return geometry.TorusConformalFamily(sol, kappa=cfg.get_float("family", "kappa"))
    return geometry.family_from_config(section)


def build_simconfig(cfg, family, seed_override=None):
    from .sde import SimConfig

    seed = seed_override if seed_override is not None else cfg.get_int("sim", "seed")
    return SimConfig(
        family=family,
        t_horizon=cfg.get_float("sim", "t_horizon"),
        n_steps=cfg.get_int("sim", "n_steps"),
        speed=cfg.get_float("sim", "speed"),
        direction=cfg.get_str("sim", "direction"),
        master_seed=seed,
    )


def start_point(cfg):
    return geometry.ChartPoint(cfg.get_int("sim", "chart"), cfg.get_vector("sim", "x0"))
