"""Run configuration: YAML in, schema-checked dict out.

The schema is the DEFAULTS tree itself: every key a config file may set
exists there with a value of the right type. Unknown keys are rejected with
their dotted path, partial configs inherit the rest from the defaults, and
the fully resolved config is written next to the run's outputs so any
artifact can be reproduced from the file sitting beside it.
"""

import copy
import os

import yaml

from .errors import ConfigError

DEFAULTS = {
    "seed": 0,
    "out_dir": "runs/out",
    "deterministic": False,
    "threads": 0,  # 0 = leave BLAS threading alone
    "scene": {
        "kind": "quad",
        "uv_res": 128,
        "view_res": 96,
        "n_views": 6,
        "rig_radius": 2.5,
        "rig_elevation_deg": 20.0,
        "rig_fov_deg": 55.0,
    },
    "encoder": {
        "bands": 10,
    },
    "attention": {
        "widths": [64, 128],
        "heads": 2,
    },
    "texture": {
        "kind": "gradient3d",
        "mode": "backproject",  # backproject | oracle-attn | model
        "tau": 1e-4,
        "ckpt": "",
        "fill_holes": True,
    },
    "trainer": {
        "lr": 1e-3,
        "steps": 2000,
        "batch": 2,
        "drop_view_p": 0.1,
        "shuffle_views": True,
        "corruption_strengths": [0.1, 0.25, 0.5],
        "corruption_p": 0.5,
        "ablation": "full",
        "fresh_textures": True,
        "train_variants": 3,
        "eval_variants": 1,
        "checkpoint_every": 500,
        "log_every": 10,
        "suite": [list(pair) for pair in (
            ("quad", "checker"),
            ("quad", "gradient3d"),
            ("quad", "sinmix"),
            ("cube6chart", "gradient3d"),
            ("cube6chart", "sinmix"),
            ("cube6chart", "stripes"),
            ("uvsphere", "gradient3d"),
            ("uvsphere", "sinmix"),
            ("uvsphere", "stripes"),
            ("two_plane_occluder", "gradient3d"),
            ("two_plane_occluder", "sinmix"),
            ("two_plane_occluder", "stripes"),
        )],
    },
}


def _type_ok(default, value):
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, str):
        return isinstance(value, str)
    if isinstance(default, list):
        return isinstance(value, list)
    return False


def _merge(base, override, path=""):
    out = {}
    for key, dval in base.items():
        here = f"{path}.{key}" if path else key
        if key not in override:
            out[key] = copy.deepcopy(dval)
        elif isinstance(dval, dict):
            oval = override[key]
            if not isinstance(oval, dict):
                raise ConfigError(f"{here}: expected a mapping, got {type(oval).__name__}")
            out[key] = _merge(dval, oval, here)
        else:
            oval = override[key]
            if not _type_ok(dval, oval):
                raise ConfigError(
                    f"{here}: expected {type(dval).__name__}, got {type(oval).__name__}"
                )
            out[key] = float(oval) if isinstance(dval, float) else copy.deepcopy(oval)
    for key in override:
        if key not in base:
            here = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key: {here}")
    return out


def load_config(path=None, overrides=None):
    """Read a YAML config (or none) and overlay CLI overrides; full validation."""
    raw = {}
    if path is not None:
        try:
            with open(path) as fp:
                raw = yaml.safe_load(fp)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}")
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise ConfigError(f"unknown config key: {key}")
            node = node[part]
        if not isinstance(node, dict) or parts[-1] not in node:
            raise ConfigError(f"unknown config key: {key}")
        node[parts[-1]] = val
    validate(cfg)
    return cfg


def validate(cfg):
    sc = cfg["scene"]
    if sc["uv_res"] % 16 or sc["view_res"] % 16:
        raise ConfigError("scene.uv_res and scene.view_res must be multiples of 16")
    if sc["n_views"] < 1:
        raise ConfigError("scene.n_views must be >= 1")
    if cfg["texture"]["mode"] not in ("backproject", "oracle-attn", "model"):
        raise ConfigError(f"texture.mode {cfg['texture']['mode']!r} unknown")
    if len(cfg["attention"]["widths"]) != 2:
        raise ConfigError("attention.widths must list exactly two widths")
    tr = cfg["trainer"]
    if not 0.0 <= tr["drop_view_p"] < 1.0:
        raise ConfigError("trainer.drop_view_p must be in [0,1)")
    for pair in tr["suite"]:
        if not (isinstance(pair, list) and len(pair) == 2):
            raise ConfigError("trainer.suite entries must be [scene_kind, texture_kind] pairs")
    return cfg


def write_resolved(cfg, out_dir):
    from . import fileio as F

    text = yaml.safe_dump(cfg, sort_keys=True)
    F.atomic_write_bytes(os.path.join(out_dir, "config.resolved.yaml"), text.encode())


def train_config(cfg):
    """Project the nested run config onto the trainer's flat config."""
    from .trainer import TrainConfig

    tr = cfg["trainer"]
    return TrainConfig(
        lr=tr["lr"], steps=tr["steps"], batch=tr["batch"], seed=cfg["seed"],
        drop_view_p=tr["drop_view_p"], shuffle_views=tr["shuffle_views"],
        corruption_strengths=tuple(tr["corruption_strengths"]),
        corruption_p=tr["corruption_p"], ablation=tr["ablation"],
        fresh_textures=tr["fresh_textures"],
        widths=tuple(cfg["attention"]["widths"]), heads=cfg["attention"]["heads"],
        bands=cfg["encoder"]["bands"],
        uv_res=cfg["scene"]["uv_res"], view_res=cfg["scene"]["view_res"],
        n_views=cfg["scene"]["n_views"], train_variants=tr["train_variants"],
        eval_variants=tr["eval_variants"], checkpoint_every=tr["checkpoint_every"],
        log_every=tr["log_every"],
    )
