"""Run configuration: strict JSON with every default materialized.

A config file may set any subset of the keys below; unknown keys are
rejected loudly, and the fully resolved dictionary (defaults included) is
embedded verbatim in every run artifact so no hidden constant can affect
a result.
"""

import copy
import json

DEFAULTS = {
    "seed": 0,
    "threads": 1,
    "dataset": {
        "kind": "wave",
        "n_trajectories": 200,
        "n_frames": 80,
        # wave
        "n_grid": 64,
        "wave_speed": 1.0,
        "extent": 1.0,
        "cfl": 0.5,
        # spring mesh
        "mesh_k": 6,
        "stiffness": 1.0,
        "damping": 0.0,
        "spring_dt": 0.005,
        # vorticity
        "vort_grid": 32,
        "viscosity": 0.01,
        "vort_dt": 0.01,
        # external data (trajectory files already on disk)
        "path": "",
    },
    "interpolator": {
        "lambda_reg": 0.2,
        "l": 0.05,
        "alpha": 2.0,
        "bc": "",  # empty = the dataset's native boundary condition
        "horizon": 16,
        "batch_size": 16,
        "steps": 500,
        "lr": 2e-2,
        "momentum": 0.9,
        "hidden_dims": [128, 128],
        "time_embed_dim": 8,
        "init_seed": 0,
    },
    "forecaster": {
        "n_diffusion_steps": 4,
        "use_ukf": True,
        "batch_size": 8,
        "steps": 500,
        "lr": 2e-4,
        "momentum": 0.9,
        "hidden_dims": [128, 128],
        "time_embed_dim": 8,
        "init_seed": 1,
        "ukf": {
            "alpha_u": 0.5,
            "beta_u": 2.0,
            "kappa_u": 0.0,
            "q_scale": 1e-4,
            "r_scale": 1e-2,
            "p0_scale": 1e-2,
        },
    },
    "train": {
        "stage": "both",  # both | interpolator | forecaster
    },
    "rollout": {
        "windows": 4,
        "ensemble_size": 8,
        "input_noise_sigma": 0.05,
        "ukf_correct": True,
        "r_inflation": 10.0,
    },
    "eval": {
        "seeds": [0, 1, 2, 3, 4],
        "max_test_trajectories": 4,
        "per_timestep_curves": True,
    },
    "ablate": {
        "lambda_values": [0.1, 0.2, 0.5, 1.0],
        "bc_values": ["dirichlet", "neumann", "periodic"],
        "noise_levels": [0.0, 0.5, 1.0, 2.0, 3.0],
    },
}


class ConfigError(ValueError):
    pass


def _merge(defaults, user, path):
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        where = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a table")
            out[key] = _merge(defaults[key], value, where)
        else:
            if isinstance(defaults[key], bool) != isinstance(value, bool):
                raise ConfigError(f"config key {where!r} has the wrong type")
            out[key] = value
    return out


def resolve_config(user=None):
    """Merge a user dictionary onto the defaults, rejecting unknown keys."""
    merged = _merge(DEFAULTS, user or {}, "")
    bc = merged["interpolator"]["bc"]
    if bc not in ("", "dirichlet", "neumann", "periodic"):
        raise ConfigError(f"invalid bc value {bc!r} for key 'interpolator.bc'")
    kind = merged["dataset"]["kind"]
    if kind not in ("wave", "springmesh", "vorticity", "file"):
        raise ConfigError(f"invalid dataset kind {kind!r} for key 'dataset.kind'")
    stage = merged["train"]["stage"]
    if stage not in ("both", "interpolator", "forecaster"):
        raise ConfigError(f"invalid stage {stage!r} for key 'train.stage'")
    return merged


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(user, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return resolve_config(user)


def dump_config(config):
    return json.dumps(config, indent=2, sort_keys=True)
