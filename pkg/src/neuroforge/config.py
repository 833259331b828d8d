"""Declarative pipeline configuration.

One TOML file drives every stage. Defaults are resolved first, then the
config file, then ``NEUROFORGE_``-prefixed environment variables (double
underscore nests sections), then ``--set section.key=value`` flags. Unknown
keys are rejected before any stage runs, and the fully resolved config is
echoed into the output directory of each command.
"""

from __future__ import annotations

import copy
import json
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError

ENV_PREFIX = "NEUROFORGE_"

DEFAULTS = {
    "seed": 0,
    "sim": {
        "n_regions": 12,
        "n_eeg_channels": 16,
        "sample_rate_eeg_hz": 250.0,
        "sample_rate_hemo_hz": 1.0,
        "band_amplitudes": {
            "delta": 0.2,
            "theta": 0.2,
            "alpha": 0.3,
            "beta": 0.25,
            "gamma": 2.0,
        },
        "hrf_peak_s": 6.0,
        "hrf_undershoot_s": 16.0,
        "hrf_length_s": 32.0,
        "noise_std": 1.0,
        "target_noise_std": 0.25,
        "eeg_noise_std": 0.5,
        "n_subjects": 3,
        "subject_variability": 0.1,
        "conditions": ["cond_a", "cond_b"],
        "n_trials_per_condition": 8,
        "trial_duration_s": 96.0,
        "warmup_s": 32.0,
        "shared_drive_fraction": 0.5,
        "modulation_timescale_s": 1.5,
        "drive_band": [13.0, 100.0],
        "hemo_modality": "bold",
        "group_effect_region": -1,  # -1 disables the planted group effect
        "group_effect_gain": 1.0,
    },
    "preprocess": {
        "eeg_low_hz": 1.0,
        "eeg_high_hz": 100.0,
        "eeg_order": 6,
        "hemo_low_hz": 0.01,
        "hemo_high_hz": 0.1,
        "hemo_order": 6,
        "zero_phase": True,
        "extra_lag_s": 0.0,
        "window_s": 0.0,  # 0 keeps whole-trial epochs
        "stride_s": 0.0,
    },
    "align": {
        "epsilon_m2": 1e-6,
        "tau_s": 6.0,
        "sigma_s": 2.0,
        "normalize_weights": True,
        "normalize_rows": True,
        "envelope_smooth_hz": 0.8,
    },
    "model": {
        "max_epochs": 150,
        "batch_size": 16,
        "learning_rate": 1e-3,
        "weight_decay": 1e-4,
        "reconstruction_weight": 1.0,
        "grad_clip": 1.0,
        "early_stop_patience": 40,
        "early_stop_min_delta": 1e-4,
        "val_fraction": 0.25,
        "divergence_factor": 10.0,
        "divergence_patience": 3,
        "n_steps": 100,
        "beta_start": 1e-4,
        "beta_end": 0.2,
        "d_model": 64,
        "n_heads": 4,
        "n_blocks": 4,
        "source_spatial_patch": 0,  # 0 -> one band-group per region
        "source_temporal_patch": 16,
        "target_spatial_patch": 1,
        "target_temporal_patch": 16,
    },
    "eval": {
        "max_lag_s": 10.0,
        "n_noise_draws": 30,
        "ssim_window": 3,
        "envelope_band": [30.0, 100.0],
    },
    "fairness": {
        "minority_class": "cond_a",
        "n_minority": 4,
        "n_majority": 8,
        "n_generated": 4,
        "k_folds": 2,
        "ridge_alpha": 1.0,
    },
}

#: Config paths whose sub-keys are free-form (validated downstream).
_OPEN_PATHS = {("sim", "band_amplitudes")}


def _merge(base, update, path=()):
    if path in _OPEN_PATHS:
        if not isinstance(update, dict):
            raise ConfigError(f"{'.'.join(path)} must be a table")
        return copy.deepcopy(update)
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in base:
            where = ".".join(path + (key,))
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{'.'.join(path + (key,))} must be a table")
            out[key] = _merge(base[key], value, path + (key,))
        else:
            out[key] = _coerce(base[key], value, path + (key,))
    return out


def _coerce(default, value, path):
    where = ".".join(path)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        if isinstance(value, float) and value != int(value):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list, got {value!r}")
        return list(value)
    raise ConfigError(f"{where}: unsupported config value {value!r}")


def _parse_scalar(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_dotted(config, dotted, value, origin):
    keys = dotted.split(".")
    node = DEFAULTS
    for key in keys[:-1]:
        if not isinstance(node, dict) or key not in node:
            raise ConfigError(f"{origin}: unknown config path {dotted!r}")
        node = node[key]
    leaf = keys[-1]
    open_parent = tuple(keys[:-1]) in _OPEN_PATHS
    if not open_parent and (not isinstance(node, dict) or leaf not in node):
        raise ConfigError(f"{origin}: unknown config path {dotted!r}")
    target = config
    for key in keys[:-1]:
        target = target.setdefault(key, {})
    if open_parent:
        target[leaf] = value
    else:
        target[leaf] = _coerce(node[leaf], value, tuple(keys))


def load_config(path=None, overrides=(), environ=None) -> dict:
    """Resolve the effective config: defaults < file < env < --set flags."""
    merged = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                user = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: invalid TOML: {e}") from e
        merged = _merge(merged, user)
    environ = os.environ if environ is None else environ
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        _apply_dotted(merged, dotted, _parse_scalar(environ[name]), f"env {name}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key.path=value, got {item!r}")
        dotted, _, raw = item.partition("=")
        _apply_dotted(merged, dotted.strip(), _parse_scalar(raw.strip()), "--set")
    return merged


# ---------------------------------------------------------------------------
# TOML echo
# ---------------------------------------------------------------------------


def _format_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value {value!r}")


def emit_toml(config, _prefix=()) -> str:
    """Deterministic TOML rendering of a nested config dict."""
    lines = []
    tables = []
    for key in sorted(config):
        value = config[key]
        if isinstance(value, dict):
            tables.append(key)
        else:
            lines.append(f"{key} = {_format_value(value)}")
    for key in tables:
        header = ".".join(_prefix + (key,))
        body = emit_toml(config[key], _prefix + (key,))
        lines.append(f"\n[{header}]")
        if body:
            lines.append(body)
    return "\n".join(lines).strip("\n") + ("\n" if lines else "")


def sim_config_from(config):
    """Build a :class:`neuroforge.simulate.SimConfig` from the sim section."""
    from .simulate import SimConfig

    sim = config["sim"]
    region = sim.get("group_effect_region", -1)
    return SimConfig(
        n_regions=sim["n_regions"],
        n_eeg_channels=sim["n_eeg_channels"],
        sample_rate_eeg_hz=sim["sample_rate_eeg_hz"],
        sample_rate_hemo_hz=sim["sample_rate_hemo_hz"],
        band_amplitudes=sim["band_amplitudes"],
        hrf_peak_s=sim["hrf_peak_s"],
        hrf_undershoot_s=sim["hrf_undershoot_s"],
        hrf_length_s=sim["hrf_length_s"],
        noise_std=sim["noise_std"],
        target_noise_std=sim["target_noise_std"],
        eeg_noise_std=sim["eeg_noise_std"],
        n_subjects=sim["n_subjects"],
        subject_variability=sim["subject_variability"],
        conditions=tuple(sim["conditions"]),
        n_trials_per_condition=sim["n_trials_per_condition"],
        trial_duration_s=sim["trial_duration_s"],
        warmup_s=sim["warmup_s"],
        shared_drive_fraction=sim["shared_drive_fraction"],
        modulation_timescale_s=sim["modulation_timescale_s"],
        drive_band=tuple(sim["drive_band"]),
        hemo_modality=sim["hemo_modality"],
        group_effect_region=None if region is None or region < 0 else int(region),
        group_effect_gain=sim["group_effect_gain"],
        seed=config["seed"],
    )


def alignment_config_from(config):
    from .align import AlignmentConfig

    a = config["align"]
    return AlignmentConfig(
        epsilon_m2=a["epsilon_m2"],
        tau_s=a["tau_s"],
        sigma_s=a["sigma_s"],
        normalize_weights=a["normalize_weights"],
        normalize_rows=a["normalize_rows"],
    )


def training_config_from(config):
    from .model.train import TrainingConfig

    m = config["model"]
    return TrainingConfig(
        max_epochs=m["max_epochs"],
        batch_size=m["batch_size"],
        learning_rate=m["learning_rate"],
        weight_decay=m["weight_decay"],
        reconstruction_weight=m["reconstruction_weight"],
        grad_clip=m["grad_clip"],
        early_stop_patience=m["early_stop_patience"],
        early_stop_min_delta=m["early_stop_min_delta"],
        val_fraction=m["val_fraction"],
        divergence_factor=m["divergence_factor"],
        divergence_patience=m["divergence_patience"],
        seed=config["seed"],
        n_steps=m["n_steps"],
        beta_start=m["beta_start"],
        beta_end=m["beta_end"],
        d_model=m["d_model"],
        n_heads=m["n_heads"],
        n_blocks=m["n_blocks"],
        source_spatial_patch=m["source_spatial_patch"],
        source_temporal_patch=m["source_temporal_patch"],
        target_spatial_patch=m["target_spatial_patch"],
        target_temporal_patch=m["target_temporal_patch"],
    )
