"""JSON pipeline config: schema validation, defaults and dataset assembly."""
import copy
import json
from importlib import resources

import jsonschema
import numpy as np

from .errors import InvalidConfig
from .losses import TverskyParams
from .optim import LrSchedule
from .preprocess import SliceBatch, clip_hu, compute_stats, extract_full_slices, extract_training_crops
from .train import AugmentConfig, TrainConfig, network_config_from_dict

DEFAULTS = {
    "batch_size": 5,
    "seed": 0,
    "augmentation": {"enabled": False, "max_rotation_deg": 10.0, "max_translate_frac": 0.1,
                     "zoom_range": [0.9, 1.1]},
    "clip": {"lo": -100.0, "hi": 400.0},
    "crop": {"h": 224, "w": 224, "margin": 16},
    "slice_step": 1,
    "slice_size": None,
    "val_fraction": 0.2,
    "postprocess": {"threshold": 0.5, "dilate": 0, "close": 0, "connectivity": 26},
}
STAGE_AXIS = {"liver": "axial", "lesion": "coronal"}


def schema():
    text = resources.files("litseg").joinpath("config_schema.json").read_text()
    return json.loads(text)


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def validate(cfg):
    """Raise :class:`InvalidConfig` naming the offending key path."""
    try:
        jsonschema.validate(cfg, schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InvalidConfig(f"config error at {where}: {exc.message}") from None


def load_config(path=None, data=None, overrides=None):
    """Read, validate and fill defaults; ``overrides`` (nested dict) wins over the file."""
    if data is None:
        try:
            with open(path) as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if overrides:
        data = _merge(data, overrides)
    validate(data)
    cfg = _merge(DEFAULTS, data)
    cfg.setdefault("axis", STAGE_AXIS[cfg["stage"]])
    return cfg


def train_config(cfg, checkpoint_dir=None):
    opt = cfg["optimizer"]
    loss = dict(cfg["loss"])
    name = loss.pop("name")
    if name == "tversky":
        TverskyParams(**loss)
    aug = dict(cfg["augmentation"])
    aug["zoom_range"] = tuple(aug["zoom_range"])
    return TrainConfig(
        network=network_config_from_dict(cfg["network"]),
        loss=name,
        loss_params=loss,
        schedule=LrSchedule(opt["lr"], opt["halve_every"]),
        epochs=cfg["epochs"],
        batch_size=cfg["batch_size"],
        augmentation=AugmentConfig(**aug),
        seed=cfg["seed"],
        beta1=opt.get("beta1", 0.9),
        beta2=opt.get("beta2", 0.999),
        eps=opt.get("eps", 1e-8),
        checkpoint_dir=checkpoint_dir,
    )


def split_cases(n, val_fraction, seed):
    """Seeded (train_idx, val_idx) split with at least one case on each side."""
    if n < 2:
        raise InvalidConfig("need at least two cases to split into train and validation")
    order = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(round(n * val_fraction))), n - 1)
    return sorted(order[n_val:].tolist()), sorted(order[:n_val].tolist())


def stage_samples(cfg, cases, stats, ids, seed_base=0):
    """Slice samples for one stage: whole slices (liver) or crops around the liver (lesion)."""
    clip = (cfg["clip"]["lo"], cfg["clip"]["hi"])
    batches = []
    for k, (image, liver, lesion) in zip(ids, cases):
        if cfg["stage"] == "liver":
            batches.append(extract_full_slices(
                image, liver, stats, cfg["axis"], size=cfg["slice_size"], slice_step=cfg["slice_step"],
                volume_id=k, clip=clip, slice_offset=k))
        else:
            batches.append(extract_training_crops(
                image, liver, lesion, stats, cfg["axis"], (cfg["crop"]["h"], cfg["crop"]["w"]),
                cfg["crop"]["margin"], rng_seed=seed_base + k, volume_id=k, clip=clip,
                slice_step=cfg["slice_step"]))
    return SliceBatch.concat(batches)


def stats_for(cfg, cases):
    clip = (cfg["clip"]["lo"], cfg["clip"]["hi"])
    return compute_stats(clip_hu(c[0], *clip) for c in cases)


def stage_meta(cfg, stats):
    """What inference needs to reproduce the training-time preprocessing."""
    return {
        "stage": cfg["stage"],
        "stats": {"mean": stats.mean, "std": stats.std},
        "clip": [cfg["clip"]["lo"], cfg["clip"]["hi"]],
        "axis": cfg["axis"],
        "crop": [cfg["crop"]["h"], cfg["crop"]["w"]],
        "margin": cfg["crop"]["margin"],
        "slice_size": cfg["slice_size"],
    }
