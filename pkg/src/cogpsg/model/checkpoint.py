"""Checkpoints: named parameter/buffer arrays (``params.npz``) plus the model config (``config.json``)."""
import json
from pathlib import Path

import numpy as np
import torch

from cogpsg.model.architectures import ModelConfig, build_architecture

PARAMS_FILE = "params.npz"
CONFIG_FILE = "config.json"


def save_checkpoint(directory, model):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {name: t.detach().cpu().numpy() for name, t in model.state_dict().items()}
    with open(directory / PARAMS_FILE, "wb") as fh:
        np.savez(fh, **arrays)
    (directory / CONFIG_FILE).write_text(json.dumps(model.cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return directory


def load_checkpoint(directory):
    directory = Path(directory)
    cfg = ModelConfig.from_dict(json.loads((directory / CONFIG_FILE).read_text()))
    model = build_architecture(cfg)
    with np.load(directory / PARAMS_FILE) as data:
        state = {k: torch.from_numpy(data[k].copy()) for k in data.files}
    model.load_state_dict(state)
    model.eval()
    return model
