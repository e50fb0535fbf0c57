from pathlib import Path

import numpy as np

from rftpy.exceptions import ConfigurationError
from rftpy.optim import AdamState
from rftpy.policy import PARAM_NAMES, PolicyParams
from rftpy.runio import atomic_writer
from rftpy.vocab import Vocab

FORMAT_VERSION = 1


def save_checkpoint(path: Path, params: PolicyParams, opt_state: AdamState | None) -> None:
    """Writes vocabulary, parameters and optimizer state to an `.npz` file atomically."""

    payload: dict[str, np.ndarray] = {
        "format_version": np.array(FORMAT_VERSION),
        "vocab": np.array(params.vocab.tokens),
        "context_window": np.array(params.context_window),
    }
    for name, arr in params.arrays().items():
        payload[f"param.{name}"] = arr
    if opt_state is not None:
        payload["adam.step"] = np.array(opt_state.step)
        for name in PARAM_NAMES:
            payload[f"adam.m.{name}"] = opt_state.m[name]
            payload[f"adam.v.{name}"] = opt_state.v[name]

    with atomic_writer(path, binary=True) as f:
        np.savez(f, **payload)


def load_checkpoint(path: Path) -> tuple[PolicyParams, AdamState | None]:
    """Reads a checkpoint written by :func:`save_checkpoint`.

    Raises:
        ConfigurationError: if the file has an unsupported format version.
    """

    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != FORMAT_VERSION:
            raise ConfigurationError(
                "checkpoint", f"unsupported format version {version} in {path}"
            )
        params = PolicyParams(
            vocab=Vocab(tokens=tuple(str(t) for t in data["vocab"])),
            context_window=int(data["context_window"]),
            **{name: data[f"param.{name}"].copy() for name in PARAM_NAMES},
        )
        opt_state = None
        if "adam.step" in data.files:
            opt_state = AdamState(
                step=int(data["adam.step"]),
                m={name: data[f"adam.m.{name}"].copy() for name in PARAM_NAMES},
                v={name: data[f"adam.v.{name}"].copy() for name in PARAM_NAMES},
            )
    return params, opt_state
