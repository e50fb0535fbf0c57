from pathlib import Path

import numpy as np
import pytest

from rftpy.checkpoint import FORMAT_VERSION, load_checkpoint, save_checkpoint
from rftpy.exceptions import ConfigurationError
from rftpy.optim import apply_update, init_adam_state
from rftpy.policy import PARAM_NAMES, PolicyParams, logprobs, params_equal, snapshot

PROMPT = [7, 8, 2]
COMPLETION = [9, 10, 3, 8, 1]


def test_round_trip_without_optimizer(tmp_path: Path, tiny_params: PolicyParams) -> None:
    path = tmp_path / "policy.npz"
    save_checkpoint(path, snapshot(tiny_params), None)

    loaded, opt_state = load_checkpoint(path)

    assert opt_state is None
    assert loaded.vocab == tiny_params.vocab
    assert params_equal(loaded, tiny_params)
    assert logprobs(loaded, PROMPT, COMPLETION) == logprobs(tiny_params, PROMPT, COMPLETION)


def test_round_trip_with_optimizer(tmp_path: Path, tiny_params: PolicyParams) -> None:
    rng = np.random.default_rng(2)
    grad = {name: rng.normal(size=arr.shape) for name, arr in tiny_params.arrays().items()}
    params, state = apply_update(tiny_params, grad, init_adam_state(tiny_params), lr=0.01)
    path = tmp_path / "nested" / "policy.npz"
    path.parent.mkdir()

    save_checkpoint(path, params, state)
    loaded, loaded_state = load_checkpoint(path)

    assert params_equal(loaded, params)
    assert loaded_state is not None
    assert loaded_state.step == 1
    for name in PARAM_NAMES:
        np.testing.assert_array_equal(loaded_state.m[name], state.m[name])
        np.testing.assert_array_equal(loaded_state.v[name], state.v[name])


def test_unsupported_version(tmp_path: Path, tiny_params: PolicyParams) -> None:
    path = tmp_path / "policy.npz"
    save_checkpoint(path, tiny_params, None)
    with np.load(path) as data:
        payload = dict(data)
    payload["format_version"] = np.array(FORMAT_VERSION + 1)
    np.savez(path, **payload)

    with pytest.raises(ConfigurationError) as exc_info:
        load_checkpoint(path)
    assert exc_info.value.key == "checkpoint"
