"""Run configuration loaded from a flat YAML mapping.

Keys (default in brackets):

    seed [0]                          run seed; `seeds` [[0, 1, 2]] for compare
    data_seed [0]                     seed of the synthetic world
    strategy [curriculum]             close_only | open_only | joint | curriculum
    stage1_steps [300]                close-ended steps, or steps of single-stage strategies
    stage2_steps [300]                open-ended steps of the curriculum
    ref_reset_on_transition [true]
    reset_optimizer_on_transition [false]
    same_fraction_mixing [false]      weight joint gradients by their own batch share
    group_size [8]  batch_size [16]  kl_beta [0.01]  clip_eps [0.2]
    advantage_eps [1e-8]  temperature [1.0]  max_completion_len [12]
    lambda [0.7]  gamma [0.8]  semantic_backend [trigram]
    lr [1e-2]  warmup_steps [150]  warmup_lr [1e-2]
    context_window [24]  embedding_dim [16]  hidden_dim [128]
    eval_every [0]  log_every [10]
    n_close [2500]  n_open [2500]  n_options [4]  test_fraction [0.2]  noise_rate [0.3]
    train_data, test_data [unset]     JSONL files; the synthetic world is used when unset
    refine [false]                    refine open-ended training pairs before training
    drop_policy [remove]              keep | remove
    auditor [mock]                    mock | http
    auditor_endpoint, auditor_model [unset]  fall back to RFTPY_AUDITOR_* variables
    auditor_timeout [60]  auditor_max_concurrency [4]  auditor_max_attempts [3]
    compare_strategies [[close_only, open_only, joint, curriculum]]
    compare_refinement [[false, true]]
    out_dir [runs]  metrics [<out_dir>/metrics.jsonl]  checkpoint [<out_dir>/checkpoint.npz]
"""

from collections.abc import Mapping
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

import yaml

from rftpy.enums import DropPolicy, Strategy
from rftpy.exceptions import ConfigurationError, RftError
from rftpy.metrics import available_semantic_backends
from rftpy.models import GrpoConfig, RewardConfig, Schedule, TrainSettings, WorldSpec

# YAML key -> field name where they differ
_ALIASES = {"lambda": "lam"}
_AUDITOR_KINDS = ("mock", "http")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2)
    data_seed: int = 0

    strategy: Strategy = Strategy.CURRICULUM
    stage1_steps: int = 300
    stage2_steps: int = 300
    ref_reset_on_transition: bool = True
    reset_optimizer_on_transition: bool = False
    same_fraction_mixing: bool = False

    group_size: int = 8
    batch_size: int = 16
    kl_beta: float = 0.01
    clip_eps: float = 0.2
    advantage_eps: float = 1e-8
    temperature: float = 1.0
    max_completion_len: int = 12
    lam: float = 0.7
    gamma: float = 0.8
    semantic_backend: str = "trigram"

    lr: float = 1e-2
    warmup_steps: int = 150
    warmup_lr: float = 1e-2
    context_window: int = 24
    embedding_dim: int = 16
    hidden_dim: int = 128
    eval_every: int = 0
    log_every: int = 10

    n_close: int = 2500
    n_open: int = 2500
    n_options: int = 4
    test_fraction: float = 0.2
    noise_rate: float = 0.3

    train_data: Path | None = None
    test_data: Path | None = None
    refine: bool = False
    drop_policy: DropPolicy = DropPolicy.REMOVE
    auditor: str = "mock"
    auditor_endpoint: str | None = None
    auditor_model: str | None = None
    auditor_timeout: float = 60.0
    auditor_max_concurrency: int = 4
    auditor_max_attempts: int = 3

    compare_strategies: tuple[Strategy, ...] = tuple(Strategy)
    compare_refinement: tuple[bool, ...] = (False, True)

    out_dir: Path = Path("runs")
    metrics: Path | None = None
    checkpoint: Path | None = None

    def __post_init__(self) -> None:
        # the component records validate their own fields
        _ = (self.settings, self.schedule, self.world)
        if self.strategy is Strategy.CURRICULUM:
            for key in ("stage1_steps", "stage2_steps"):
                if getattr(self, key) < 1:
                    raise ConfigurationError(key, "curriculum stages need at least one step")
        if self.semantic_backend not in available_semantic_backends():
            raise ConfigurationError(
                "semantic_backend",
                f"{self.semantic_backend!r} is not one of {available_semantic_backends()}",
            )
        for key in ("context_window", "embedding_dim", "hidden_dim"):
            if getattr(self, key) < 1:
                raise ConfigurationError(key, "must be at least 1")
        if (self.train_data is None) != (self.test_data is None):
            raise ConfigurationError("train_data", "train_data and test_data are set together")
        for key in ("train_data", "test_data"):
            path = getattr(self, key)
            if path is not None and not path.is_file():
                raise ConfigurationError(key, f"{path} does not exist")
        if self.auditor not in _AUDITOR_KINDS:
            raise ConfigurationError("auditor", f"{self.auditor!r} is not one of {_AUDITOR_KINDS}")
        if not self.seeds:
            raise ConfigurationError("seeds", "needs at least one seed")
        if not self.compare_strategies:
            raise ConfigurationError("compare_strategies", "needs at least one strategy")
        if not self.compare_refinement:
            raise ConfigurationError("compare_refinement", "needs at least one value")

    @property
    def grpo(self) -> GrpoConfig:
        return GrpoConfig(
            group_size=self.group_size,
            clip_eps=self.clip_eps,
            kl_beta=self.kl_beta,
            advantage_eps=self.advantage_eps,
            temperature=self.temperature,
            max_completion_len=self.max_completion_len,
        )

    @property
    def reward(self) -> RewardConfig:
        return RewardConfig(lam=self.lam, gamma=self.gamma, semantic_backend=self.semantic_backend)

    @property
    def schedule(self) -> Schedule:
        return Schedule(
            strategy=self.strategy,
            stage1_steps=self.stage1_steps,
            stage2_steps=self.stage2_steps,
            ref_reset_on_transition=self.ref_reset_on_transition,
            reset_optimizer_on_transition=self.reset_optimizer_on_transition,
            same_fraction_mixing=self.same_fraction_mixing,
        )

    @property
    def world(self) -> WorldSpec:
        return WorldSpec(
            n_close=self.n_close,
            n_open=self.n_open,
            n_options=self.n_options,
            test_fraction=self.test_fraction,
            noise_rate=self.noise_rate,
            seed=self.data_seed,
        )

    @property
    def settings(self) -> TrainSettings:
        return TrainSettings(
            grpo=self.grpo,
            reward=self.reward,
            batch_size=self.batch_size,
            lr=self.lr,
            warmup_steps=self.warmup_steps,
            warmup_lr=self.warmup_lr,
            eval_every=self.eval_every,
            log_every=self.log_every,
        )

    @property
    def metrics_path(self) -> Path:
        return self.metrics or self.out_dir / "metrics.jsonl"

    @property
    def checkpoint_path(self) -> Path:
        return self.checkpoint or self.out_dir / "checkpoint.npz"


def _config_keys() -> set[str]:
    names = {f.name for f in fields(RunConfig) if f.init}
    return (names - set(_ALIASES.values())) | set(_ALIASES)


def _coerce(name: str, value: Any) -> Any:
    if name == "strategy":
        return Strategy(value)
    if name == "drop_policy":
        return DropPolicy(value)
    if name == "seeds":
        return tuple(int(s) for s in value)
    if name == "compare_strategies":
        return tuple(Strategy(s) for s in value)
    if name == "compare_refinement":
        if not all(isinstance(v, bool) for v in value):
            raise TypeError("expected a list of booleans")
        return tuple(value)
    if name in ("train_data", "test_data", "metrics", "checkpoint"):
        return None if value is None else Path(value)
    if name == "out_dir":
        return Path(value)

    default = getattr(RunConfig, name)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            return float(value)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"expected a number, got {value!r}")
        return float(value)
    if value is not None and not isinstance(value, str):
        raise TypeError(f"expected a string, got {value!r}")
    return value


def config_from_mapping(data: Mapping[str, Any]) -> RunConfig:
    """Builds a RunConfig from flat config keys.

    Raises:
        ConfigurationError: naming the first unknown or invalid key.
    """

    known = _config_keys()
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigurationError(str(key), "unknown configuration key")
        name = _ALIASES.get(key, key)
        try:
            kwargs[name] = _coerce(name, value)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(str(key), str(e)) from e
    try:
        return RunConfig(**kwargs)
    except RftError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigurationError("config", str(e)) from e


def load_config(path: Path | None, **overrides: Any) -> RunConfig:
    """Reads the YAML config at `path` and applies non-None overrides.

    Without a path the defaults are used.

    Raises:
        ConfigurationError: if the file is missing, not a mapping, or holds
            unknown or invalid keys.
    """

    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError("config", f"{path} does not exist")
        with open(path, encoding="utf-8") as f:
            try:
                loaded = yaml.safe_load(f)
            except yaml.YAMLError as e:
                raise ConfigurationError("config", f"{path} is not valid YAML: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError("config", f"{path} must hold a mapping of keys")
        data.update(loaded)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return config_from_mapping(data)


def with_overrides(config: RunConfig, **changes: Any) -> RunConfig:
    """Copy of `config` with some fields replaced, validated again."""

    return replace(config, **changes)
