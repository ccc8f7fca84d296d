"""Run configuration: INI file with flat key=value sections, plus a stable hash."""

from __future__ import annotations

import configparser
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .data import DEFAULT_T, content_hash
from .discovery.concepts import DiscoveryConfig
from .mi import MIEstimatorConfig
from .policy import SPLITS, PolicyConfig
from .tasks import TaskSpec

SECTIONS = ("task", "normalize", "discovery", "policy", "run")
HASH_PREFIX = 12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    n_demos: int = 200
    normalize_T: int = DEFAULT_T
    discovery: DiscoveryConfig = field(default_factory=lambda: DiscoveryConfig(K=6))
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    output_dir: str = "runs"
    seed: int = 0
    eval_episodes: int = 50
    eval_split: str = "seen"

    def __post_init__(self) -> None:
        if self.n_demos < 1:
            raise ConfigError("task.n_demos must be >= 1")
        if self.normalize_T < 2:
            raise ConfigError("normalize.T must be >= 2")
        if self.discovery.delta_t >= self.normalize_T:
            raise ConfigError("discovery.delta_t must be smaller than normalize.T")
        if self.eval_episodes < 1:
            raise ConfigError("run.eval_episodes must be >= 1")
        if self.eval_split not in SPLITS:
            raise ConfigError(f"run.eval_split must be one of {SPLITS}")
        if self.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        # one seed drives every stage
        object.__setattr__(self, "task", replace(self.task, seed=self.seed))
        object.__setattr__(self, "discovery", replace(self.discovery, seed=self.seed))
        object.__setattr__(self, "policy", replace(self.policy, seed=self.seed))

    def to_dict(self) -> dict:
        """Everything that affects results; output_dir only says where they go."""
        d = asdict(self)
        d.pop("output_dir")
        return d

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return content_hash(self.canonical_json())

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.hash[:HASH_PREFIX]


def _number(section: str, key: str, raw: str, kind):
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind.__name__}") from None


def _optional(section: str, key: str, raw: str, kind):
    return None if raw.strip().lower() in ("", "auto", "none") else _number(section, key, raw, kind)


def _int_list(section: str, key: str, raw: str) -> tuple[int, ...]:
    return tuple(_number(section, key, part.strip(), int) for part in raw.split(",") if part.strip())


_TASK = {"kind": str, "horizon": int, "state_noise_sd": float, "action_noise_sd": float}
_DISCOVERY = {
    "K": int, "delta_t": int, "engine": str, "variant": str, "init": str, "max_sweeps": int, "tol": float,
    "low_confidence_nats": float, "iterations": int, "population": int, "es_sigma": float, "es_lr": float,
    "embed_dim": int, "channels": int, "hidden": int,
}
_DISCOVERY_OPTIONAL = {"lambda": ("lam", float), "nms_window": ("nms_window", int), "window": ("window", int)}
_ESTIMATOR = {"estimator": "method", "k_neighbors": "k_neighbors", "bins_per_dim": "bins_per_dim"}
_POLICY = {
    "alpha": float, "learning_rate": float, "epochs": int, "batch_size": int, "momentum": float,
    "clip_norm": float, "smooth_eps": float,
}
_RUN = {"output_dir": str, "seed": int, "eval_episodes": int, "eval_split": str}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from INI text; unknown sections or keys are errors.

    `overrides` maps "section.key" to raw strings and is applied after the file.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"unreadable config: {err}") from None
    for name, value in (overrides or {}).items():
        section, _, key = name.partition(".")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")

    def items(section: str, allowed) -> dict[str, str]:
        if not cp.has_section(section):
            return {}
        got = dict(cp.items(section))
        bad = set(got) - set(allowed)
        if bad:
            raise ConfigError(f"[{section}] unknown key(s): {', '.join(sorted(bad))}")
        return got

    task_raw = items("task", list(_TASK) + ["n_demos"])
    norm_raw = items("normalize", ["T"])
    disc_raw = items("discovery", list(_DISCOVERY) + list(_DISCOVERY_OPTIONAL) + list(_ESTIMATOR))
    pol_raw = items("policy", list(_POLICY) + ["hidden_sizes"])
    run_raw = items("run", list(_RUN))

    try:
        task = TaskSpec(**{k: _number("task", k, v, _TASK[k]) for k, v in task_raw.items() if k in _TASK})
        est_kwargs = {}
        for key, attr in _ESTIMATOR.items():
            if key in disc_raw:
                est_kwargs[attr] = disc_raw[key] if attr == "method" else _number("discovery", key, disc_raw[key], int)
        disc_kwargs = {k: _number("discovery", k, v, _DISCOVERY[k]) for k, v in disc_raw.items() if k in _DISCOVERY}
        for key, (attr, kind) in _DISCOVERY_OPTIONAL.items():
            if key in disc_raw:
                disc_kwargs[attr] = _optional("discovery", key, disc_raw[key], kind)
        disc_kwargs.setdefault("K", 6)
        discovery = DiscoveryConfig(estimator=MIEstimatorConfig(**est_kwargs), **disc_kwargs)
        pol_kwargs = {k: _number("policy", k, v, _POLICY[k]) for k, v in pol_raw.items() if k in _POLICY}
        if "hidden_sizes" in pol_raw:
            pol_kwargs["hidden_sizes"] = _int_list("policy", "hidden_sizes", pol_raw["hidden_sizes"])
        policy = PolicyConfig(**pol_kwargs)
        run_kwargs = {k: _number("run", k, v, _RUN[k]) for k, v in run_raw.items()}
        if "n_demos" in task_raw:
            run_kwargs["n_demos"] = _number("task", "n_demos", task_raw["n_demos"], int)
        if "T" in norm_raw:
            run_kwargs["normalize_T"] = _number("normalize", "T", norm_raw["T"], int)
        return RunConfig(task=task, discovery=discovery, policy=policy, **run_kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from None


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    return parse_config(text, overrides)


def dumps_config(cfg: RunConfig, with_output_dir: bool = True) -> str:
    """INI text that parses back to an equal RunConfig (same hash without output_dir)."""
    t, d, p = cfg.task, cfg.discovery, cfg.policy
    opt = lambda v: "auto" if v is None else repr(v)  # noqa: E731
    lines = [
        "[task]",
        f"kind = {t.kind}",
        f"horizon = {t.horizon}",
        f"state_noise_sd = {t.state_noise_sd!r}",
        f"action_noise_sd = {t.action_noise_sd!r}",
        f"n_demos = {cfg.n_demos}",
        "",
        "[normalize]",
        f"T = {cfg.normalize_T}",
        "",
        "[discovery]",
    ]
    for key, kind in _DISCOVERY.items():
        value = getattr(d, key)
        lines.append(f"{key} = {value if kind is str else repr(value)}")
    lines += [
        f"lambda = {opt(d.lam)}",
        f"nms_window = {opt(d.nms_window)}",
        f"window = {opt(d.window)}",
        f"estimator = {d.estimator.method}",
        f"k_neighbors = {d.estimator.k_neighbors}",
        f"bins_per_dim = {d.estimator.bins_per_dim}",
        "",
        "[policy]",
    ]
    for key in _POLICY:
        lines.append(f"{key} = {getattr(p, key)!r}")
    lines += [
        f"hidden_sizes = {','.join(map(str, p.hidden_sizes))}",
        "",
        "[run]",
        *([f"output_dir = {cfg.output_dir}"] if with_output_dir else []),
        f"seed = {cfg.seed}",
        f"eval_episodes = {cfg.eval_episodes}",
        f"eval_split = {cfg.eval_split}",
    ]
    return "\n".join(lines) + "\n"
