"""Run configuration: flat ``section.key = value`` text with validation.

Lines are ``key = value``; ``#`` starts a comment. Every key belongs to one
of the sections below and unknown keys are rejected. Omitted keys take the
defaults, which reproduce the published hyperparameter table (network sizes
included, so real runs normally override the ``*.hidden_units`` keys).
"""

from __future__ import annotations

import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .agent import MODES, AgentConfig, Schedule
from .envs import Env, make_env
from .latent_model import ModelConfig
from .nnet import ACTIVATIONS


class ConfigError(ValueError):
    pass


@dataclass
class EnvSection:
    name: str = "deepsea"
    size: int = 8
    max_steps: int = 0  # 0 keeps the environment's own limit
    layout: str = ""  # grid rows separated by '/', empty for the built-in layout


@dataclass
class RunSection:
    steps: int = 1_000_000
    seeds: tuple = (0, 1, 2)
    mode: str = "psdrl"
    eval_interval: int = 0  # 0 -> steps / 100
    eval_episodes: int = 3
    out_dir: str = "runs"
    checkpoint_every: int = 0


@dataclass
class PosteriorSection:
    prior_var_latent: float = 1e3
    prior_var_reward: float = 1e3
    noise_var: float = 1.0


@dataclass
class AutoencoderSection:
    encoder_layers: int = 4
    decoder_layers: int = 4
    activation: str = "relu"
    encoded_dims: int = 1536
    hidden_units: int = 1536
    latent_activation: str = "tanh"
    learning_rate: float = 1e-4
    training_iterations: int = 3


@dataclass
class ForwardSection:
    layers: int = 5
    activation: str = "tanh"
    hidden_units: int = 2292
    learning_rate: float = 1e-4
    training_iterations: int = 3
    recurrent_hidden_units: int = 756
    window_length: int = 4


@dataclass
class TerminationSection:
    layers: int = 4
    activation: str = "tanh"
    hidden_units: int = 1536
    learning_rate: float = 1e-4
    training_iterations: int = 3
    window_length: int = 4


@dataclass
class ValueSection:
    layers: int = 5
    activation: str = "tanh"
    hidden_units: int = 2292
    learning_rate: float = 1e-4
    training_iterations: int = 3
    target_update_frequency: int = 4
    discount: float = 0.99
    window_length: int = 1


@dataclass
class ReplaySection:
    batch_size: int = 125
    sequence_length: int = 250
    capacity: int = 100_000


@dataclass
class InteractionSection:
    update_frequency: int = 1000
    update_frequency_early: int = 250
    early_steps: int = 0  # 0 -> 10% of run.steps
    policy_noise: float = 1e-3


@dataclass
class AblationSection:
    eps_final: float = 0.01
    exploit_fraction: float = 0.05
    explore_fraction: float = 1.0
    fresh_value_multiplier: int = 4


@dataclass
class RunConfig:
    env: EnvSection = field(default_factory=EnvSection)
    run: RunSection = field(default_factory=RunSection)
    posterior: PosteriorSection = field(default_factory=PosteriorSection)
    autoencoder: AutoencoderSection = field(default_factory=AutoencoderSection)
    forward: ForwardSection = field(default_factory=ForwardSection)
    termination: TerminationSection = field(default_factory=TerminationSection)
    value: ValueSection = field(default_factory=ValueSection)
    replay: ReplaySection = field(default_factory=ReplaySection)
    interaction: InteractionSection = field(default_factory=InteractionSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    # derived quantities -----------------------------------------------------
    @property
    def eval_interval(self) -> int:
        return self.run.eval_interval or max(self.run.steps // 100, 1)

    @property
    def early_steps(self) -> int:
        return self.interaction.early_steps or max(self.run.steps // 10, 1)

    def make_env(self) -> Env:
        params = {}
        name = self.env.name.lower()
        if name in ("deepsea", "deepseachain", "deep_sea"):
            params["size"] = self.env.size
        else:
            if self.env.max_steps:
                params["max_steps"] = self.env.max_steps
            if self.env.layout:
                params["layout"] = tuple(self.env.layout.split("/"))
        return make_env(name, **params)

    def model_config(self, env: Env) -> ModelConfig:
        a, f, t, v = self.autoencoder, self.forward, self.termination, self.value
        return ModelConfig(
            obs_dim=env.spec.obs_dim,
            n_actions=env.spec.n_actions,
            latent_dim=a.encoded_dims,
            encoder_layers=a.encoder_layers,
            decoder_layers=a.decoder_layers,
            ae_hidden=a.hidden_units,
            ae_activation=a.activation,
            latent_activation=a.latent_activation,
            gru_hidden=f.recurrent_hidden_units,
            fw_layers=f.layers,
            fw_hidden=f.hidden_units,
            fw_activation=f.activation,
            term_layers=t.layers,
            term_hidden=t.hidden_units,
            term_activation=t.activation,
            value_layers=v.layers,
            value_hidden=v.hidden_units,
            value_activation=v.activation,
        )

    def agent_config(self) -> AgentConfig:
        mode = self.run.mode
        fraction = self.ablation.explore_fraction if mode == "eps-explore" else self.ablation.exploit_fraction
        return AgentConfig(
            mode=mode,
            gamma=self.value.discount,
            policy_noise=self.interaction.policy_noise,
            batch_size=self.replay.batch_size,
            seq_len=self.replay.sequence_length,
            capacity=self.replay.capacity,
            ae_iterations=self.autoencoder.training_iterations,
            fw_iterations=self.forward.training_iterations,
            term_iterations=self.termination.training_iterations,
            value_iterations=self.value.training_iterations,
            fw_horizon=self.forward.window_length,
            term_horizon=self.termination.window_length,
            value_horizon=self.value.window_length,
            lr_ae=self.autoencoder.learning_rate,
            lr_fw=self.forward.learning_rate,
            lr_term=self.termination.learning_rate,
            lr_value=self.value.learning_rate,
            target_update_frequency=self.value.target_update_frequency,
            prior_var_latent=self.posterior.prior_var_latent,
            prior_var_reward=self.posterior.prior_var_reward,
            noise_var=self.posterior.noise_var,
            schedule=Schedule(
                self.interaction.update_frequency_early, self.interaction.update_frequency, self.early_steps
            ),
            eps_final=self.ablation.eps_final,
            eps_anneal_steps=max(int(round(fraction * self.run.steps)), 1),
            fresh_value_multiplier=self.ablation.fresh_value_multiplier,
        )

    def with_overrides(self, **dotted) -> "RunConfig":
        cfg = dataclasses.replace(self, **{s.name: dataclasses.replace(getattr(self, s.name)) for s in dataclasses.fields(self)})
        for key, value in dotted.items():
            section, name = key.split(".", 1)
            setattr(getattr(cfg, section), name, value)
        validate(cfg)
        return cfg


def _keys(cfg: RunConfig):
    for section in dataclasses.fields(cfg):
        sec = getattr(cfg, section.name)
        for f in dataclasses.fields(sec):
            yield f"{section.name}.{f.name}", sec, f.name


def _coerce(raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        as_float = float(raw)
        if not as_float.is_integer():
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(as_float)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
    return raw


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def validate(cfg: RunConfig) -> None:
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}")

    need(0.0 <= cfg.value.discount < 1.0, "value.discount", "discount must be in [0, 1)")
    need(cfg.run.mode in MODES, "run.mode", f"expected one of {', '.join(MODES)}")
    need(cfg.run.steps >= 1, "run.steps", "must be >= 1")
    need(len(cfg.run.seeds) >= 1, "run.seeds", "at least one seed required")
    need(all(s >= 0 for s in cfg.run.seeds), "run.seeds", "seeds must be non-negative")
    need(cfg.run.eval_interval >= 0, "run.eval_interval", "must be >= 0")
    need(cfg.run.eval_episodes >= 1, "run.eval_episodes", "must be >= 1")
    need(cfg.run.checkpoint_every >= 0, "run.checkpoint_every", "must be >= 0")
    for key, sec, name in _keys(cfg):
        value = getattr(sec, name)
        if name in ("activation", "latent_activation"):
            need(value in ACTIVATIONS, key, f"unknown activation {value!r}")
        if name == "learning_rate" or name.startswith("prior_var") or name == "noise_var":
            need(value > 0, key, "must be > 0")
        if name in ("layers", "encoder_layers", "decoder_layers"):
            need(value >= 2, key, "at least 2 layers required")
        if name in (
            "hidden_units",
            "encoded_dims",
            "recurrent_hidden_units",
            "training_iterations",
            "window_length",
            "target_update_frequency",
            "batch_size",
            "sequence_length",
            "capacity",
            "update_frequency",
            "update_frequency_early",
            "fresh_value_multiplier",
        ):
            need(value >= 1, key, "must be >= 1")
    need(0.0 <= cfg.interaction.policy_noise <= 1.0, "interaction.policy_noise", "must be in [0, 1]")
    need(cfg.interaction.early_steps >= 0, "interaction.early_steps", "must be >= 0")
    need(
        cfg.interaction.update_frequency_early <= cfg.interaction.update_frequency,
        "interaction.update_frequency_early",
        "must not exceed interaction.update_frequency",
    )
    need(0.0 <= cfg.ablation.eps_final <= 1.0, "ablation.eps_final", "must be in [0, 1]")
    for key in ("exploit_fraction", "explore_fraction"):
        need(0.0 < getattr(cfg.ablation, key) <= 1.0, f"ablation.{key}", "must be in (0, 1]")
    try:
        env = cfg.make_env()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"env: {exc}") from None
    need(env.spec.max_steps <= cfg.replay.capacity, "replay.capacity", "must hold at least one full episode")


_COMMENT = re.compile(r"\s#(?:\s|$)")


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    known = {key: (sec, name) for key, sec, name in _keys(cfg)}
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        # grid layouts use '#' for walls, so an inline comment needs
        # whitespace on both sides of the '#'
        line = line.strip()
        if line.startswith("#"):
            continue
        line = _COMMENT.split(line, 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        sec, name = known[key]
        try:
            setattr(sec, name, _coerce(raw, getattr(sec, name)))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: {key}: {exc}") from None
    validate(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key, sec, name in _keys(cfg):
        lines.append(f"{key} = {_format(getattr(sec, name))}")
    return "\n".join(lines) + "\n"


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))
