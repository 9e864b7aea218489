import dataclasses
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psdrl.config import ConfigError, RunConfig, dump_config, load_config, parse_config, save_config
from psdrl.envs import DeepSeaChain, GridMaze

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


class TestDefaults:
    def test_empty_file_gives_published_defaults(self):
        cfg = parse_config("")
        assert cfg == RunConfig()
        assert (cfg.posterior.prior_var_latent, cfg.posterior.prior_var_reward, cfg.posterior.noise_var) == (1e3, 1e3, 1.0)
        a = cfg.autoencoder
        assert (a.encoder_layers, a.decoder_layers, a.activation, a.encoded_dims, a.hidden_units) == (4, 4, "relu", 1536, 1536)
        assert (a.learning_rate, a.training_iterations) == (1e-4, 3)
        f = cfg.forward
        assert (f.layers, f.activation, f.hidden_units, f.recurrent_hidden_units, f.window_length) == (5, "tanh", 2292, 756, 4)
        t = cfg.termination
        assert (t.layers, t.activation, t.hidden_units, t.window_length) == (4, "tanh", 1536, 4)
        v = cfg.value
        assert (v.layers, v.hidden_units, v.discount, v.target_update_frequency, v.window_length) == (5, 2292, 0.99, 4, 1)
        r = cfg.replay
        assert (r.batch_size, r.sequence_length, r.capacity) == (125, 250, 100_000)
        i = cfg.interaction
        assert (i.update_frequency, i.update_frequency_early, i.policy_noise) == (1000, 250, 1e-3)

    def test_derived_schedule(self):
        cfg = parse_config("run.steps = 50000")
        assert cfg.eval_interval == 500
        assert cfg.early_steps == 5000
        explicit = parse_config("run.steps = 50000\nrun.eval_interval = 7\ninteraction.early_steps = 11")
        assert (explicit.eval_interval, explicit.early_steps) == (7, 11)

    def test_agent_config_annealing_fractions(self):
        cfg = parse_config("run.steps = 1000\nrun.mode = eps-exploit")
        assert cfg.agent_config().eps_anneal_steps == 50
        cfg = parse_config("run.steps = 1000\nrun.mode = eps-explore")
        assert cfg.agent_config().eps_anneal_steps == 1000


class TestParsing:
    def test_comments_and_blank_lines(self):
        cfg = parse_config("# header\n\nrun.steps = 10   # inline\n  # indented\n")
        assert cfg.run.steps == 10

    def test_layout_keeps_wall_characters(self):
        cfg = parse_config("env.name = gridmaze\nenv.layout = #####/#S.G#/#####")
        env = cfg.make_env()
        assert isinstance(env, GridMaze) and env.n_states == 4

    def test_unknown_key_reports_line(self):
        with pytest.raises(ConfigError, match=r"exp.cfg:3: unknown key 'value.gama'"):
            parse_config("run.steps = 5\n\nvalue.gama = 0.9\n", "exp.cfg")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match=":2: duplicate key"):
            parse_config("run.steps = 5\nrun.steps = 6")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match=":1: expected 'key = value'"):
            parse_config("run.steps 5")

    def test_bad_values(self):
        with pytest.raises(ConfigError, match=":1: run.steps"):
            parse_config("run.steps = many")
        with pytest.raises(ConfigError, match="integer"):
            parse_config("run.steps = 2.5")

    def test_seed_list(self):
        assert parse_config("run.seeds = 3, 4,5").run.seeds == (3, 4, 5)

    def test_environment_selection(self):
        assert isinstance(parse_config("env.size = 5").make_env(), DeepSeaChain)
        with pytest.raises(ConfigError, match="env"):
            parse_config("env.name = pong")


class TestValidation:
    def test_discount_out_of_range(self):
        with pytest.raises(ConfigError, match=r"discount must be in \[0, 1\)"):
            parse_config("value.discount = 1.5")
        with pytest.raises(ConfigError):
            parse_config("value.discount = 1.0")

    @pytest.mark.parametrize(
        "line",
        [
            "run.mode = greedy",
            "run.steps = 0",
            "run.eval_episodes = 0",
            "autoencoder.activation = swish",
            "forward.learning_rate = 0",
            "posterior.noise_var = -1",
            "value.layers = 1",
            "replay.batch_size = 0",
            "interaction.policy_noise = 2",
            "interaction.update_frequency_early = 5000",
            "ablation.exploit_fraction = 0",
            "replay.capacity = 3",
        ],
    )
    def test_rejects(self, line):
        with pytest.raises(ConfigError):
            parse_config(line)

    def test_overrides_are_validated_and_do_not_alias(self):
        base = parse_config("")
        changed = base.with_overrides(**{"run.steps": 10, "value.discount": 0.5})
        assert (changed.run.steps, changed.value.discount) == (10, 0.5)
        assert base.run.steps == 1_000_000
        with pytest.raises(ConfigError):
            base.with_overrides(**{"value.discount": 2.0})


class TestRoundTrip:
    def test_dump_parse_roundtrip(self, tmp_path):
        cfg = parse_config("run.steps = 123\nvalue.discount = 0.95\nrun.seeds = 4,5\nforward.learning_rate = 3e-4")
        path = tmp_path / "out.cfg"
        save_config(cfg, path)
        assert load_config(path) == cfg

    @given(
        st.integers(1, 10**6),
        st.floats(0.0, 0.999999, allow_nan=False),
        st.floats(1e-8, 1.0, allow_nan=False),
        st.lists(st.integers(0, 1000), min_size=1, max_size=5),
    )
    @settings(max_examples=50, deadline=None)
    def test_roundtrip_property(self, steps, discount, lr, seeds):
        cfg = RunConfig()
        cfg = cfg.with_overrides(
            **{"run.steps": steps, "value.discount": discount, "value.learning_rate": lr, "run.seeds": tuple(seeds)}
        )
        assert parse_config(dump_config(cfg)) == cfg

    def test_dump_lists_every_key(self):
        text = dump_config(RunConfig())
        n_keys = sum(len(dataclasses.fields(getattr(RunConfig(), f.name))) for f in dataclasses.fields(RunConfig))
        assert len(text.strip().splitlines()) == n_keys


@pytest.mark.parametrize("name", ["deepsea.cfg", "gridmaze.cfg"])
def test_shipped_configs_load(name):
    cfg = load_config(CONFIG_DIR / name)
    assert cfg.run.steps == 50_000
    assert len(cfg.run.seeds) == 10
