from __future__ import annotations

import pytest

from safexec.config import SCHEMA, ConfigError, ScenarioConfig, dump_config, get_value, load_config, parse_config


def test_defaults():
    cfg = load_config(None)
    assert cfg.market.n_venues == 2 and cfg.episode.horizon == 390
    assert cfg.shield.alpha == 0.10 and cfg.shield.beta == 0.005
    assert cfg.ppo.gamma == 0.999 and cfg.ppo.clip == 0.2 and cfg.ppo.lr == 3e-4
    assert cfg.episode.q0 == 100_000


def test_parse_overrides_and_sync():
    cfg = parse_config("""
[market]
session_minutes = 30
n_venues = 3
[episode]
q0 = 5000  # inline comment
liquidity_weights = 0.5, 0.25, 0.25
[shield]
alpha = 0.3
self_trade_guard = no
[ppo]
hidden = 32 16
[experiment]
strategies = TWAP, GREEDY
""")
    assert cfg.episode.horizon == 30 and cfg.episode.n_venues == 3
    assert cfg.episode.liquidity_weights == (0.5, 0.25, 0.25)
    assert cfg.shield.constraints().alpha_ppm == 300_000
    assert cfg.shield.self_trade_guard is False
    assert cfg.ppo.hidden == (32, 16)
    assert cfg.experiment.strategies == ("TWAP", "GREEDY")


def test_round_trip_covers_every_key():
    cfg = parse_config("[shield]\nalpha = 0.2\n[episode]\nvhat_prior = 1000\n")
    text = dump_config(cfg)
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in text
        for key in keys:
            assert f"\n{key} = " in text
    back = parse_config(text)
    for keys in SCHEMA.values():
        for _, path in keys.values():
            assert get_value(back, path) == get_value(cfg, path), path


def test_dump_without_run_keys_ignores_output_location():
    a, b = load_config(None), load_config(None)
    b.experiment.out_dir, b.experiment.parallel = "elsewhere", 4
    assert dump_config(a, include_run_keys=False) == dump_config(b, include_run_keys=False)
    assert "out_dir" not in dump_config(a, include_run_keys=False)
    assert dump_config(a) != dump_config(b)


def test_scenario_doc_lists_every_key():
    import pathlib
    doc = (pathlib.Path(__file__).resolve().parents[1] / "docs" / "scenario.md").read_text()
    for section, keys in SCHEMA.items():
        assert f"[{section}]" in doc
        for key in keys:
            assert f"`{key}`" in doc, (section, key)


@pytest.mark.parametrize("text", [
    "[nope]\nx = 1\n",
    "[market]\nbogus = 1\n",
    "[market]\nn_venues = two\n",
    "[shield]\nmode = sometimes\n",
    "[shield]\nalpha = 0\n",
    "[shield]\nself_trade_guard = maybe\n",
    "[market]\nsession_minutes = 30\ninterval_s = 7\n",
    "[episode]\nliquidity_weights = 1.0\n",
    "[episode]\nq0 = 0\n",
    "[ppo]\ngamma = 2\n",
    "[population]\nn_market_makers = -1\n",
    "no section header\n",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/scenario.ini")


def test_base_is_updated_in_place():
    base = ScenarioConfig()
    out = parse_config("[experiment]\ndays = 7\n", base)
    assert out is base and base.experiment.days == 7
