import pytest

from callpack import config
from callpack.config import Config
from callpack.trace import InvalidConfig


def test_default_round_trip():
    text = config.dumps(Config())
    back = config.loads(text)
    assert back == Config()
    assert config.dumps(back) == text


def test_defaults_are_the_reference_setup():
    run = Config().run
    assert run.cluster.n_mps == 3000
    assert run.cluster.hot_threshold_pct == 75.0
    assert run.cluster.n_virtual_clusters == 4
    assert run.policy.k == 5
    assert run.planner.budget == 1000
    assert run.planner.gap == 0.10
    assert run.planner.period_s == 120


def test_partial_file_fills_defaults(tmp_path):
    path = tmp_path / "exp.toml"
    path.write_text('[cluster]\nn_mps = 2850\n\n[policies]\nname = "tetris"\n\n'
                    '[migration]\nmode = "mip"\n\n[migration.planner]\nbudget = 10\n')
    cfg = config.load(path)
    assert cfg.run.cluster.n_mps == 2850
    assert cfg.run.policy.is_tetris
    assert cfg.run.migration == "mip"
    assert cfg.run.planner.budget == 10
    assert cfg.run.planner.gap == 0.10


def test_sku_mix_round_trips():
    text = ('[[cluster.sku]]\nsku_id = "old"\nperf_ratio = 1.25\nweight = 1.0\n'
            '[[cluster.sku]]\nsku_id = "new"\nperf_ratio = 1.0\nweight = 3.0\n')
    cfg = config.loads(text)
    assert [(s.sku_id, s.perf_ratio, w) for s, w in cfg.run.cluster.sku_mix] == \
        [("old", 1.25, 1.0), ("new", 1.0, 3.0)]
    assert config.loads(config.dumps(cfg)) == cfg


@pytest.mark.parametrize("text,key", [
    ("[cluster]\nsize = 3\n", "cluster.size"),
    ("[cluster]\nn_mps = 'many'\n", "cluster.n_mps"),
    ("[cluster]\nn_mps = 0\n", "cluster.n_mps"),
    ("[policies]\nname = 'fastest'\n", "policies.name"),
    ("[policies]\nk = 0\n", "policies.k"),
    ("[migration]\nmode = 'teleport'\n", "migration.mode"),
    ("[migration.planner]\ngap = 2.0\n", "migration.planner.gap"),
    ("[migration.greedy]\nhot_threshold_pct = 0\n", "migration.greedy.hot_threshold_pct"),
    ("[trace]\nrecurring_fraction = 3\n", "trace.recurring_fraction"),
    ("[predictors]\ntraining_days = 0\n", "predictors.training_days"),
    ("[engine]\nseed = true\n", "engine.seed"),
    ("[weather]\nsunny = true\n", "weather"),
    ("[cluster\n", "config"),
])
def test_errors_name_the_key(text, key):
    with pytest.raises(InvalidConfig, match=key.replace(".", r"\.")):
        config.loads(text)
