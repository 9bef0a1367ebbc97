from pathlib import Path

import numpy as np
import pytest

from smsp.config import ConfigError, load, loads
from smsp.scenario import ScenarioConfig

DEFAULT = Path(__file__).resolve().parents[1] / "configs" / "default.toml"


def test_default_file_matches_builtin_defaults():
    cfg = load(DEFAULT)
    ref = ScenarioConfig()
    assert cfg.model.modes == ref.model.modes
    assert cfg.model.lines == ref.model.lines
    np.testing.assert_array_equal(cfg.model.noise_w.hi, ref.model.noise_w.hi)
    np.testing.assert_array_equal(cfg.initial_box.lo, ref.initial_box.lo)
    np.testing.assert_array_equal(cfg.lipschitz, ref.lipschitz)
    assert (cfg.horizon, cfg.seed, cfg.true_mode) == (ref.horizon, ref.seed, ref.true_mode)
    assert cfg.initial_policy_samples == ref.initial_policy_samples
    assert cfg.region_theta == ref.region_theta


def test_empty_config_gives_defaults():
    cfg = loads("")
    assert cfg.horizon == 2000 and cfg.model.areas == 3


def test_box_forms():
    cfg = loads("[system]\nnoise_v = [0.1, 0.2, 0.1, 0.2, 0.1, 0.2]\ninitial_box = [[0, 0, 0, 0, 0, 0], [1, 1, 1, 1, 1, 1]]\n")
    np.testing.assert_allclose(cfg.model.noise_v.hi, [0.1, 0.2] * 3)
    np.testing.assert_allclose(cfg.initial_box.lo, 0.0)
    np.testing.assert_allclose(cfg.initial_box.hi, 1.0)


def test_areas_and_modes():
    cfg = loads('[system]\nareas = 2\nlines = [[1, 2]]\n[modes]\n1 = []\n2 = [[2, 1]]\n')
    assert cfg.model.n == 4 and cfg.model.modes == {1: (), 2: (0,)}


def test_observer_and_policy_sections():
    cfg = loads('[observer]\nmax_update_iters = 3\nrow_contractor = false\n[policy]\nlipschitz = [1.0, 2.0, 3.0]\ninitial_samples = 10\n[output]\ndir = "x"\n')
    assert cfg.observer.max_update_iters == 3 and not cfg.observer.row_contractor
    np.testing.assert_array_equal(cfg.lipschitz, [1.0, 2.0, 3.0])
    assert cfg.initial_policy_samples == 10 and cfg.output == "x"


@pytest.mark.parametrize(
    "text",
    [
        "[nope]\n",
        "[system]\ncolour = 1\n",
        "[observer]\ninput_bound = 3.0\n",
        "[system]\nhorizon = 0\n",
        "[system]\nhorizon = 1.5\n",
        "[system]\nseed = true\n",
        "[system]\ntrue_mode = 7\n",
        "[system]\nnoise_w = [0.1, 0.1]\n",
        "[system]\nregion_theta = [2.0, 1.0]\n",
        "[modes]\n1 = []\n2 = [[1, 5]]\n",
        "[modes]\n1 = [[1, 2]]\n2 = [[2, 1]]\n",
        "[modes]\nfirst = []\n",
        "[observer]\nupdate_tol = -1.0\n",
        "[policy]\nlipschitz = [1.0, 2.0]\n",
        "[system\n",
    ],
)
def test_invalid_configs_raise_config_error(text):
    with pytest.raises(ConfigError):
        loads(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.toml")
