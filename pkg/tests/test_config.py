import pytest

from perceploco.config import ENV_VAR, SCHEMA, Config
from perceploco.errors import FormatError
from perceploco.rewards import WEIGHTS


def test_defaults_match_modules():
    cfg = Config()
    assert cfg["weights"] == WEIGHTS
    assert cfg.foothold().tolerance == 0.05
    assert cfg.terrain_spec().resolution == 0.02


def test_dumps_round_trip():
    cfg = Config()
    cfg.override("foothold", tolerance=0.07)
    cfg.override("gait", max_steps=4, initial_pose=(1.0, 0.2, 0.3))
    cfg.override("policy", precision="float32")
    back = Config.loads(cfg.dumps())
    assert back == cfg
    assert back.dumps() == cfg.dumps()


def test_partial_file_keeps_defaults(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[foothold]\ntolerance = 0.1\n\n[weights]\nstumble = -3\n")
    cfg = Config.load(path)
    assert cfg["foothold"]["tolerance"] == 0.1
    assert cfg["weights"]["stumble"] == -3.0
    assert cfg["weights"]["orientation"] == WEIGHTS["orientation"]
    assert cfg["rollout"] == SCHEMA["rollout"]


@pytest.mark.parametrize("text", [
    "[nonsense]\na = 1\n",
    "[foothold]\ntolerence = 0.1\n",
    "[foothold]\ntolerance = abc\n",
    "not an ini file",
])
def test_bad_files_rejected(text):
    with pytest.raises(FormatError):
        Config.loads(text)


def test_override_wins_and_ignores_none():
    cfg = Config.loads("[rollout]\nduration = 2\n")
    cfg.override("rollout", duration=None)
    assert cfg["rollout"]["duration"] == 2.0
    cfg.override("rollout", duration=9.0)
    assert cfg["rollout"]["duration"] == 9.0
    with pytest.raises(FormatError):
        cfg.override("rollout", speed=1.0)


def test_env_var_and_explicit_path(tmp_path, monkeypatch):
    a = tmp_path / "a.ini"
    b = tmp_path / "b.ini"
    a.write_text("[foothold]\ntolerance = 0.2\n")
    b.write_text("[foothold]\ntolerance = 0.3\n")
    monkeypatch.delenv(ENV_VAR, raising=False)
    assert Config.resolve() == Config()
    monkeypatch.setenv(ENV_VAR, str(a))
    assert Config.resolve()["foothold"]["tolerance"] == 0.2
    assert Config.resolve(b)["foothold"]["tolerance"] == 0.3


def test_missing_file():
    with pytest.raises(FormatError):
        Config.load("/nonexistent/config.ini")
