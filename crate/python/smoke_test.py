"""Smoke test for the diffmpm Python extension.

Build and install first:

    pip install --no-build-isolation -e crates/python
"""

import math
import pathlib
import tempfile

import diffmpm

ROOT = pathlib.Path(__file__).resolve().parents[1]


def test_oracles():
    assert abs(diffmpm.terzaghi(10.0, 10.0, 0.0) - 1.0) < 1e-2
    assert diffmpm.terzaghi(0.0, 10.0, 0.5) == 0.0
    delta, _ = diffmpm.elastica_tip(1e-4)
    assert abs(delta - 1e-4 / 3.0) < 1e-9


def test_config_round_trip_and_errors():
    cfg = diffmpm.Config.load(str(ROOT / "configs" / "bar_elastic.toml"), ["schedule.steps=8"])
    assert cfg.scenario == "bar"
    again = diffmpm.Config(cfg.to_toml())
    assert again.to_toml() == cfg.to_toml()
    try:
        diffmpm.Config('scenario = "bar"\n[geometry]\nsiz = [1.0]\n')
    except diffmpm.ConfigError as e:
        assert "siz" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def test_bar_run():
    with tempfile.TemporaryDirectory() as out:
        cfg = diffmpm.Config.load(
            str(ROOT / "configs" / "bar_elastic.toml"),
            ["study.cell_sizes=[]", f'output.dir="{out}"'],
        )
        report = diffmpm.run(cfg)
        assert report.steps == 40
        assert report.all_pass(), report.checks
        assert (pathlib.Path(out) / "summary.json").exists()


def test_triaxial_and_inverse():
    loose = diffmpm.triaxial("loose", 0.05, 50)
    assert len(loose) == 50 and all(r["vol_strain"] <= 0.0 for r in loose)
    problem = diffmpm.InverseProblem(1e6)
    theta = math.log(2e5)
    loss, grad = problem.loss_and_gradient(theta)
    eps = 1e-4
    lp, _ = problem.loss_and_gradient(theta + eps)
    lm, _ = problem.loss_and_gradient(theta - eps)
    fd = (lp - lm) / (2 * eps)
    assert loss > 0 and abs(grad - fd) <= 1e-4 * abs(fd)


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print(f"ok  {name}")
