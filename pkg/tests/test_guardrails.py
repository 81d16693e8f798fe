import numpy as np

from guardrails import check_fields, check_gammas, check_points, screen_config
from schemas import RunConfig


def test_gammas_must_be_nonzero():
    ok, flags = check_gammas([1.0, 0.0, -1.0])
    assert not ok
    assert flags == ["zero vortex strength at positions [2]"]
    assert check_gammas([1.0, -1.0]) == (True, [])


def test_points_shape_and_count():
    ok, flags = check_points(RunConfig(gammas=[1.0, -1.0], points=[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]))
    assert not ok
    assert "2-vectors" in flags[0]
    ok, flags = check_points(RunConfig(gammas=[1.0, -1.0, 1.0], points=[[0.0, 0.0], [0.5, 0.5]]))
    assert not ok
    assert flags == ["2 points given for 3 strengths"]


def test_coincident_points_are_blocked():
    ok, flags = check_points(RunConfig(gammas=[1.0, -1.0], points=[[0.2, 0.2], [0.2, 0.2]]))
    assert not ok
    assert flags == ["coincident vortex positions [(1, 2)]"]


def test_sphere_points_are_only_flagged_when_off_the_sphere():
    cfg = RunConfig(surface={"kind": "round_sphere"}, gammas=[1.0, 1.0], points=[[0.0, 0.0, 2.0], [1.0, 0.0, 0.0]])
    ok, flags = check_points(cfg)
    assert ok
    assert len(flags) == 1
    assert "normalized" in flags[0]


def test_log_fields_need_positive_grids():
    cfg = RunConfig(psi={"variant": "log_k", "K": {"shape": [2, 2], "values": [1.0, 1.0, 1.0, 0.0]}})
    ok, flags = check_fields(cfg, {"K": np.array([[1.0, 1.0], [1.0, 0.0]])})
    assert not ok
    assert flags[0].startswith("K must be positive")
    ok, _ = check_fields(cfg, {"K": np.ones((2, 2)), "K2": None})
    assert ok


def test_screen_collects_every_flag():
    cfg = RunConfig(gammas=[0.0, 1.0], points=[[0.1, 0.1], [0.1, 0.1]])
    ok, flags = screen_config(cfg, {"conformal_factor": np.array([[np.nan]])})
    assert not ok
    assert len(flags) == 3
    assert screen_config(RunConfig(), {}) == (True, [])
