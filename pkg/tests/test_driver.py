import json

import numpy as np
import pytest

from chainforge import cif
from chainforge.driver import (FourierSeries, RunConfig, demo_series, load_defect, load_state, run,
                               smooth_target_sequence, state_components, state_from_components, validate)
from chainforge.fields import GridSpec
from chainforge.step.parameters import ExponentError
from chainforge.step.state import State, defect_l1

SOURCE = {"modes": [{"k": [0, 0, 0], "cos": [1.0, 0.0, 0.3]}, {"k": [0, 1, 0], "sin": [0.5, 0.0, 0.0]}]}


def config(tmp_path, **kw):
    src = tmp_path / "source.json"
    src.write_text(json.dumps(SOURCE))
    base = dict(dim=3, p=4 / 3, ptilde=1.0, steps=1, grid=32, defect=f"file:{src}", policy="report",
                out=str(tmp_path / "run"))
    base.update(kw)
    return RunConfig(**base)


# validation ------------------------------------------------------------------


def test_validate_accepts_the_reference_exponents(tmp_path):
    _, gap = validate(config(tmp_path))
    assert gap == pytest.approx(0.5)


@pytest.mark.parametrize("kw", [dict(dim=2), dict(p=2.0, ptilde=2.0), dict(mode="hamiltonian"),
                                dict(dim=5, mode="hamiltonian")])
def test_validate_rejects_inadmissible_setups(tmp_path, kw):
    with pytest.raises(ExponentError):
        validate(config(tmp_path, **kw))


@pytest.mark.parametrize("kw", [dict(grid=48), dict(grid=4), dict(steps=-1), dict(policy="lenient"),
                                dict(mode="other"), dict(grid=16)])
def test_validate_rejects_bad_settings(tmp_path, kw):
    with pytest.raises(ValueError):
        validate(config(tmp_path, **kw))


def test_validate_accepts_even_hamiltonian_dimension(tmp_path):
    validate(config(tmp_path, dim=4, p=1.5, ptilde=1.0, mode="hamiltonian"))


# sources and targets -----------------------------------------------------------


def test_demo_series_is_the_gradient_of_a_product_of_sines():
    grid = GridSpec(3, 16)
    x, y, _ = np.meshgrid(*([grid.axis()] * 3), indexing="ij")
    h = demo_series(3).sample(grid).values
    tau = 2 * np.pi
    np.testing.assert_allclose(h[0], tau * np.cos(tau * x) * np.sin(tau * y), atol=1e-12)
    np.testing.assert_allclose(h[1], tau * np.sin(tau * x) * np.cos(tau * y), atol=1e-12)
    assert np.all(h[2] == 0)


def test_band_limited_source_needs_no_truncation():
    cutoffs, targets, tails = smooth_target_sequence(demo_series(3), GridSpec(3, 16), 4)
    assert cutoffs == [1] * 5 and tails == [0.0] * 5


def test_high_mode_is_dropped_until_its_tail_matters():
    grid = GridSpec(3, 16)
    q_star = 3
    modes = [{"k": [1, 0, 0], "sin": [1.0, 0.0, 0.0]},
             {"k": [0, 5, 0], "cos": [2.0 ** (-q_star - 5), 0.0, 0.0]}]
    cutoffs, targets, tails = smooth_target_sequence(FourierSeries(3, modes), grid, 6)
    assert all(a <= b for a, b in zip(cutoffs, cutoffs[1:]))
    for q, tail in enumerate(tails):
        assert tail <= 2.0 ** (-(q + 1)) / 8
    assert cutoffs[0] == 1 and cutoffs[-1] == 5
    for q in range(len(targets) - 1):
        gap = np.mean(np.linalg.norm(targets[q + 1].values - targets[q].values, axis=0))
        assert gap <= 2.0 ** (-(q + 1)) / 4


def test_unrepresentable_source_is_rejected():
    with pytest.raises(ValueError, match="not representable"):
        smooth_target_sequence(FourierSeries(3, [{"k": [8, 0, 0], "sin": [1, 0, 0]}]), GridSpec(3, 16), 1)


def test_load_defect(tmp_path):
    src = tmp_path / "s.json"
    src.write_text(json.dumps(SOURCE))
    series = load_defect(f"file:{src}", 3)
    assert series.max_frequency == 1
    with pytest.raises(ValueError):
        load_defect("nowhere", 3)
    bad = tmp_path / "b.json"
    bad.write_text("{}")
    with pytest.raises(ValueError, match="modes"):
        load_defect(f"file:{bad}", 3)


def test_state_component_round_trip(tmp_path):
    grid = GridSpec(3, 8)
    rng = np.random.default_rng(1)
    values = rng.standard_normal((13,) + grid.shape)
    state = state_from_components(values, grid)
    assert np.array_equal(state_components(state), values)
    cif.write_cif(tmp_path / "s.cif", values, 3)
    back = load_state(tmp_path / "s.cif")
    assert np.array_equal(state_components(back), values)


# runs -----------------------------------------------------------------------------


def test_zero_steps_writes_the_initial_state_only(tmp_path):
    summary = run(config(tmp_path, steps=0))
    out = tmp_path / "run"
    assert summary["ok"] and len(summary["trajectory"]) == 1
    state = load_state(out / "state_000.cif")
    assert np.all(state.rho.values == 0) and np.all(state.u.values == 0)
    assert np.all(state.defect.first == 0)
    assert defect_l1(state.defect) == pytest.approx(np.mean(np.linalg.norm(state.h.values, axis=0)))
    assert not (out / "step_001.json").exists()


def test_one_step_run_writes_every_artifact(tmp_path):
    summary = run(config(tmp_path))
    out = tmp_path / "run"
    for name in ("config.json", "initial.json", "state_000.cif", "state_001.cif", "step_001.json",
                 "slice_000.csv", "slice_001.csv", "summary.json", "summary.csv", "manifest.json", "timing.json"):
        assert (out / name).exists(), name
    record = json.loads((out / "step_001.json").read_text())
    assert record["status"] in ("accepted", "failed")
    assert "timing" not in record["report"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert "timing.json" not in manifest["files"]
    assert summary["trajectory"][1]["defect_L1"] == record["report"]["constants"]["defect_out_L1"]
    header = (out / "slice_001.csv").read_text().splitlines()[0]
    assert header == "x0,x1,rho,u_norm,defect_norm"


def test_runs_are_byte_for_byte_reproducible(tmp_path):
    cfg = config(tmp_path)
    run(cfg)
    out = tmp_path / "run"
    first = {p.name: p.read_bytes() for p in out.iterdir() if p.name != "timing.json"}
    run(cfg)
    for name, blob in first.items():
        assert (out / name).read_bytes() == blob, name


def test_strict_policy_halts_with_a_failed_record(tmp_path):
    summary = run(config(tmp_path, policy="strict"))
    assert not summary["ok"] and summary["halted_at"] == 1
    record = json.loads((tmp_path / "run" / "step_001.json").read_text())
    assert record["status"] == "failed" and record["error"]


def test_initial_state_satisfies_the_identities(tmp_path):
    run(config(tmp_path, steps=0))
    initial = json.loads((tmp_path / "run" / "initial.json").read_text())
    assert all(r["ok"] for r in initial["residuals"].values())
    state = load_state(tmp_path / "run" / "state_000.cif")
    assert isinstance(state, State)
