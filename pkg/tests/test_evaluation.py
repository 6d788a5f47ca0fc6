import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from graphcpd.config import load_settings, parse_config
from graphcpd.dataio import Labeling
from graphcpd.detector import DetectorConfig
from graphcpd.errors import ConfigError
from graphcpd.evaluation import (Outcome, RunTrace, Scenario, SimulatorConfig, build_scenario, default_grid,
                                 delay_at_pfa, detection_delay, monte_carlo, noise_for_snr, pd_pfa,
                                 pd_pfa_counts, simulate_sequence, tabulate)
from graphcpd.superpixel import SuperpixelParams


def small_sim(rng, sigma2=0.0, tc=5, T=8):
    Q = rng.uniform(size=(2, 4, 4))
    D = np.zeros_like(Q)
    D[:, :2, :2] = 1.5
    return SimulatorConfig(Q, D, tc, sigma2, T)


# ------------------------------------------------------------------ simulator


def test_noiseless_static(rng):
    Q = rng.uniform(size=(3, 2, 5))
    seq, truth = simulate_sequence(SimulatorConfig(Q, np.zeros_like(Q), 3, 0.0, 6), 1)
    assert all(np.array_equal(f.values, Q.astype(np.float32)) for f in seq)
    assert not truth.any()


def test_noiseless_step(rng):
    cfg = small_sim(rng)
    seq, truth = simulate_sequence(cfg, 0)
    Q = cfg.background.astype(np.float32)
    QD = (cfg.background + cfg.change).astype(np.float32)
    for t in range(1, 9):
        assert np.array_equal(seq.frame(t).values, Q if t < 5 else QD)
        assert truth[t - 1].any() == (t >= 5)
    assert np.array_equal(truth[7], cfg.support.astype(np.uint8))
    assert cfg.first_change == 5


def test_snr_targeting(rng):
    Q = rng.uniform(0.2, 1.0, size=(9, 10, 10))
    s2 = noise_for_snr(Q, 10.0)
    assert 10 * math.log10(np.mean(Q ** 2) / s2) == pytest.approx(10.0, abs=1e-12)
    seq, _ = simulate_sequence(SimulatorConfig(Q, np.zeros_like(Q), 2, s2, 200), 3)
    assert np.var(seq.data - Q.astype(np.float32)) == pytest.approx(s2, rel=0.02)


def test_reproducible(rng):
    cfg = small_sim(rng, sigma2=0.3)
    a, _ = simulate_sequence(cfg, 42)
    b, _ = simulate_sequence(cfg, 42)
    c, _ = simulate_sequence(cfg, 43)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.tobytes() != c.data.tobytes()


def test_simulator_validation(rng):
    Q = rng.uniform(size=(1, 2, 2))
    D = np.zeros_like(Q)
    D[0, 0, 0] = 1.0
    lab = Labeling(np.array([[0, 0], [1, 1]]))
    with pytest.raises(ConfigError, match="aligned"):
        SimulatorConfig(Q, D, 2, 0.1, 4, lab)
    with pytest.raises(ConfigError):
        SimulatorConfig(Q, D, 1, 0.1, 4)
    with pytest.raises(ConfigError):
        SimulatorConfig(Q, D, 2, -1.0, 4)
    D[0, 0, 1] = 1.0
    SimulatorConfig(Q, D, 2, 0.1, 4, lab)
    with pytest.raises(ConfigError, match="within"):
        SimulatorConfig(Q, D, np.array([[2, 3], [2, 2]]), 0.1, 4, lab)


# ------------------------------------------------------------------ metrics


def per_frame(first, T, hits):
    f = np.zeros((T - 1, 3), np.uint8)
    for t in hits:
        f[t - first, 0] = 1
    return f


def test_delay_examples():
    assert detection_delay(per_frame(2, 70, [20, 25]), 16) == (Outcome.DETECTED, 4, 20)
    assert detection_delay(per_frame(2, 70, [10, 20]), 16).outcome is Outcome.FALSE_ALARM
    assert detection_delay(per_frame(2, 70, []), 16).outcome is Outcome.UNDETECTED
    assert detection_delay(per_frame(2, 70, [16]), 16).delay == 0


def test_pd_pfa_examples(rng):
    c = (rng.uniform(size=(5, 12)) < 0.3).astype(np.uint8)
    c[0, 0] = 1
    assert pd_pfa(c, c) == (1.0, 0.0)
    assert pd_pfa(np.ones_like(c), c) == (1.0, 1.0)
    z = np.zeros_like(c)
    e = z.copy()
    e.flat[[3, 7, 11]] = 1
    pd, pfa = pd_pfa(e, z)
    assert math.isnan(pd) and pfa == 3 / z.size


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_pd_pfa_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    e = rng.integers(0, 2, (4, 10))
    c = rng.integers(0, 2, (4, 10))
    perm = rng.permutation(10)
    assert pd_pfa_counts(e, c) == pd_pfa_counts(e[:, perm], c[:, perm])


# ------------------------------------------------------------------ Monte Carlo


def tiny_scenario(rng, sim_sigma2=0.0, amp=50.0):
    Q = rng.uniform(0.2, 1.0, size=(3, 6, 6))
    lab = Labeling(np.repeat(np.repeat(np.arange(4).reshape(2, 2), 3, 0), 3, 1))
    D = np.zeros_like(Q)
    D[:, lab.labels == 1] = amp
    sim = SimulatorConfig(Q, D, 6, sim_sigma2, 12, lab)
    det = DetectorConfig(0.15, 0.5, 0.1, 0.05, 1.0)
    return Scenario(sim, det, SuperpixelParams(3))


def test_noiseless_large_change_detects_immediately(rng):
    table = monte_carlo(tiny_scenario(rng), "dagfss", 3, [0.001, 0.05, 0.5], seed=0)
    assert [r.pd_or_delay for r in table.rows] == [0.0, 0.0, 0.0]
    assert [r.pfa for r in table.rows] == [0.0, 0.0, 0.0]
    assert [r.runs for r in table.rows] == [3, 3, 3]


def test_monte_carlo_deterministic_and_ordered(rng, tmp_path, monkeypatch):
    sc = tiny_scenario(rng, sim_sigma2=0.5, amp=1.0)
    a = monte_carlo(sc, "dagfss", 6, [0.2, 0.01], seed=9)
    b = monte_carlo(sc, "dagfss", 6, [0.2, 0.01], seed=9)
    monkeypatch.setenv("GRAPHCPD_THREADS", "3")
    c = monte_carlo(sc, "dagfss", 6, [0.2, 0.01], seed=9)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    c.to_csv(tmp_path / "c.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes() == (tmp_path / "c.csv").read_bytes()
    assert [r.operating_point for r in a.rows] == [0.2, 0.01]
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == "operating_point,pfa,pd_or_delay,false_alarm_runs,undetected_runs,runs"


def test_single_point_grid_and_bad_grids(rng):
    sc = tiny_scenario(rng)
    assert len(monte_carlo(sc, "cva", 2, [1.0]).rows) == 1
    with pytest.raises(ConfigError):
        monte_carlo(sc, "dagfss", 2, [])
    with pytest.raises(ConfigError):
        monte_carlo(sc, "dagfss", 2, [1.5])
    with pytest.raises(ConfigError):
        monte_carlo(sc, "cva", 2, [-1.0])
    with pytest.raises(ConfigError):
        monte_carlo(sc, "dagfss", 0, [0.1])


def test_delay_monotone_in_change_magnitude(rng):
    state = rng.bit_generator.state
    delays = []
    for amp in (0.3, 0.6, 1.2, 3.0):
        rng.bit_generator.state = state
        sc = tiny_scenario(rng, sim_sigma2=0.2, amp=amp)
        traces_table = monte_carlo(sc, "dagfss", 20, [0.05], seed=100)
        row = traces_table.rows[0]
        delays.append(row.pd_or_delay)
        assert row.false_alarm_runs == traces_table.rows[0].false_alarm_runs
    finite = [d for d in delays if not math.isnan(d)]
    assert finite == sorted(finite, reverse=True)
    assert delays[-1] == 0.0


def test_pdpfa_tabulation():
    truth = np.zeros((4, 2), np.uint8)
    truth[2:, 0] = 1
    stat = np.array([[0.0, 3.0], [0.0, 0.0], [5.0, 0.0], [5.0, 0.0]])
    table = tabulate([RunTrace(stat, truth)], "cva", [1.0, 4.0], "pdpfa")
    r1, r2 = table.rows
    assert (r1.pd_or_delay, r1.pfa) == (1.0, 1 / 6)
    assert (r2.pd_or_delay, r2.pfa) == (1.0, 0.0)
    assert r1.false_alarm_runs == 1 and r2.false_alarm_runs == 0


def test_delay_at_pfa():
    # 4 runs, frames 2..6, change at 4
    s = np.array([
        [0.1, 0.2, 1.0, 2.0, 2.0],
        [0.5, 0.1, 0.4, 3.0, 3.0],
        [0.9, 0.3, 0.2, 0.2, 5.0],
        [0.0, 0.0, 2.0, 2.0, 2.0],
    ])
    m0 = delay_at_pfa(s, 4, 0.0)
    assert m0.threshold == 0.9 and m0.false_alarm_runs == 0
    assert m0.mean_delay == pytest.approx((0 + 1 + 2 + 0) / 4)
    m = delay_at_pfa(s, 4, 0.25)
    assert m.threshold == 0.5 and m.false_alarm_runs == 1 and m.pfa == 0.25
    assert m.mean_delay == pytest.approx((0 + 1 + 0) / 3)


def test_default_grids(rng):
    sc = tiny_scenario(rng)
    assert default_grid("dagfss", sc)[0] == 0.001
    taus = default_grid("cva", sc)
    assert taus == sorted(taus, reverse=True) and all(t > 0 for t in taus)


# ------------------------------------------------------------------ scenarios and config


def test_presets_build():
    s1 = load_settings(preset="example1")
    assert (s1.height, s1.width, s1.bands, s1.frames, s1.change_frame) == (10, 10, 9, 70, 16)
    assert (s1.slow_rate, s1.fast_rate, s1.gamma, s1.slic_step) == (0.01, 0.8, 0.1, 6)
    sc = build_scenario(s1)
    assert sc.sim.shape == (9, 10, 10)
    assert 10 * math.log10(np.mean(sc.sim.background ** 2) / sc.sim.sigma2) == pytest.approx(10)
    assert sc.sim.first_change == 16
    s2 = load_settings(preset="example2")
    sc2 = build_scenario(s2)
    assert sc2.sim.shape == (7, 50, 50) and sc2.metric == "pdpfa"
    assert np.unique(sc2.sim.change_frames[sc2.sim.support]).size > 1


def test_config_parsing(tmp_path):
    s = parse_config("# comment\nlambda = 0.1\nLambda=0.4\n\nslic_step = 5\n", ["gamma=0.3"])
    assert (s.slow_rate, s.fast_rate, s.slic_step, s.gamma) == (0.1, 0.4, 5, 0.3)
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("colour = red")
    with pytest.raises(ConfigError, match="parse"):
        parse_config("slic_step = 2.5")
    with pytest.raises(ConfigError, match="key = value"):
        parse_config("lambda 0.1")
    with pytest.raises(ConfigError, match="missing"):
        s.detector_config()
    p = tmp_path / "c.cfg"
    p.write_text(s.to_text())
    assert load_settings(p) == s
    with pytest.raises(ConfigError, match="not found"):
        load_settings(tmp_path / "nope.cfg")
