import io
import json

import pytest

from bbm_decay.engine import SimConfig, init_population, run
from bbm_decay.expcli.cli import main
from bbm_decay.expcli.config import ConfigError, config_from_dict, parse_config, sim_hash
from bbm_decay.expcli.experiments import OUT_ENV, preset_columns, run_experiment, summarize
from bbm_decay.expcli.plots import emit_plot
from bbm_decay.expcli.records import (RecordWriter, SnapshotError, read_header, read_records,
                                      records_bytes, restore, snapshot, state_hash)
from bbm_decay.lineage import register_curve, register_tube
from bbm_decay.curves import GStar, G
from bbm_decay.density import zeta_profile

BASE = ["replicate", "time", "n", "total_mass", "zeta_max", "zmax", "rightmost", "chat_star",
        "d_0.5", "D_0.5"]

# frozen record schemas, one per preset (m_list = [0.5])
GOLDEN = {
    "front-lag": BASE + ["lag_D_0.5", "lag_rightmost"],
    "cstar": BASE,
    "max-density": BASE + ["zeta_max_running"],
    "surf-census": BASE + ["min_time_below_0", "below_0_C0.5", "below_0_C1", "below_0_C2",
                           "below_0_C4"],
    "mass-floor": BASE + ["floor_violations", "floor_checked", "floor_applicable"],
    "strip-growth": BASE + ["tube_4"],
    "self-correction": ["replicate", "time", "window_mass"],
    "bounds-verify": ["label", "bound", "empirical", "replicates", "ci_halfwidth", "pass"],
    "envelope": ["c", "alpha", "t", "beta", "u_t", "K", "passed", "first_failure",
                 "assumption_Q", "residual", "l_end", "proof_condition"],
}

PARAMS = {"self-correction": {"window": [-2, 2], "t1": 1.0}, "strip-growth": {"tubes": [4]},
          "envelope": {"c": 2.0}}
CURVES = {"surf-census": [{"kind": "G", "c": 1.0}], "mass-floor": [{"kind": "G", "c": 1.0}]}


def cfg_for(preset, **kw):
    d = {"preset": preset, "m_list": [0.5], "params": PARAMS.get(preset, {}),
         "curves": CURVES.get(preset, [])}
    d.update(kw)
    return config_from_dict(d)


# ------------------------------------------------------------ config

def test_minimal_config_defaults():
    cfg = parse_config('{"preset": "front-lag"}')
    assert cfg.sim.dt == 1e-3 and cfg.sim.seed == 0 and cfg.replicates == 1
    assert cfg.m_list == (0.25, 0.5, 0.75)


@pytest.mark.parametrize("text, where", [
    ('{"preset": "front-lag", "sim": {"dtt": 0.1}}', "dtt"),
    ('{"preset": "front-lag", "replicates": 0}', "replicates"),
    ('{"preset": "nope"}', "preset"),
    ('{"preset": "front-lag", "sim": {"initial": [[0, 1.5]]}}', "sim"),
    ('{"preset": "self-correction", "params": {"window": [0, 1]}}', "params.t1"),
    ('{"preset": "surf-census"}', "curves"),
    ('{"preset": "front-lag", "m_list": [0]}', "m_list[0]"),
    ('{"preset": "front-lag", "params": {"x": 1}}', "params.x"),
    ('{"preset": "front-lag",', "line 1"),
])
def test_config_errors_name_location(text, where):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert where in str(info.value)


def test_sim_hash_stable():
    a = sim_hash(SimConfig(seed=1))
    assert a == sim_hash(SimConfig(seed=1)) and a != sim_hash(SimConfig(seed=2))


def test_cstar_preset_defaults_to_gstar():
    assert cfg_for("cstar").curves == [GStar()]


@pytest.mark.parametrize("preset", sorted(GOLDEN))
def test_golden_schema(preset):
    assert preset_columns(cfg_for(preset)) == GOLDEN[preset]


# ------------------------------------------------------------ records

def test_record_writer_and_partial_line(tmp_path):
    p = tmp_path / "r.csv"
    with RecordWriter(p, ["a", "b"], {"preset": "x"}) as w:
        w.write({"a": 1, "b": 0.5})
        w.write({"a": 2, "b": None})
        with pytest.raises(KeyError):
            w.write({"c": 1})
    with open(p, "a") as fh:
        fh.write("3,0.2")  # interrupted row
    assert read_records(p) == [{"a": 1, "b": 0.5}, {"a": 2, "b": None}]
    assert read_header(p)["columns"] == ["a", "b"]


def make_state(horizon=3.0):
    cfg = SimConfig(horizon=horizon, dt=0.01, seed=3)
    s = init_population(cfg)
    register_curve(s, GStar())
    register_curve(s, G(1.0))
    register_tube(s, 2.0)
    s, _ = run(s, cfg)
    return s


def test_snapshot_roundtrip(tmp_path):
    s = make_state()
    p = tmp_path / "s.jsonl"
    snapshot(s, p, "abc")
    r = restore(p, "abc")
    assert state_hash(r) == state_hash(s)


def test_snapshot_hash_mismatch_warns(tmp_path):
    p = tmp_path / "s.jsonl"
    snapshot(make_state(0.1), p, "abc")
    with pytest.warns(UserWarning):
        restore(p, "other")


def test_truncated_snapshot_names_line(tmp_path):
    s = make_state()
    assert s.n >= 2
    p = tmp_path / "s.jsonl"
    snapshot(s, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(SnapshotError, match=f"line {len(lines)}"):
        restore(p)
    p.write_text("\n".join(lines[:2] + ["[1, 2"] + lines[3:]) + "\n")
    with pytest.raises(SnapshotError, match="line 3"):
        restore(p)


# ------------------------------------------------------------ experiments

def test_determinism_bytes(tmp_path):
    cfg = cfg_for("front-lag", sim={"horizon": 1.0, "dt": 0.01, "seed": 5}, replicates=3,
                  record_every=10)
    a = run_experiment(cfg, out_dir=tmp_path / "a")
    b = run_experiment(cfg, out_dir=tmp_path / "b")
    assert (tmp_path / "a" / "front-lag.csv").read_bytes() == \
        (tmp_path / "b" / "front-lag.csv").read_bytes()
    assert records_bytes(a.records) == records_bytes(b.records)


def test_workers_do_not_change_output():
    cfg = cfg_for("cstar", sim={"horizon": 1.0, "dt": 0.01, "seed": 5}, replicates=3,
                  record_every=20)
    par = cfg_for("cstar", sim={"horizon": 1.0, "dt": 0.01, "seed": 5}, replicates=3,
                  record_every=20, workers=2)
    assert records_bytes(run_experiment(cfg).records) == records_bytes(run_experiment(par).records)


def test_resume_equivalence(tmp_path):
    sim = {"horizon": 4.0, "dt": 0.01, "seed": 8}
    cfg = cfg_for("cstar", sim=sim, record_every=50)
    straight = run_experiment(cfg)
    snap = tmp_path / "mid.jsonl"
    first = run_experiment(cfg, snapshot_at=2.0, snapshot_path=snap)
    assert records_bytes(first.records) == records_bytes(straight.records)
    resumed = run_experiment(cfg, resume=restore(snap, sim_hash(cfg.sim)))
    tail = [r for r in straight.records if r["time"] > 2.0]
    assert records_bytes(resumed.records) == records_bytes(tail)


def test_front_lag_summary_contains_lag():
    cfg = cfg_for("front-lag", sim={"horizon": 3.0, "dt": 0.01, "seed": 1}, replicates=4,
                  record_every=100)
    res = run_experiment(cfg)
    final = res.summary["per_time"][repr(3.0)]
    assert "lag_D_0.5" in final and final["lag_D_0.5"]["count"] >= 1
    assert res.summary["chat_star_monotone"]


def test_max_density_and_strip_and_surf_presets():
    sim = {"horizon": 3.0, "dt": 0.01, "seed": 2}
    md = run_experiment(cfg_for("max-density", sim=sim, replicates=3, record_every=10))
    assert md.summary["fitted_replicates"] == 3
    sg = run_experiment(cfg_for("strip-growth", sim=sim, replicates=3, record_every=100))
    assert set(sg.summary["fraction_above_growth"]["4"]) == {repr(float(t)) for t in range(4)}
    sc = run_experiment(cfg_for("surf-census", sim=sim, replicates=3, record_every=100))
    fr = list(sc.summary["fraction_min_below"].values())
    assert all(b >= a for a, b in zip(fr, fr[1:]))  # more generous thresholds, more replicates


def test_mass_floor_preset():
    res = run_experiment(cfg_for("mass-floor", sim={"horizon": 3.0, "dt": 0.01, "seed": 4},
                                 replicates=3, record_every=100))
    assert res.summary["violations"] == 0


def test_self_correction_preset_sparse():
    init = [[x / 5 - 10, 0.005] for x in range(101)]
    cfg = cfg_for("self-correction", sim={"horizon": 1.0, "dt": 0.01, "initial": init},
                  replicates=200, record_every=10)
    res = run_experiment(cfg)
    assert 0.7 < res.summary["rate"] < 1.3 and res.summary["used"] == 200


def test_envelope_preset():
    res = run_experiment(cfg_for("envelope", params={"c": 2.0, "t_list": [10.0, 1e4]}))
    assert [r["passed"] for r in res.records] == [False, True]
    assert res.records[0]["first_failure"] == "u_t undefined"


def test_capacity_truncates_replicate():
    res = run_experiment(cfg_for("cstar", sim={"horizon": 5.0, "dt": 0.01, "seed": 1,
                                               "max_particles": 5}, replicates=2))
    assert res.summary["truncated"]


def test_summarize_quantiles():
    recs = [{"replicate": r, "time": 1.0, "x": float(r)} for r in range(11)]
    s = summarize(recs)["1.0"]["x"]
    assert s["median"] == 5.0 and s["q10"] == 1.0 and s["q90"] == 9.0


def test_output_dir_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    res = run_experiment(cfg_for("cstar", sim={"horizon": 0.1, "dt": 0.01}))
    assert res.records_path == tmp_path / "cstar.csv" and res.records_path.exists()
    assert read_records(res.records_path)[0]["time"] == 0.0


# ------------------------------------------------------------ plots

def test_plots():
    recs = run_experiment(cfg_for("front-lag", sim={"horizon": 1.0, "dt": 0.01},
                                  record_every=50)).records
    txt = emit_plot(recs, "front-lag", m=0.5)
    assert "'lag'" in txt and "'time'" in txt and "$lag << EOD" in txt
    empty = emit_plot([], "zeta-max")
    assert "EOD" in empty and "plot NaN" in empty
    prof = zeta_profile(make_state(0.1))
    z = emit_plot(prof, "zeta-profile")
    assert "with steps" in z
    with pytest.raises(ValueError):
        emit_plot(recs, "nope")
    for kind in ("zeta-max", "cstar"):
        assert "plot $" in emit_plot(recs, kind)


# ------------------------------------------------------------ CLI

def test_cli_simulate_report_snapshot(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"preset": "cstar", "sim": {"horizon": 2.0, "dt": 0.01},
                                "m_list": [0.5], "record_every": 50}))
    out = io.StringIO()
    snap = tmp_path / "snap.jsonl"
    rc = main(["simulate", "--config", str(conf), "--seed", "3", "--replicates", "2",
               "--out", str(tmp_path), "--snapshot-at", "1.0", "--snapshot", str(snap)], out)
    assert rc == 0 and json.loads(out.getvalue())["chat_star_monotone"]
    assert (tmp_path / "cstar.csv").exists() and (tmp_path / "cstar.summary.json").exists()
    out = io.StringIO()
    assert main(["report", "--records", str(tmp_path / "cstar.csv"), "--plot", "cstar"], out) == 0
    assert (tmp_path / "cstar.cstar.gp").exists()
    out = io.StringIO()
    assert main(["snapshot-tools", str(snap)], out) == 0
    assert json.loads(out.getvalue())["step_count"] == 100
    out = io.StringIO()
    rc = main(["simulate", "--config", str(conf), "--seed", "3", "--resume", str(snap)], out)
    assert rc == 0


def test_cli_envelope_and_errors(tmp_path, capsys):
    out = io.StringIO()
    assert main(["envelope", "--c", "2.0", "--t", "1e4"], out) == 0
    assert json.loads(out.getvalue())["all_pass"]
    bad = tmp_path / "bad.json"
    bad.write_text('{"preset": "front-lag", "sim": {"dtt": 1}}')
    assert main(["simulate", "--config", str(bad)], io.StringIO()) == 2
    assert "dtt" in capsys.readouterr().err


def test_cli_bounds_small(tmp_path):
    conf = tmp_path / "b.json"
    conf.write_text(json.dumps({"preset": "bounds-verify", "params": {"n_steps": 64}}))
    out = io.StringIO()
    rc = main(["bounds", "--config", str(conf), "--replicates", "2000"], out)
    summary = json.loads(out.getvalue())
    assert rc == (0 if summary["all_pass"] else 1)
