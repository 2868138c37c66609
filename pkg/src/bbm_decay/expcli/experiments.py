"""Experiment presets: replicate orchestration, streamed records and summaries."""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import bounds as bnd
from .. import curves as crv
from ..density import (front_stats, profile_from_arrays, self_correction_rate, windowed_mass,
                       zmax_arrays)
from ..engine import (CapacityError, InvariantViolation, PopulationState, init_ensemble, run)
from ..lineage import (MassFloorMonitor, cstar_estimate, mass_floor_check, register_curve,
                       register_tube, time_below, tube_count)
from .config import ExperimentConfig, sim_hash
from .records import RecordWriter, snapshot

OUT_ENV = "BBM_DECAY_OUT"


def _mkey(m: float) -> str:
    return f"{m:g}"


def base_columns(m_list) -> list[str]:
    cols = ["replicate", "time", "n", "total_mass", "zeta_max", "zmax", "rightmost", "chat_star"]
    for m in m_list:
        cols += [f"d_{_mkey(m)}", f"D_{_mkey(m)}"]
    return cols


def preset_columns(cfg: ExperimentConfig) -> list[str]:
    p = cfg.preset
    if p == "bounds-verify":
        return ["label", "bound", "empirical", "replicates", "ci_halfwidth", "pass"]
    if p == "envelope":
        return ["c", "alpha", "t", "beta", "u_t", "K", "passed", "first_failure", "assumption_Q",
                "residual", "l_end", "proof_condition"]
    if p == "self-correction":
        return ["replicate", "time", "window_mass"]
    cols = base_columns(cfg.m_list)
    if p == "front-lag":
        cols += [f"lag_D_{_mkey(m)}" for m in cfg.m_list] + ["lag_rightmost"]
    elif p == "max-density":
        cols += ["zeta_max_running"]
    elif p == "surf-census":
        for h in range(len(cfg.curves)):
            cols += [f"min_time_below_{h}"]
            cols += [f"below_{h}_C{_mkey(C)}" for C in cfg.params["thresholds"]]
    elif p == "mass-floor":
        cols += ["floor_violations", "floor_checked", "floor_applicable"]
    elif p == "strip-growth":
        cols += [f"tube_{_mkey(c)}" for c in cfg.params["tubes"]]
    return cols


def base_row(state: PopulationState, m_list, chat_handle: int | None, replicate: int) -> dict:
    pos, mass = state.position, state.mass
    prof = profile_from_arrays(pos, mass)
    row = {"replicate": replicate, "time": float(state.time), "n": int(state.n),
           "total_mass": float(np.sum(mass, dtype=np.longdouble)),
           "zeta_max": prof.max, "zmax": zmax_arrays(pos, mass)[1],
           "rightmost": float(pos[-1]) if pos.size else None,
           "chat_star": cstar_estimate(state, chat_handle) if chat_handle is not None else None}
    for fs in front_stats(state, m_list, prof):
        row[f"d_{_mkey(fs.m)}"] = fs.d
        row[f"D_{_mkey(fs.m)}"] = fs.D
    return row


@dataclass
class ReplicateOutcome:
    replicate: int
    rows: list
    truncated: bool = False
    info: dict = field(default_factory=dict)


class _ChatMonotone:
    """Every-step check that the least sup-deficit never decreases."""

    def __init__(self, handle):
        self.handle = handle
        self.prev = -math.inf

    def __call__(self, state):
        cur = cstar_estimate(state, self.handle)
        if cur is not None:
            if cur < self.prev:
                raise InvariantViolation(f"least sup-deficit fell from {self.prev!r} to {cur!r} "
                                         f"at t={state.time}")
            self.prev = cur
        return None


def _sim_replicate(cfg: ExperimentConfig, r: int, sink: Callable | None = None,
                   resume: PopulationState | None = None, snapshot_at: float | None = None,
                   snapshot_path=None) -> ReplicateOutcome:
    sim, p = cfg.sim, cfg.preset
    if resume is None:
        state = init_ensemble(sim, 1, first=r)
        chat = None
        if p in ("front-lag", "cstar"):
            chat = register_curve(state, cfg.curves[0] if cfg.curves else crv.GStar())
        elif p in ("surf-census", "mass-floor"):
            for c in cfg.curves:
                register_curve(state, c)
        if p == "strip-growth":
            for c in cfg.params["tubes"]:
                register_tube(state, float(c))
    else:
        state = resume
        r = int(state.replica_index[0])
        chat = 0 if p in ("front-lag", "cstar") else None

    rows: list[dict] = []
    info: dict = {}
    every_step: list = []
    monitor = None
    if chat is not None:
        every_step.append(_ChatMonotone(chat))
    if p == "mass-floor":
        beta = cfg.params["beta"] if cfg.params["beta"] is not None else 1.0 / max(sim.horizon, 1e-12)
        info["beta"] = beta
        monitor = MassFloorMonitor(0, beta)
        every_step.append(monitor)
    running = {"zeta_max": 0.0}

    def record(state):
        row = base_row(state, cfg.m_list, chat, r)
        t = state.time
        if p == "front-lag":
            for m in cfg.m_list:
                D = row[f"D_{_mkey(m)}"]
                row[f"lag_D_{_mkey(m)}"] = None if D is None else math.sqrt(2) * t - D
            row["lag_rightmost"] = math.sqrt(2) * t - row["rightmost"]
        elif p == "max-density":
            running["zeta_max"] = max(running["zeta_max"], row["zeta_max"])
            row["zeta_max_running"] = running["zeta_max"]
        elif p == "surf-census":
            for h in range(len(cfg.curves)):
                tb = time_below(state, h)
                row[f"min_time_below_{h}"] = float(tb.min())
                for C in cfg.params["thresholds"]:
                    row[f"below_{h}_C{_mkey(C)}"] = int(np.count_nonzero(tb <= C * t ** (1 / 3)))
        elif p == "mass-floor":
            res = mass_floor_check(state, 0, info["beta"], monitor, cfg.params["tol"])
            row["floor_violations"] = res.violations
            row["floor_checked"] = res.checked
            row["floor_applicable"] = res.applicable
        elif p == "strip-growth":
            for c in cfg.params["tubes"]:
                row[f"tube_{_mkey(c)}"] = tube_count(state, float(c))
        rows.append(row)
        if sink is not None:
            sink(row)

    def observer(state):
        for obs in every_step:
            obs(state)
        if state.step_count % cfg.record_every == 0 or state.step_count == sim.n_steps:
            record(state)
        return None

    if resume is None:
        for obs in every_step:
            obs(state)
        record(state)
    truncated = False
    try:
        if snapshot_at is not None and state.time < snapshot_at:
            stop = int(round(snapshot_at / sim.dt))
            state, _ = run(state, sim, [observer], until_step=stop)
            snapshot(state, snapshot_path, sim_hash(sim))
        state, _ = run(state, sim, [observer])
    except CapacityError as err:
        truncated = True
        info["capacity"] = str(err)
    info["final_n"] = int(state.n)
    return ReplicateOutcome(r, rows, truncated, info)


def _self_correction(cfg: ExperimentConfig, sink) -> list[ReplicateOutcome]:
    sim = cfg.sim
    lo, hi = cfg.params["window"]
    outs = []
    batch = 1000
    for first in range(0, cfg.replicates, batch):
        m = min(batch, cfg.replicates - first)
        state = init_ensemble(sim, m, first=first)
        series: list[tuple[float, np.ndarray]] = [(state.time, windowed_mass(state, lo, hi))]

        def obs(st):
            series.append((st.time, windowed_mass(st, lo, hi)))

        state, _ = run(state, sim, [obs], every=cfg.record_every, on_capacity="drop")
        for j in range(m):
            rows = [{"replicate": first + j, "time": t, "window_mass": float(w[j])}
                    for t, w in series]
            for row in rows:
                if sink is not None:
                    sink(row)
            outs.append(ReplicateOutcome(first + j, rows, not bool(state.active[j])))
    return outs


def _bounds_rows(cfg: ExperimentConfig) -> list[dict]:
    reps = bnd.bounds_suite(cfg.replicates, cfg.sim.seed, cfg.params["n_steps"])
    rows = []
    for rep in reps:
        if isinstance(rep, bnd.DistributionReport):
            rows.append({"label": rep.label, "bound": rep.tv_threshold, "empirical": rep.tv,
                         "replicates": rep.replicates, "ci_halfwidth": 0.0, "pass": rep.passed})
        else:
            rows.append({"label": rep.label, "bound": rep.bound, "empirical": rep.empirical,
                         "replicates": rep.replicates, "ci_halfwidth": rep.ci_halfwidth,
                         "pass": rep.passed})
    return rows


def _envelope_rows(cfg: ExperimentConfig) -> list[dict]:
    c = cfg.params["c"]
    lsol = crv.solve_l(c)
    rows = []
    for t in cfg.params["t_list"]:
        row = {"c": c, "alpha": lsol.alpha, "t": float(t), "residual": lsol.residual,
               "l_end": lsol.l_end}
        try:
            env = crv.compute_envelope(lsol, float(t), cfg.params["beta"],
                                       n_grid=cfg.params["n_grid"])
        except crv.ParameterError as err:
            row.update(passed=False, first_failure=err.condition)
            rows.append(row)
            continue
        rep = crv.check_delta_properties(env)
        K = rep.K if rep.K is not None else env.K
        f = crv.barrier_minus_width(c, env.beta, float(t), K)
        row.update(beta=env.beta, u_t=env.u_t, K=rep.K, passed=rep.passed,
                   first_failure=rep.first_failure, proof_condition=rep.proof_condition,
                   assumption_Q=crv.assumption_A_sup(f, env))
        rows.append(row)
    return rows


def _numeric(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v is not None


def summarize(records: list[dict], exclude=("replicate", "time")) -> dict:
    """Per-time quantiles (10%, 50%, 90%) of every numeric column across replicates."""
    if not records or "time" not in records[0]:
        return {}
    by_time: dict[float, list[dict]] = {}
    for r in records:
        by_time.setdefault(float(r["time"]), []).append(r)
    out: dict = {}
    for t in sorted(by_time):
        rows = by_time[t]
        entry = {}
        for col in rows[0]:
            if col in exclude:
                continue
            vals = [float(r[col]) for r in rows if _numeric(r.get(col))]
            if not vals:
                continue
            q = np.quantile(np.array(vals), [0.1, 0.5, 0.9])
            entry[col] = {"q10": float(q[0]), "median": float(q[1]), "q90": float(q[2]),
                          "count": len(vals)}
        out[repr(t)] = entry
    return out


def log_vs_linear(times, values) -> tuple[float, float]:
    """Residual sums of squares of least-squares fits a log t + b and a t + b."""
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    res = []
    for x in (np.log(t), t):
        A = np.vstack((x, np.ones_like(x))).T
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        res.append(float(np.sum((A @ coef - y) ** 2)))
    return res[0], res[1]


def preset_summary(cfg: ExperimentConfig, records: list[dict], outcomes) -> dict:
    p = cfg.preset
    extra: dict = {}
    if p == "bounds-verify":
        extra["all_pass"] = all(bool(r["pass"]) for r in records)
        return extra
    if p == "envelope":
        extra["all_pass"] = all(bool(r.get("passed")) for r in records)
        return extra
    if p == "self-correction":
        times = sorted({float(r["time"]) for r in records})
        reps = sorted({int(r["replicate"]) for r in records})
        idx = {t: k for k, t in enumerate(times)}
        wm = np.zeros((len(reps), len(times)))
        rpos = {rr: k for k, rr in enumerate(reps)}
        for r in records:
            wm[rpos[int(r["replicate"])], idx[float(r["time"])]] = float(r["window_mass"])
        g = self_correction_rate(times, wm, cfg.params["t0"], cfg.params["t1"])
        extra.update(rate=g.rate, used=g.used, dropped=g.dropped)
        return extra
    per_rep: dict[int, list[dict]] = {}
    for r in records:
        per_rep.setdefault(int(r["replicate"]), []).append(r)
    if p == "cstar" or p == "front-lag":
        mono = {}
        for rr, rows in per_rep.items():
            v = [row["chat_star"] for row in rows if row.get("chat_star") is not None]
            mono[rr] = all(b >= a for a, b in zip(v, v[1:]))
        extra["chat_star_monotone"] = all(mono.values())
    if p == "max-density":
        t0 = cfg.params["t_start"]
        wins = []
        for rr, rows in per_rep.items():
            # the running max is usually flat after t0, which ties both fits at zero
            pts = [(row["time"], row["zeta_max"]) for row in rows if row["time"] >= t0]
            if len(pts) >= 3:
                a, b = log_vs_linear(*zip(*pts))
                wins.append(a < b)
        extra["log_fit_wins_fraction"] = float(np.mean(wins)) if wins else None
        extra["fitted_replicates"] = len(wins)
    if p == "mass-floor":
        last = [rows[-1] for rows in per_rep.values()]
        extra["violations"] = int(sum(r["floor_violations"] or 0 for r in last))
        extra["applicable_replicates"] = int(sum(bool(r["floor_applicable"]) for r in last))
    if p == "strip-growth":
        eps = cfg.params["eps"]
        frac = {}
        for c in cfg.params["tubes"]:
            by_t: dict[float, list[bool]] = {}
            for r in records:
                by_t.setdefault(float(r["time"]), []).append(
                    r[f"tube_{_mkey(c)}"] >= (math.e - eps) ** float(r["time"]))
            frac[_mkey(c)] = {repr(t): float(np.mean(v)) for t, v in sorted(by_t.items())}
        extra["fraction_above_growth"] = frac
    if p == "surf-census":
        final = [rows[-1] for rows in per_rep.values()]
        t = float(final[0]["time"]) if final else 0.0
        frac = {}
        for h in range(len(cfg.curves)):
            for C in cfg.params["thresholds"]:
                frac[f"{h}:{_mkey(C)}"] = float(np.mean(
                    [r[f"min_time_below_{h}"] <= C * t ** (1 / 3) for r in final]))
        extra["fraction_min_below"] = frac
    extra["truncated"] = [o.replicate for o in outcomes if o.truncated]
    return extra


@dataclass
class ExperimentResult:
    records: list
    summary: dict
    outcomes: list
    records_path: Path | None = None


def _worker(args):
    cfg, r = args
    return _sim_replicate(cfg, r)


def output_dir(cfg: ExperimentConfig) -> Path | None:
    d = cfg.output_dir or os.environ.get(OUT_ENV)
    return Path(d) if d else None


def run_experiment(cfg: ExperimentConfig, out_dir=None, resume: PopulationState | None = None,
                   snapshot_at: float | None = None, snapshot_path=None) -> ExperimentResult:
    """Run every replicate of a preset, streaming rows to ``records.csv`` when an
    output directory is configured.  Replicates are merged in index order, so the
    output does not depend on ``workers``.
    """
    out = Path(out_dir) if out_dir is not None else output_dir(cfg)
    writer = None
    path = None
    if out is not None:
        path = out / f"{cfg.preset}.csv"
        writer = RecordWriter(path, preset_columns(cfg),
                              {"preset": cfg.preset, "config": cfg.to_dict(),
                               "seed": cfg.sim.seed, "config_hash": sim_hash(cfg.sim)})
    sink = writer.write if writer is not None else None
    records: list[dict] = []
    outcomes: list[ReplicateOutcome] = []
    try:
        if cfg.preset == "bounds-verify":
            records = _bounds_rows(cfg)
        elif cfg.preset == "envelope":
            records = _envelope_rows(cfg)
        elif cfg.preset == "self-correction":
            outcomes = _self_correction(cfg, sink)
            records = [row for o in outcomes for row in o.rows]
            sink = None
        elif resume is not None:
            outcomes = [_sim_replicate(cfg, 0, sink, resume=resume)]
        elif cfg.workers > 1 and cfg.replicates > 1:
            with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
                for o in ex.map(_worker, [(cfg, r) for r in range(cfg.replicates)]):
                    outcomes.append(o)
                    for row in o.rows:
                        if sink is not None:
                            sink(row)
            sink = None
        else:
            for r in range(cfg.replicates):
                outcomes.append(_sim_replicate(
                    cfg, r, sink, snapshot_at=snapshot_at if r == 0 else None,
                    snapshot_path=snapshot_path))
            sink = None
        if outcomes and not records:
            records = [row for o in outcomes for row in o.rows]
        if cfg.preset in ("bounds-verify", "envelope") and writer is not None:
            for row in records:
                writer.write(row)
    finally:
        if writer is not None:
            writer.close()
    summary = {"per_time": summarize(records), **preset_summary(cfg, records, outcomes)}
    return ExperimentResult(records, summary, outcomes, path)
