"""Self-contained gnuplot scripts with inline data blocks."""

from __future__ import annotations

from ..curves import cstar
from ..density import DensityProfile

KINDS = ("front-lag", "zeta-profile", "zeta-max", "cstar")


def _block(name: str, columns, rows) -> str:
    lines = [f"${name} << EOD", " ".join(columns)]
    for r in rows:
        lines.append(" ".join("NaN" if r.get(c) is None else repr(float(r[c])) for c in columns))
    lines.append("EOD")
    return "\n".join(lines)


def _plot_or_empty(rows, plot_cmd):
    # gnuplot rejects "plot" on an empty data block; fall back to an empty frame
    if rows:
        return plot_cmd
    return "set label 1 'no records' at graph 0.5, graph 0.5 center\nplot NaN notitle"


def emit_plot(records, kind: str, m: float = 0.5, time: float | None = None) -> str:
    """Gnuplot script text for one of ``front-lag``, ``zeta-profile``, ``zeta-max``, ``cstar``.

    ``zeta-profile`` accepts a :class:`DensityProfile` in place of records.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown plot kind {kind!r}; choose from {', '.join(KINDS)}")
    head = ["set terminal pngcairo size 900,600", f"set output '{kind}.png'", "set key left top",
            "set grid", "set datafile missing 'NaN'"]
    if kind == "zeta-profile":
        if isinstance(records, DensityProfile):
            rows = [{"x": float(x), "zeta": float(v)}
                    for x, v in zip(records.breakpoints, records.values[1:])]
        else:
            rows = [r for r in records if time is None or r.get("time") == time]
        data = _block("profile", ["x", "zeta"], rows)
        body = _plot_or_empty(rows,
                              "set xlabel 'x'\nset ylabel 'zeta'\n"
                              "plot $profile using 'x':'zeta' with steps lw 2 title 'zeta(t, x)'")
        return "\n".join(head + [data, body]) + "\n"
    records = list(records)
    if kind == "front-lag":
        col = f"lag_D_{m:g}"
        rows = [{"time": r["time"], "lag": r.get(col), "lag_rightmost": r.get("lag_rightmost")}
                for r in records]
        data = _block("lag", ["time", "lag", "lag_rightmost"], rows)
        body = _plot_or_empty(rows, (
            "set xlabel 't'\nset ylabel 'sqrt(2) t - position'\n"
            f"cs = {cstar()!r}\n"
            f"plot $lag using 'time':'lag' with points pt 7 ps 0.6 title 'front lag at m = {m:g}', \\\n"
            "     $lag using 'time':'lag_rightmost' with points pt 6 ps 0.6 title 'rightmost lag', \\\n"
            "     cs * x**(1.0/3) with lines lw 2 title 'c* t^{1/3}'"))
    elif kind == "zeta-max":
        rows = [{"time": r["time"], "zeta_max": r.get("zeta_max")} for r in records]
        data = _block("zmax", ["time", "zeta_max"], rows)
        body = _plot_or_empty(rows, (
            "set logscale x\nset xlabel 't'\nset ylabel 'max_x zeta'\n"
            "plot $zmax using 'time':'zeta_max' with points pt 7 ps 0.6 title 'max density'"))
    else:
        rows = [{"replicate": r["replicate"], "time": r["time"], "chat_star": r.get("chat_star")}
                for r in records]
        data = _block("chat", ["replicate", "time", "chat_star"], rows)
        body = _plot_or_empty(rows, (
            "set xlabel 't'\nset ylabel 'least sup-deficit'\n"
            "plot $chat using 'time':'chat_star':'replicate' with points pt 7 ps 0.5 "
            "lc variable title 'C* estimate per replicate'"))
    return "\n".join(head + [data, body]) + "\n"
