"""Report tables and SVG plots built from an analysis output tree.

Everything here reads only the CSV files written by
:func:`hdsemg_shift.session_io.write_outputs`, so a report can be rebuilt
from the tables alone. The SVG writer is deliberately small and emits
fixed-precision coordinates so repeated runs give identical bytes.
"""

import math
import shutil
from pathlib import Path

from .errors import FileFormatError
from .features import FEATURE_COLUMNS
from .session_io import read_csv, write_csv

STRATUM_TABLES = ("curve.csv", "curve_abs.csv", "fit.csv", "same_location.csv", "fraction_below.csv",
                  "residuals.csv", "tests.csv")
VOLT_FEATURES = ("max_env",)

W, H = 520, 340
LEFT, RIGHT, TOP, BOTTOM = 64, 20, 34, 48


def _f(v):
    return float("nan") if v in ("", "nan", None) else float(v)


def nice_ticks(lo, hi, n=5):
    """Round tick positions spanning [lo, hi]."""
    if not hi > lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.floor(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-9 * step:
        ticks.append(round(t, 12))
        t += step
    if ticks[-1] < hi:
        ticks.append(round(ticks[-1] + step, 12))
    return ticks


def _esc(text):
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


class _Plot:
    def __init__(self, title, xlabel, ylabel, xmax, ymax):
        self.xt = nice_ticks(0.0, xmax)
        self.yt = nice_ticks(0.0, ymax)
        self.xmax, self.ymax = self.xt[-1], self.yt[-1]
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            f'font-family="sans-serif" font-size="11">',
            f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        ]
        self._axes(xlabel, ylabel)

    def sx(self, x):
        return LEFT + (W - LEFT - RIGHT) * x / self.xmax

    def sy(self, y):
        return H - BOTTOM - (H - TOP - BOTTOM) * y / self.ymax

    def _axes(self, xlabel, ylabel):
        x0, y0, x1, y1 = LEFT, H - BOTTOM, W - RIGHT, TOP
        p = self.parts
        p.append('<g stroke="#dddddd" stroke-width="1">')
        for t in self.yt:
            p.append(f'<line x1="{x0}" y1="{self.sy(t):.2f}" x2="{x1}" y2="{self.sy(t):.2f}"/>')
        p.append("</g>")
        p.append(f'<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>')
        for t in self.xt:
            p.append(f'<text x="{self.sx(t):.2f}" y="{y0 + 16}" text-anchor="middle">{_tick(t)}</text>')
        for t in self.yt:
            p.append(f'<text x="{x0 - 6}" y="{self.sy(t) + 4:.2f}" text-anchor="end">{_tick(t)}</text>')
        p.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{H - 10}" text-anchor="middle">{_esc(xlabel)}</text>')
        p.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
                 f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{_esc(ylabel)}</text>')

    def _clip(self, y):
        return min(max(y, 0.0), self.ymax)

    def band(self, xs, lo, hi, color):
        pts = [(x, a) for x, a in zip(xs, lo) if not math.isnan(a)]
        top = [(x, b) for x, b in zip(xs, hi) if not math.isnan(b)]
        if len(pts) < 2:
            return
        path = [(self.sx(x), self.sy(self._clip(y))) for x, y in pts + top[::-1]]
        d = " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(path)) + " Z"
        self.parts.append(f'<path d="{d}" fill="{color}" fill-opacity="0.25" stroke="none"/>')

    def line(self, xs, ys, color, dash=None, width=1.5):
        pts = [(self.sx(x), self.sy(self._clip(y))) for x, y in zip(xs, ys) if not math.isnan(y)]
        if len(pts) < 2:
            return
        d = " ".join(f"{'M' if i == 0 else 'L'}{x:.2f},{y:.2f}" for i, (x, y) in enumerate(pts))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>')

    def hline(self, y, color, dash="6,4"):
        if math.isnan(y):
            return
        yy = self.sy(self._clip(y))
        self.parts.append(f'<line x1="{LEFT}" y1="{yy:.2f}" x2="{W - RIGHT}" y2="{yy:.2f}" stroke="{color}" '
                          f'stroke-width="1.5" stroke-dasharray="{dash}"/>')

    def legend(self, items):
        y = TOP + 6
        for label, color, dash in items:
            extra = f' stroke-dasharray="{dash}"' if dash else ""
            x = W - RIGHT - 150
            self.parts.append(f'<line x1="{x}" y1="{y}" x2="{x + 22}" y2="{y}" stroke="{color}" '
                              f'stroke-width="1.5"{extra}/>')
            self.parts.append(f'<text x="{x + 28}" y="{y + 4}">{_esc(label)}</text>')
            y += 15

    def svg(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _tick(t):
    return f"{t:g}"


def _ymax(*series):
    vals = [v for s in series for v in s if not math.isnan(v)]
    return max(vals) if vals else 1.0


def curve_svg(stratum, curve_rows, fit_row=None, sl_row=None, scale=1.0, ylabel="mean abs. difference (%)",
              mean_key="mean_pct", lo_key="ci_lo_pct", hi_key="ci_hi_pct", sl_key="median_pct"):
    """Mean difference vs distance with CI band, fitted curve and same-location median."""
    xs = [_f(r["distance_cm"]) for r in curve_rows]
    mean = [_f(r[mean_key]) * scale for r in curve_rows]
    lo = [_f(r[lo_key]) * scale for r in curve_rows]
    hi = [_f(r[hi_key]) * scale for r in curve_rows]
    sl = _f(sl_row[sl_key]) * scale if sl_row else float("nan")
    plot = _Plot(stratum, "electrode distance (cm)", ylabel, max(xs) if xs else 1.0,
                 1.05 * _ymax(mean, hi, [sl]))
    plot.band(xs, lo, hi, "#1f77b4")
    plot.line(xs, mean, "#1f77b4")
    legend = [("mean, 95% CI", "#1f77b4", None)]
    if fit_row is not None and scale == 1.0:
        a, lam = _f(fit_row["amplitude_A_pct"]), _f(fit_row["length_scale_lambda_cm"])
        grid = [plot.xmax * i / 200 for i in range(201)]
        plot.line(grid, [a * -math.expm1(-x / lam) for x in grid], "#d62728", width=1.2)
        legend.append(("inverse-exponential fit", "#d62728", None))
    if not math.isnan(sl):
        plot.hline(sl, "#2ca02c")
        legend.append(("same-location median", "#2ca02c", "6,4"))
    plot.legend(legend)
    return plot.svg()


def fraction_svg(stratum, rows):
    xs = [_f(r["distance_cm"]) for r in rows]
    ys = [100 * _f(r["fraction_below"]) for r in rows]
    plot = _Plot(stratum, "electrode distance (cm)", "differences below same-location median (%)",
                 max(xs) if xs else 1.0, 100.0)
    plot.line(xs, ys, "#9467bd")
    return plot.svg()


def _read_optional(path):
    return read_csv(path)[0] if path.is_file() else None


def _collect(rows_by_stratum):
    header, rows = None, []
    for name, row in rows_by_stratum:
        if header is None:
            header = ["stratum", *row.keys()]
        rows.append([name, *row.values()])
    return header, rows


def build_report(analysis_dir, out_dir, strata=None, emit_volts=False):
    """Write per-stratum plots and cross-stratum tables under ``out_dir``.

    Stratum CSVs are copied next to their plots. ``strata`` optionally
    restricts the report to the named stratum directories. With
    ``emit_volts`` the max-envelope strata also get tables and plots of
    absolute differences in volts. Returns the list of files written.
    """
    src = Path(analysis_dir) / "strata"
    if not src.is_dir():
        raise FileFormatError(f"{analysis_dir}: no strata/ directory; run analyze first")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = sorted(p.name for p in src.iterdir() if p.is_dir())
    if strata is not None:
        wanted = set(strata)
        missing = wanted - set(names)
        if missing:
            raise FileFormatError(f"strata not found in {src}: {sorted(missing)}")
        names = [n for n in names if n in wanted]
    written = []
    fits, medians, tests = [], [], []
    for name in names:
        s, d = src / name, out / "strata" / name
        d.mkdir(parents=True, exist_ok=True)
        for tbl in STRATUM_TABLES:
            if (s / tbl).is_file() and (s / tbl).resolve() != (d / tbl).resolve():
                shutil.copyfile(s / tbl, d / tbl)
        curve = _read_optional(d / "curve.csv")
        fit = _read_optional(d / "fit.csv")
        sl = _read_optional(d / "same_location.csv")
        tst = _read_optional(d / "tests.csv")
        frac = _read_optional(d / "fraction_below.csv")
        fit, sl, tst = (x[0] if x else None for x in (fit, sl, tst))
        if fit:
            fits.append((name, fit))
        if sl:
            medians.append((name, sl))
        if tst:
            tests.append((name, tst))
        if curve:
            (d / "curve.svg").write_text(curve_svg(name, curve, fit, sl))
            written.append(d / "curve.svg")
        if frac:
            (d / "fraction_below.svg").write_text(fraction_svg(name, frac))
            written.append(d / "fraction_below.svg")
        feature = name.split("__", 1)[0]
        if emit_volts and feature in VOLT_FEATURES and (d / "curve_abs.csv").is_file():
            written += _emit_volts(name, d, sl)
    for fname, rows in (("fits.csv", fits), ("medians.csv", medians), ("pvalues.csv", tests)):
        if rows:
            header, body = _collect(rows)
            write_csv(out / fname, header, body)
            written.append(out / fname)
    return written


def _emit_volts(name, d, sl):
    feature = name.split("__", 1)[0]
    unit = FEATURE_COLUMNS[feature].rsplit("_", 1)[-1]
    rows = read_csv(d / "curve_abs.csv")[0]
    vrows = [[r["distance_cm"], r["n"], r["mean_abs"], r["ci_lo_abs"], r["ci_hi_abs"]] for r in rows]
    write_csv(d / "volts_curve.csv", ["distance_cm", "n", f"mean_abs_{unit}", f"ci_lo_{unit}", f"ci_hi_{unit}"],
              vrows)
    files = [d / "volts_curve.csv"]
    if sl:
        write_csv(d / "volts_same_location.csv", [f"median_abs_{unit}", "n_pairs"],
                  [[sl["median_abs"], sl["n_pairs"]]])
        files.append(d / "volts_same_location.csv")
    # plotted in millivolts for readable tick labels
    svg = curve_svg(name + " (volts)", rows, None, sl, scale=1e3, ylabel="mean abs. difference (mV)",
                    mean_key="mean_abs", lo_key="ci_lo_abs", hi_key="ci_hi_abs", sl_key="median_abs")
    (d / "volts.svg").write_text(svg)
    files.append(d / "volts.svg")
    return files

