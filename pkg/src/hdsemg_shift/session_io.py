"""Session manifests and the end-to-end pipeline.

A manifest is a JSON document binding recordings, optional manual segment
files and scan triples to the protocol structure, muscle x exercise x shift
index::

    {
      "schema_version": 1,
      "participant": "P01",
      "entries": [
        {"muscle": "GM", "exercise": "ISO", "shift_index": 0,
         "recording": "recordings/P01_GM_ISO_s0.bin"},
        {"muscle": "GM", "exercise": "ISO", "shift_index": 1,
         "recording": "recordings/P01_GM_ISO_s1.bin",
         "segments": null,
         "scans": {"pre": "scans/GM_s1_pre.json", "post": "scans/GM_s1_post.json",
                   "bare": "scans/GM_s1_bare.json"}}
      ]
    }

Paths are relative to the manifest's directory. The scans of entry ``k``
describe the move from placement ``k - 1`` to placement ``k``.

Output tree written by :func:`write_outputs`::

    summary.json              config, seeds, entry status, shifts, per-stratum results
    entries.csv               one row per manifest entry
    shifts.csv                recovered (x, y, theta) per shift pair
    strata/<stratum>/         one directory per StratumKey
        curve.csv             distance, n, mean percent difference, CI
        curve_abs.csv         the same in feature units (V, V^2, V*s for amplitude features)
        fit.csv               inverse-exponential parameters and goodness flag
        same_location.csv     same-location median, IQR, n
        residuals.csv         per-channel residuals after subtracting the fit
        tests.csv             signed-rank tests on the residuals
        fraction_below.csv    fraction of intra-recording differences below the same-location median

Stratum directories are named ``<feature>__<muscle>__<exercise>`` or
``<feature>__combined`` for the pool over all muscles and exercises.
"""

import csv
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    PairDifferences,
    fit_inverse_exponential,
    fraction_below,
    intra_pairwise,
    mean_curve_with_ci,
    residual_test,
    same_channel_values,
    same_location_values,
    summarize_same_location,
)
from .config import PipelineConfig
from .errors import AnalysisDegeneracyError, HDsEMGError, ManifestError
from .features import FEATURES, FeatureExtractor
from .grid_geometry import GridLayout, closest_channel_map, electrode_positions, extract_shift, read_scan, write_scan
from .recording import read_recording, read_recording_header, write_recording
from .segmentation import apply_manual_segments, read_boundaries_csv, segment_isometric, write_boundaries_csv
from .signal_core import preprocess
from .stats import derive_seed
from .synthetic import EXERCISES, MUSCLES

MANIFEST_SCHEMA_VERSION = 1
SHIFT_INDICES = (0, 1, 2, 3)
SCAN_ROLES = ("pre", "post", "bare")
_SCAN_KIND = {"pre": "pre", "post": "post", "bare": "no-array"}
COMBINED = "combined"


@dataclass(frozen=True)
class ManifestEntry:
    muscle: str
    exercise: str
    shift_index: int
    recording: Path
    segments: Path = None
    scans: dict = None

    @property
    def entry_id(self):
        return f"{self.muscle}_{self.exercise}_s{self.shift_index}"


@dataclass(frozen=True)
class SessionManifest:
    participant: str
    entries: tuple
    root: Path = Path(".")

    def find(self, muscle, exercise, shift_index):
        for e in self.entries:
            if (e.muscle, e.exercise, e.shift_index) == (muscle, exercise, shift_index):
                return e
        return None

    def to_json(self):
        """Normalized document: entries in protocol order, paths relative to ``root``."""

        def rel(p):
            return None if p is None else Path(os.path.relpath(p, self.root)).as_posix()

        items = []
        for e in sorted(self.entries, key=_protocol_order):
            doc = {"muscle": e.muscle, "exercise": e.exercise, "shift_index": e.shift_index,
                   "recording": rel(e.recording), "segments": rel(e.segments)}
            doc["scans"] = None if e.scans is None else {r: rel(e.scans[r]) for r in SCAN_ROLES}
            items.append(doc)
        return {"schema_version": MANIFEST_SCHEMA_VERSION, "participant": self.participant, "entries": items}


def _protocol_order(e):
    return MUSCLES.index(e.muscle), EXERCISES.index(e.exercise), e.shift_index


@dataclass(frozen=True, order=True)
class StratumKey:
    feature: str
    muscle: str = COMBINED
    exercise: str = COMBINED

    @property
    def is_combined(self):
        return self.muscle == COMBINED

    @property
    def dirname(self):
        return f"{self.feature}__{COMBINED}" if self.is_combined else f"{self.feature}__{self.muscle}__{self.exercise}"

    @classmethod
    def parse(cls, text):
        """Parse ``feature,muscle,exercise`` or ``feature,combined``."""
        parts = [p.strip() for p in text.split(",")]
        if len(parts) == 2 and parts[1] == COMBINED:
            key = cls(parts[0])
        elif len(parts) == 3:
            key = cls(*parts)
            if key.muscle not in MUSCLES or key.exercise not in EXERCISES:
                raise ValueError(f"unknown muscle/exercise in stratum {text!r}")
        else:
            raise ValueError(f"stratum must be feature,muscle,exercise or feature,combined; got {text!r}")
        if key.feature not in FEATURES:
            raise ValueError(f"unknown feature {key.feature!r}")
        return key


# -- manifest I/O -----------------------------------------------------------

def _entry_from_json(doc, i, root):
    where = f"entries[{i}]"
    if not isinstance(doc, dict):
        raise ManifestError(f"{where}: expected an object")
    for k in ("muscle", "exercise", "shift_index", "recording"):
        if k not in doc:
            raise ManifestError(f"{where}: missing field {k!r}")
    muscle, exercise, k = doc["muscle"], doc["exercise"], doc["shift_index"]
    if muscle not in MUSCLES:
        raise ManifestError(f"{where}.muscle: {muscle!r} not in {MUSCLES}")
    if exercise not in EXERCISES:
        raise ManifestError(f"{where}.exercise: {exercise!r} not in {EXERCISES}")
    if isinstance(k, bool) or not isinstance(k, int) or k not in SHIFT_INDICES:
        raise ManifestError(f"{where}.shift_index: {k!r} not in {SHIFT_INDICES}")
    where = f"{where} ({muscle}/{exercise}/s{k})"
    if not isinstance(doc["recording"], str):
        raise ManifestError(f"{where}.recording: expected a path string")
    seg = doc.get("segments")
    if seg is not None and not isinstance(seg, str):
        raise ManifestError(f"{where}.segments: expected a path string or null")
    scans = doc.get("scans")
    if k >= 1 and scans is None:
        raise ManifestError(f"{where}: shift_index {k} needs a scan triple (pre, post, bare)")
    if scans is not None:
        if not isinstance(scans, dict) or set(scans) != set(SCAN_ROLES):
            raise ManifestError(f"{where}.scans: expected exactly the keys {SCAN_ROLES}")
        if not all(isinstance(v, str) for v in scans.values()):
            raise ManifestError(f"{where}.scans: expected path strings")
        scans = {r: root / scans[r] for r in SCAN_ROLES}
    return ManifestEntry(muscle, exercise, k, root / doc["recording"], None if seg is None else root / seg, scans)


def _check_entry_files(e):
    where = f"entry {e.entry_id}"
    for label, p in [("recording", e.recording), ("segments", e.segments)] + [
        (f"scan {r!r}", p) for r, p in (e.scans or {}).items()
    ]:
        if p is not None and not Path(p).is_file():
            raise ManifestError(f"{where}: {label} file not found: {p}")
    try:
        head = read_recording_header(e.recording)
        if e.segments is not None:
            bounds = read_boundaries_csv(e.segments)
            rid = head.get("metadata", {}).get("rec_id", "")
            if rid not in bounds:
                raise ManifestError(f"{where}: segments file {e.segments} has no rows for recording {rid!r}")
        for r, p in (e.scans or {}).items():
            kind = read_scan(p).scan_kind
            if kind != _SCAN_KIND[r]:
                raise ManifestError(f"{where}: scan {r!r} at {p} has scan_kind {kind!r}")
    except ManifestError:
        raise
    except HDsEMGError as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def load_manifest(path, check_files=True):
    """Read and validate a session manifest.

    With ``check_files`` every referenced file must exist and its header
    (or content, for small files) must parse.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ManifestError(f"{path}: cannot read manifest ({exc})") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ManifestError(f"{path}: top level must be an object")
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise ManifestError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    participant = doc.get("participant")
    if not isinstance(participant, str) or not participant:
        raise ManifestError(f"{path}: participant must be a non-empty string")
    items = doc.get("entries")
    if not isinstance(items, list) or not items:
        raise ManifestError(f"{path}: entries must be a non-empty list")
    root = path.parent
    entries, seen = [], set()
    for i, item in enumerate(items):
        try:
            e = _entry_from_json(item, i, root)
        except ManifestError as exc:
            raise ManifestError(f"{path}: {exc}") from exc
        key = (e.muscle, e.exercise, e.shift_index)
        if key in seen:
            raise ManifestError(f"{path}: duplicate entry {e.entry_id}")
        seen.add(key)
        if check_files:
            try:
                _check_entry_files(e)
            except ManifestError as exc:
                raise ManifestError(f"{path}: {exc}") from exc
        entries.append(e)
    return SessionManifest(participant, tuple(entries), root)


def write_manifest(manifest, path):
    path = Path(path)
    path.write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True) + "\n")
    return path


def write_session(entries, out_dir, participant="P00"):
    """Write synthetic entries as a manifest-backed session directory.

    ``entries`` are :class:`~hdsemg_shift.synthetic.SyntheticEntry`
    objects. Ground-truth shifts go to ``truth.json`` next to the manifest.
    Returns the manifest path.
    """
    out = Path(out_dir)
    for sub in ("recordings", "segments", "scans"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    items, truth = [], {}
    for e in entries:
        rec_path = write_recording(out / "recordings" / f"{e.rec_id}.bin", e.recording)
        seg_path = None
        if e.boundaries:
            seg_path = out / "segments" / f"{e.rec_id}.csv"
            write_boundaries_csv(seg_path, [(e.rec_id, s, t, lab) for s, t, lab in e.boundaries])
        scans = None
        if e.scans is not None:
            scans = {}
            for role, scan in zip(SCAN_ROLES, e.scans):
                p = out / "scans" / f"{e.muscle}_s{e.shift_index}_{role}.json"
                if not p.exists():
                    write_scan(p, scan)
                scans[role] = p
        if e.true_shift is not None:
            truth[f"{e.muscle}_s{e.shift_index}"] = e.true_shift.as_dict()
        items.append(ManifestEntry(e.muscle, e.exercise, e.shift_index, rec_path, seg_path, scans))
    manifest = SessionManifest(participant, tuple(items), out)
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return write_manifest(manifest, out / "manifest.json")


# -- pipeline ---------------------------------------------------------------

@dataclass
class EntryResult:
    entry: ManifestEntry
    features: object = None
    n_segments: int = 0
    n_open: int = 0
    error: str = None
    error_type: str = None

    @property
    def ok(self):
        return self.error is None


@dataclass
class ShiftPair:
    muscle: str
    exercise: str
    shift_index: int
    shift: object = None
    cmap: object = None
    error: str = None
    error_type: str = None


@dataclass
class StratumResult:
    key: StratumKey
    seed: int
    n_recordings: int = 0
    n_shift_pairs: int = 0
    points: PairDifferences = None
    curve: list = None
    curve_abs: list = None
    fit: object = None
    same_location: object = None
    residuals: object = None
    fraction: tuple = None
    errors: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    manifest: SessionManifest
    config: PipelineConfig
    entries: list
    shifts: list
    strata: dict

    @property
    def failures(self):
        out = [{"scope": "entry", "id": r.entry.entry_id, "error_type": r.error_type, "message": r.error}
               for r in self.entries if not r.ok]
        out += [{"scope": "shift", "id": f"{s.muscle}_{s.exercise}_s{s.shift_index}", "error_type": s.error_type,
                 "message": s.error} for s in self.shifts if s.error]
        return out


def process_recording(rec, config=None, boundaries=None):
    """Preprocess, segment and extract features from one recording.

    ``boundaries`` is a list of ``(start_s, end_s, label)``; without it the
    isometric threshold segmentation is used. Returns
    ``(FeatureSet, SegmentSet, ChannelMask)``.
    """
    config = config or PipelineConfig()
    filtered, mask, env = preprocess(rec, config)
    if boundaries is not None:
        segs = apply_manual_segments(rec.rec_id, boundaries, rec.sample_rate, rec.n_samples)
    else:
        segs = segment_isometric(env, config.channel_reduction, config.threshold_frac, config.min_duration_s)
    _, fs = FeatureExtractor(config.welch_window_s, config.welch_overlap_frac).transform(filtered, env, segs)
    return fs, segs, mask


def _process_entry(entry, config):
    try:
        rec = read_recording(entry.recording)
        bounds = None
        if entry.segments is not None:
            bounds = read_boundaries_csv(entry.segments).get(rec.rec_id)
            if not bounds:
                raise ManifestError(f"{entry.segments}: no boundaries for recording {rec.rec_id!r}")
        fs, segs, mask = process_recording(rec, config, bounds)
        return EntryResult(entry, fs, len(segs), int(mask.n_open))
    except HDsEMGError as exc:
        return EntryResult(entry, error=str(exc), error_type=type(exc).__name__)


def _scan_key(entry):
    return tuple(str(entry.scans[r]) for r in SCAN_ROLES)


def _scan_shift(entry, config, layout):
    try:
        pre, post, bare = (read_scan(entry.scans[r]) for r in SCAN_ROLES)
        return extract_shift(pre, post, bare, layout, config.rms_tol_cm, config.shape_tol), None
    except HDsEMGError as exc:
        return None, exc


def _pair_for(e_prev, e_cur, scan_results, layout):
    shift, exc = scan_results[_scan_key(e_cur.entry)]
    pair = ShiftPair(e_cur.entry.muscle, e_cur.entry.exercise, e_cur.entry.shift_index, shift)
    if exc is not None:
        pair.error, pair.error_type = str(exc), type(exc).__name__
    elif e_prev is None:
        pair.error, pair.error_type = f"no entry for shift index {e_cur.entry.shift_index - 1}", "ManifestError"
    else:
        pair.cmap = closest_channel_map(electrode_positions(layout), electrode_positions(layout, shift))
    return pair


def analyze_stratum(key, feature_sets, pairs, config=None, layout=None):
    """Distance curve and fit, same-location summary and residual tests for one stratum.

    ``feature_sets`` are the per-recording FeatureSets pooled for the
    distance curve; ``pairs`` holds ``(pre FeatureSet, post FeatureSet,
    ChannelMap)`` triples, one per shift. Steps that cannot be computed are
    reported in ``errors`` instead of raising.
    """
    config = config or PipelineConfig()
    layout = layout or GridLayout()
    seed = int(derive_seed(config.seed, "stratum", key.dirname).generate_state(1)[0])
    res = StratumResult(key, seed, len(feature_sets), len(pairs))
    f = key.feature
    try:
        if not feature_sets:
            raise AnalysisDegeneracyError("no usable recordings")
        parts = [intra_pairwise(fs, layout, feature_names=(f,))[f] for fs in feature_sets]
        res.points = PairDifferences.concatenate(parts, context={"stratum": key.dirname})
        res.curve = mean_curve_with_ci(res.points, config.confidence, config.n_resamples,
                                       derive_seed(seed, "curve", "pct"))
        res.curve_abs = mean_curve_with_ci(res.points, config.confidence, config.n_resamples,
                                           derive_seed(seed, "curve", "abs"), values="abs")
    except HDsEMGError as exc:
        res.errors["curve"] = f"{type(exc).__name__}: {exc}"
        return res
    try:
        res.fit = fit_inverse_exponential(res.points, include_self=config.include_self)
    except HDsEMGError as exc:
        res.errors["fit"] = f"{type(exc).__name__}: {exc}"
    try:
        cols = [same_location_values(pre, post, cmap, f, config.max_sep_cm) for pre, post, cmap in pairs]
        if not cols:
            raise AnalysisDegeneracyError("no shift pairs")
        res.same_location = summarize_same_location(
            np.concatenate([c[0] for c in cols]), np.concatenate([c[1] for c in cols]),
            np.concatenate([c[2] for c in cols]), f, sum(c[3] for c in cols),
        )
        res.fraction = fraction_below(res.points, res.same_location.median_pct)
    except HDsEMGError as exc:
        res.errors["same_location"] = f"{type(exc).__name__}: {exc}"
    if res.fit is not None and res.same_location is not None:
        vals = [same_channel_values(pre, post, cmap, res.fit, f, config.max_sep_cm) for pre, post, cmap in pairs]
        r = np.concatenate([v[0] for v in vals])
        d = np.concatenate([v[1] for v in vals])
        res.residuals = residual_test(r, d, res.same_location.median_pct, f, config.alpha)
    return res


def _pmap(fn, items, n_jobs):
    if n_jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def run_pipeline(manifest, config=None, layout=None, strata=None):
    """Process every entry and run the three analyses for every stratum.

    Failures are isolated: an entry that cannot be processed is reported in
    :attr:`PipelineResult.failures` and left out of every pooled analysis;
    the rest proceed. ``strata`` optionally restricts the analysed keys.
    """
    config = config or PipelineConfig()
    layout = layout or GridLayout()
    entries = sorted(manifest.entries, key=_protocol_order)
    results = _pmap(lambda e: _process_entry(e, config), entries, config.n_jobs)
    by_key = {(r.entry.muscle, r.entry.exercise, r.entry.shift_index): r for r in results}

    # scans are shared across exercises at one placement; extract once per file triple
    jobs = [r for r in results if r.entry.shift_index >= 1 and r.entry.scans is not None]
    triples = list({_scan_key(r.entry): r.entry for r in jobs}.values())
    scanned = _pmap(lambda e: _scan_shift(e, config, layout), triples, config.n_jobs)
    scan_results = {_scan_key(e): v for e, v in zip(triples, scanned)}
    shifts = [_pair_for(by_key.get((r.entry.muscle, r.entry.exercise, r.entry.shift_index - 1)), r, scan_results,
                        layout) for r in jobs]

    groups = sorted({(r.entry.muscle, r.entry.exercise) for r in results}, key=lambda g: (
        MUSCLES.index(g[0]), EXERCISES.index(g[1])))
    ok_sets, ok_pairs = {}, {}
    for g in groups:
        ok_sets[g] = [r.features for r in results if (r.entry.muscle, r.entry.exercise) == g and r.ok]
        ok_pairs[g] = []
        for p in shifts:
            if (p.muscle, p.exercise) != g or p.cmap is None:
                continue
            pre = by_key[(p.muscle, p.exercise, p.shift_index - 1)]
            post = by_key[(p.muscle, p.exercise, p.shift_index)]
            if pre.ok and post.ok:
                ok_pairs[g].append((pre.features, post.features, p.cmap))

    tasks = []
    for f in FEATURES:
        for g in groups:
            tasks.append((StratumKey(f, *g), ok_sets[g], ok_pairs[g]))
        tasks.append((StratumKey(f), [fs for g in groups for fs in ok_sets[g]],
                      [p for g in groups for p in ok_pairs[g]]))
    if strata is not None:
        wanted = set(strata)
        tasks = [t for t in tasks if t[0] in wanted]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        done = _pmap(lambda t: analyze_stratum(*t, config, layout), tasks, config.n_jobs)
    return PipelineResult(manifest, config, results, shifts, {s.key: s for s in done})


# -- outputs ----------------------------------------------------------------

def fmt(v):
    """Stable text form for CSV/JSON numbers."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if np.isnan(v):
        return "nan"
    return format(v, ".10g")


def _num(v):
    """JSON-safe rounded number (NaN becomes null)."""
    if v is None:
        return None
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    return None if not np.isfinite(v) else float(format(v, ".10g"))


def write_csv(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in comment.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if not isinstance(v, str) else v for v in row])


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv` as dicts; leading comment line returned separately."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    comment = {}
    if lines and lines[0].startswith("#"):
        for tok in lines[0][1:].split():
            k, _, v = tok.partition("=")
            comment[k] = v
        lines = lines[1:]
    return list(csv.DictReader(lines)), comment


def _fit_dict(fit):
    return {
        "amplitude_A_pct": fit.amplitude_A, "length_scale_lambda_cm": fit.length_scale_lambda, "rss": fit.rss,
        "n_points": fit.n_points, "converged": fit.converged, "amplitude_null": fit.amplitude_null,
        "r2_binned": fit.r2_binned, "nrmse_binned": fit.nrmse_binned, "good_fit": fit.good_fit,
    }


def _sl_dict(sl):
    return {"median_pct": sl.median_pct, "q1_pct": sl.iqr[0], "q3_pct": sl.iqr[1], "n_pairs": sl.n_pairs,
            "n_excluded": sl.n_excluded, "median_abs": sl.median_abs}


def _test_dict(rt):
    return {
        "n": len(rt.residuals), "median_residual_pct": rt.median, "p_zero_median": rt.p_zero_median,
        "p_same_location_median": rt.p_same_location_median, "same_location_median_pct": rt.same_location_median,
        "alpha": rt.alpha, "consistent_with_zero": rt.consistent_with_zero,
        "consistent_with_same_location": rt.consistent_with_same_location, "underpowered": rt.underpowered,
    }


def _write_stratum(base, res, config_hash):
    d = base / res.key.dirname
    d.mkdir(parents=True, exist_ok=True)
    tag = {"stratum": res.key.dirname, "config_hash": config_hash[:16]}
    if res.curve is not None:
        seeded = dict(tag, seed=res.seed)
        write_csv(d / "curve.csv", ["distance_cm", "n", "mean_pct", "ci_lo_pct", "ci_hi_pct"], res.curve, seeded)
        write_csv(d / "curve_abs.csv", ["distance_cm", "n", "mean_abs", "ci_lo_abs", "ci_hi_abs"], res.curve_abs,
                  seeded)
    if res.fit is not None:
        fd = _fit_dict(res.fit)
        write_csv(d / "fit.csv", list(fd), [list(fd.values())], tag)
    if res.same_location is not None:
        sd = _sl_dict(res.same_location)
        write_csv(d / "same_location.csv", list(sd), [list(sd.values())], tag)
        dist, frac = res.fraction
        write_csv(d / "fraction_below.csv", ["distance_cm", "fraction_below"], zip(dist, frac),
                  dict(tag, threshold_pct=fmt(res.same_location.median_pct)))
    if res.residuals is not None:
        rt = res.residuals
        write_csv(d / "residuals.csv", ["moved_cm", "residual_pct"], zip(rt.distances, rt.residuals), tag)
        td = _test_dict(rt)
        write_csv(d / "tests.csv", list(td), [list(td.values())], tag)


def _stratum_summary(res):
    out = {"seed": res.seed, "n_recordings": res.n_recordings, "n_shift_pairs": res.n_shift_pairs,
           "errors": dict(sorted(res.errors.items()))}
    if res.points is not None:
        out["n_pair_differences"] = len(res.points)
        out["n_excluded_pairs"] = res.points.n_excluded
    out["fit"] = None if res.fit is None else {k: _num(v) for k, v in _fit_dict(res.fit).items()}
    out["same_location"] = None if res.same_location is None else {
        k: _num(v) for k, v in _sl_dict(res.same_location).items()}
    out["residual_test"] = None if res.residuals is None else {
        k: _num(v) for k, v in _test_dict(res.residuals).items()}
    return out


def write_outputs(result, out_dir):
    """Write the documented output tree; returns the summary dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = result.config
    h = cfg.config_hash()
    rows = [(r.entry.entry_id, "ok" if r.ok else "failed", r.n_segments, r.n_open, r.error_type or "",
             r.error or "") for r in result.entries]
    write_csv(out / "entries.csv", ["entry", "status", "n_segments", "n_open_channels", "error_type", "error"], rows)
    srows = []
    for p in result.shifts:
        s = p.shift
        srows.append((p.muscle, p.exercise, p.shift_index, *(("", "", "") if s is None else (
            s.x_cm, s.y_cm, s.theta_deg)), p.error_type or "", p.error or ""))
    write_csv(out / "shifts.csv", ["muscle", "exercise", "shift_index", "x_cm", "y_cm", "theta_deg", "error_type",
                                   "error"], srows)
    for res in result.strata.values():
        _write_stratum(out / "strata", res, h)
    summary = {
        "package_version": __version__,
        "participant": result.manifest.participant,
        "seed": cfg.seed,
        "config": {k: _num(v) if not isinstance(v, str) else v for k, v in cfg.to_dict().items()},
        "config_hash": h,
        "entries": [{"id": r[0], "status": r[1], "n_segments": r[2], "n_open_channels": r[3]} for r in rows],
        "failures": result.failures,
        "strata": {k.dirname: _stratum_summary(v) for k, v in sorted(result.strata.items())},
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary
