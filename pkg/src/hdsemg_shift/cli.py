"""Command-line interface.

Subcommands compose through the package's file formats::

    hdsemg-shift simulate   --out session/            synthetic session + manifest
    hdsemg-shift preprocess --recording r.bin --out p/ filtered.bin, envelope.bin, mask.json
    hdsemg-shift segment    --envelope p/envelope.bin --out s/
    hdsemg-shift features   --filtered p/filtered.bin --envelope p/envelope.bin --segments s/segments.csv --out f/
    hdsemg-shift shift      --pre a.json --post b.json --bare c.json
    hdsemg-shift analyze    --manifest session/manifest.json --out results/
    hdsemg-shift report     --in results/ --out report/ [--emit-volts]
    hdsemg-shift selftest   --out selftest/ [--quick]

Exit codes: 0 success, 1 self-test criterion failed, 2 usage error,
3 data error (unreadable or invalid input), 4 analysis degeneracy. Errors
are also written to stderr as one JSON object.
"""

import argparse
import json
import os
import sys
from pathlib import Path

from . import errors
from .config import CONFIG_ENV_VAR, PipelineConfig
from .errors import AnalysisDegeneracyError, DataError, HDsEMGError
from .features import FeatureExtractor, write_averaged_csv, write_features_csv
from .grid_geometry import GridLayout, ShiftTransform, extract_shift, read_scan, write_scan
from .recording import read_recording, write_recording
from .segmentation import (
    apply_manual_segments,
    read_boundaries_csv,
    segment_isometric,
    segments_to_rows,
    write_boundaries_csv,
)
from .session_io import StratumKey, load_manifest, run_pipeline, write_outputs, write_session
from .signal_core import preprocess
from .synthetic import EXERCISES, MUSCLES, load_scenario, simulate_recording, simulate_session, synth_scan_triple

EXIT_OK, EXIT_SELFTEST_FAILED, EXIT_USAGE, EXIT_DATA, EXIT_DEGENERATE = 0, 1, 2, 3, 4


def _csv_list(choices):
    def parse(text):
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in choices]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"expected a comma list from {choices}, got {text!r}")
        return tuple(items)

    return parse


def _floats(n):
    def parse(text):
        try:
            vals = tuple(float(t) for t in text.split(","))
        except ValueError:
            vals = ()
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
        return vals

    return parse


def _stratum(text):
    try:
        return StratumKey.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _seed(text):
    try:
        v = int(text)
    except ValueError:
        v = -1
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text!r}")
    return v


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help=f"config file (JSON or key = value); default ${CONFIG_ENV_VAR}")
    common.add_argument("--seed", type=_seed, help="seed overriding the config value")

    p = argparse.ArgumentParser(prog="hdsemg-shift", description="HDsEMG electrode-shift analysis")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="generate synthetic recordings and scans")
    s.add_argument("--out", type=Path, required=True)
    mode = s.add_mutually_exclusive_group()
    mode.add_argument("--scenario", type=Path, help="render one ScenarioConfig JSON to recording.bin")
    mode.add_argument("--scan-triple", type=_floats(3), metavar="X,Y,THETA",
                      help="write pre/post/bare scans for one known shift")
    s.add_argument("--muscles", type=_csv_list(MUSCLES), default=MUSCLES)
    s.add_argument("--exercises", type=_csv_list(EXERCISES), default=EXERCISES)
    s.add_argument("--n-shifts", type=int, default=3, choices=(1, 2, 3))
    s.add_argument("--iso-scale", type=float, default=0.3, help="isometric contraction length as a fraction of 10 s")
    s.add_argument("--gain-range", type=_floats(2), default=(0.85, 1.15), metavar="LO,HI")
    s.add_argument("--max-shift-cm", type=float, default=2.5)
    s.add_argument("--max-theta-deg", type=float, default=30.0)
    s.add_argument("--scan-noise-cm", type=float, default=0.0)
    s.add_argument("--participant", default="P00")

    s = sub.add_parser("preprocess", parents=[common], help="filter, mask and envelope one recording")
    s.add_argument("--recording", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("segment", parents=[common], help="find contractions in an envelope recording")
    s.add_argument("--envelope", type=Path, required=True)
    s.add_argument("--boundaries", type=Path, help="manual recording_id,start_s,end_s,label file")
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("features", parents=[common], help="six features per channel and contraction")
    s.add_argument("--filtered", type=Path, required=True)
    s.add_argument("--envelope", type=Path, required=True)
    s.add_argument("--segments", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)

    s = sub.add_parser("shift", parents=[common], help="recover (x, y, theta) from a scan triple")
    s.add_argument("--pre", type=Path, required=True)
    s.add_argument("--post", type=Path, required=True)
    s.add_argument("--bare", type=Path, required=True)
    s.add_argument("--out", type=Path, help="also write shift.json here")

    s = sub.add_parser("analyze", parents=[common], help="run the full pipeline over a manifest")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--jobs", type=int, help="worker threads (does not change results)")
    s.add_argument("--stratum", type=_stratum, action="append",
                   help="feature,muscle,exercise or feature,combined; repeatable")

    s = sub.add_parser("report", parents=[common], help="plots and tables from analysis output")
    s.add_argument("--in", dest="input", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--emit-volts", action="store_true", help="also write max-envelope tables in volts")
    s.add_argument("--stratum", type=_stratum, action="append")

    s = sub.add_parser("selftest", parents=[common], help="run the acceptance checks on generated fixtures")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--quick", action="store_true", help="reduced trial counts")
    s.add_argument("--jobs", type=int, default=1)
    return p


def _config(args):
    path = args.config or os.environ.get(CONFIG_ENV_VAR) or None
    cfg = PipelineConfig.from_file(path) if path else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "jobs", None):
        cfg = cfg.replace(n_jobs=args.jobs)
    return cfg


def cmd_simulate(args, cfg):
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.scenario:
        rec = simulate_recording(load_scenario(args.scenario))
        write_recording(out / "recording.bin", rec)
        print(out / "recording.bin")
        return EXIT_OK
    if args.scan_triple:
        x, y, th = args.scan_triple
        shift = ShiftTransform(x, y, th)
        for role, scan in zip(("pre", "post", "bare"), synth_scan_triple(GridLayout(), shift, "plane",
                                                                       args.scan_noise_cm, cfg.seed)):
            write_scan(out / f"{role}.json", scan)
        (out / "truth.json").write_text(json.dumps(shift.as_dict(), indent=2, sort_keys=True) + "\n")
        print(out)
        return EXIT_OK
    lo, hi = args.gain_range
    entries = simulate_session(
        cfg.seed, args.muscles, args.exercises, args.n_shifts, iso_scale=args.iso_scale, gain_lo=lo, gain_hi=hi,
        max_xy_cm=args.max_shift_cm, max_theta_deg=args.max_theta_deg, scan_noise_cm=args.scan_noise_cm,
        participant=args.participant,
    )
    print(write_session(entries, out, args.participant))
    return EXIT_OK


def cmd_preprocess(args, cfg):
    rec = read_recording(args.recording)
    filtered, mask, env = preprocess(rec, cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_recording(args.out / "filtered.bin", filtered)
    write_recording(args.out / "envelope.bin", env)
    (args.out / "mask.json").write_text(json.dumps(mask.to_json(), sort_keys=True) + "\n")
    print(f"open_channels={mask.n_open}")
    return EXIT_OK


def _rec_key(env):
    return getattr(env, "source_id", "") or env.rec_id


def cmd_segment(args, cfg):
    env = read_recording(args.envelope)
    rid = _rec_key(env)
    if args.boundaries:
        bounds = read_boundaries_csv(args.boundaries).get(rid)
        if not bounds:
            raise DataError(f"{args.boundaries}: no rows for recording {rid!r}")
        segs = apply_manual_segments(rid, bounds, env.sample_rate, env.n_samples)
    else:
        segs = segment_isometric(env, cfg.channel_reduction, cfg.threshold_frac, cfg.min_duration_s)
    args.out.mkdir(parents=True, exist_ok=True)
    write_boundaries_csv(args.out / "segments.csv", segments_to_rows(segs, env.sample_rate))
    print(f"segments={len(segs)}")
    return EXIT_OK


def cmd_features(args, cfg):
    filtered = read_recording(args.filtered)
    env = read_recording(args.envelope)
    rid = _rec_key(env)
    bounds = read_boundaries_csv(args.segments).get(rid)
    if not bounds:
        raise DataError(f"{args.segments}: no rows for recording {rid!r}")
    segs = apply_manual_segments(rid, bounds, env.sample_rate, env.n_samples)
    per, fs = FeatureExtractor(cfg.welch_window_s, cfg.welch_overlap_frac).transform(filtered, env, segs)
    args.out.mkdir(parents=True, exist_ok=True)
    write_features_csv(args.out / "features.csv", per, filtered.metadata)
    write_averaged_csv(args.out / "averaged.csv", fs)
    print(f"channels={len(fs.channel_ids)} contractions={fs.n_contractions}")
    return EXIT_OK


def cmd_shift(args, cfg):
    est = extract_shift(read_scan(args.pre), read_scan(args.post), read_scan(args.bare), GridLayout(),
                        cfg.rms_tol_cm, cfg.shape_tol)
    print(f"x={est.x_cm:.3f} y={est.y_cm:.3f} theta={est.theta_deg:.3f}")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "shift.json").write_text(json.dumps(est.as_dict(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_analyze(args, cfg):
    manifest = load_manifest(args.manifest)
    result = run_pipeline(manifest, cfg, strata=args.stratum)
    write_outputs(result, args.out)
    failures = result.failures
    for f in failures:
        print(json.dumps(f, sort_keys=True), file=sys.stderr)
    print(f"strata={len(result.strata)} failures={len(failures)} out={args.out}")
    if not failures:
        return EXIT_OK
    # outputs are still written; the code reports the first failing family
    first = getattr(errors, failures[0]["error_type"], DataError)
    return EXIT_DEGENERATE if issubclass(first, AnalysisDegeneracyError) else EXIT_DATA


def cmd_report(args, cfg):
    from .report import build_report

    names = None if args.stratum is None else [k.dirname for k in args.stratum]
    files = build_report(args.input, args.out, names, args.emit_volts)
    print(f"files={len(files)} out={args.out}")
    return EXIT_OK


def cmd_selftest(args, cfg):
    from .acceptance import run_acceptance

    args.out.mkdir(parents=True, exist_ok=True)
    results = run_acceptance(cfg.seed, quick=args.quick, n_jobs=max(1, args.jobs), workdir=args.out,
                             include_determinism=True, progress=lambda r: print(r.line(), flush=True))
    doc = {"seed": cfg.seed, "quick": bool(args.quick), "results": [r.as_dict() for r in results]}
    (args.out / "results.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    (args.out / "results.txt").write_text("".join(r.line() + "\n" for r in results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST_FAILED


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "segment": cmd_segment,
    "features": cmd_features,
    "shift": cmd_shift,
    "analyze": cmd_analyze,
    "report": cmd_report,
    "selftest": cmd_selftest,
}


def _diagnose(exc, code):
    family = "data" if isinstance(exc, DataError) else "analysis" if isinstance(exc, AnalysisDegeneracyError) \
        else "error"
    print(json.dumps({"error": type(exc).__name__, "family": family, "message": str(exc), "exit_code": code},
                     sort_keys=True), file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except DataError as exc:
        _diagnose(exc, EXIT_DATA)
        return EXIT_DATA
    except AnalysisDegeneracyError as exc:
        _diagnose(exc, EXIT_DEGENERATE)
        return EXIT_DEGENERATE
    except HDsEMGError as exc:
        _diagnose(exc, EXIT_DATA)
        return EXIT_DATA


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
