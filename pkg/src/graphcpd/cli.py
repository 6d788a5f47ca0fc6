"""Command-line interface.

Exit status: 0 on success (including "no change found"), 1 on an internal
error, 2 on a user or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataio
from .baselines import sequence_magnitudes
from .config import PRESETS, load_settings
from .detector import detect_sequence, estimate_noise, write_statistics_csv
from .errors import ConfigError, GraphCPDError
from .evaluation import (METHODS, Outcome, build_scenario, default_grid, detection_delay, monte_carlo,
                         pd_pfa_counts, simulate_sequence)
from .superpixel import slic_segment

log = logging.getLogger("graphcpd")

_FRAME_FILE = re.compile(r"_t(\d+)\.cmk$")


class UsageError(GraphCPDError):
    pass


def _existing(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input not found: {p}")
    return p


def _settings(args):
    return load_settings(args.config, args.set or (), args.preset)


def _read_sequence(args):
    return dataio.read_sequence(_existing(args.input))


def cmd_segment(args) -> int:
    seq = _read_sequence(args)
    labeling = slic_segment(seq.frame(1), _settings(args).superpixel_params())
    out = Path(args.output)
    dataio.write_labels(labeling, out)
    K = labeling.n_segments
    print(f"K={K} mean_segment_size={labeling.flat.size / K:.3f}")
    return 0


def _mask_name(prefix: str, t: int) -> str:
    return f"{prefix}_t{t:04d}.cmk"


def cmd_detect(args) -> int:
    settings = _settings(args)
    seq = _read_sequence(args)
    out = Path(args.output)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    T, L, H, W = seq.data.shape
    if args.method == "cva":
        (tau,) = settings.require("cva_tau")
        if tau < 0:
            raise ConfigError("cva_tau must be >= 0")
        mags = sequence_magnitudes(seq.data)
        flags = (mags > tau).astype(np.uint8)
        rows = ((t, n + 1, repr(float(mags[t - 2, n])), repr(float(tau)), int(flags[t - 2, n]))
                for t in range(2, T + 1) for n in range(H * W))
        dataio.write_csv(out / "statistics.csv", ("t", "n", "r", "xi", "flag"), rows)
        per_frame = [(t, flags[t - 2]) for t in range(2, T + 1)]
    else:
        labeling = dataio.read_labels(_existing(args.labels)) if args.labels else None
        params = settings.superpixel_params() if labeling is None else None
        labeling, stats = detect_sequence(seq, settings.detector_config(), params, labeling)
        dataio.write_labels(labeling, out / "labels.spl")
        write_statistics_csv(stats, out / "statistics.csv")
        per_frame = [(s.t, s.flags) for s in stats]
    flagged = []
    for t, f in per_frame:
        if f.any():
            mask = dataio.ChangeMask(f.reshape(H, W), t=t)
            dataio.write_mask(mask, out / "masks" / _mask_name("mask", t))
            if args.pgm:
                dataio.write_pgm(mask, out / "masks" / f"mask_t{t:04d}.pgm")
            flagged.append(t)
    if flagged:
        print(f"change flagged in {len(flagged)} frame(s); first at t={flagged[0]}")
    else:
        print("no change flagged")
    return 0


def cmd_simulate(args) -> int:
    settings = _settings(args)
    background = labeling = support = None
    if args.input:
        background = dataio.read_sequence(_existing(args.input)).frame(1).values.astype(np.float64)
    if args.labels:
        labeling = dataio.read_labels(_existing(args.labels))
    if args.mask:
        support = dataio.read_mask(_existing(args.mask)).flags.astype(bool)
    scenario = build_scenario(settings, background, labeling, support)
    seq, truth = simulate_sequence(scenario.sim, args.seed)
    out = Path(args.output)
    (out / "truth").mkdir(parents=True, exist_ok=True)
    dataio.write_sequence(seq, out / "sequence.mbs")
    dataio.write_labels(scenario.sim.labeling, out / "labels.spl")
    for t in range(2, truth.shape[0] + 1):
        dataio.write_mask(dataio.ChangeMask(truth[t - 1], t=t), out / "truth" / _mask_name("truth", t))
    # record the detector's sigma2 so scenario.cfg can be passed straight to detect
    written = settings if settings.sigma2 is not None else replace(settings, sigma2=scenario.detector.sigma2)
    (out / "scenario.cfg").write_text(written.to_text())
    print(f"wrote {seq.header[0]} frames, sigma2={scenario.sim.sigma2:.6g}, "
          f"changed pixels={int(scenario.sim.support.sum())}, first change t={scenario.sim.first_change}")
    return 0


def _read_mask_dir(path: Path) -> dict[int, np.ndarray]:
    masks = {}
    for f in sorted(path.glob("*.cmk")):
        m = _FRAME_FILE.search(f.name)
        if m:
            t = int(m.group(1))
            masks[t] = dataio.read_mask(f, t=t).flags
    return masks


def cmd_evaluate(args) -> int:
    est_dir, truth_dir = _existing(args.input), _existing(args.truth)
    truth = _read_mask_dir(truth_dir)
    if not truth:
        raise UsageError(f"no truth masks (*_tNNNN.cmk) in {truth_dir}")
    est = _read_mask_dir(est_dir if est_dir.is_dir() else est_dir.parent)
    frames = sorted(t for t in truth if t >= 2)
    shape = truth[frames[0]].shape
    c = np.stack([truth[t] for t in frames]).reshape(len(frames), -1)
    e = np.stack([est.get(t, np.zeros(shape, np.uint8)) for t in frames]).reshape(len(frames), -1)
    counts = pd_pfa_counts(e, c)
    hit = np.flatnonzero(c.any(axis=1))
    header = ("pd", "pfa", "t_c", "t_hat", "delay", "outcome")
    if hit.size:
        t_c = frames[hit[0]]
        res = detection_delay(e, t_c, first_frame=frames[0])
        row = (counts.pd, counts.pfa, t_c, res.detected_at, res.delay, res.outcome.value)
    else:
        first = np.flatnonzero(e.any(axis=1))
        t_hat = frames[first[0]] if first.size else None
        row = (counts.pd, counts.pfa, None, t_hat, None,
               Outcome.FALSE_ALARM.value if first.size else Outcome.UNDETECTED.value)
    cells = ["NA" if v is None or (isinstance(v, float) and math.isnan(v)) else str(v) for v in row]
    if args.output:
        dataio.write_csv(args.output, header, [cells])
    print(",".join(header))
    print(",".join(cells))
    return 0


def _gnuplot_script(csv_path: Path, metric: str) -> str:
    ylabel = "mean detection delay (frames)" if metric == "delay" else "probability of detection"
    return (f"set datafile separator ','\nset key autotitle columnhead\n"
            f"set xlabel 'probability of false alarm'\nset ylabel '{ylabel}'\n"
            f"plot '{csv_path.name}' using 2:3 with linespoints\n")


def cmd_roc(args) -> int:
    settings = _settings(args)
    scenario = build_scenario(settings)
    grid = [float(g) for g in args.grid.split(",")] if args.grid else default_grid(args.method, scenario)
    table = monte_carlo(scenario, args.method, args.runs, grid, args.seed)
    out = Path(args.output)
    table.to_csv(out)
    out.with_suffix(".gp").write_text(_gnuplot_script(out, scenario.metric))
    print(",".join(table.HEADER))
    for row in table.to_rows():
        print(",".join(str(v) for v in row))
    return 0


def cmd_estimate_noise(args) -> int:
    seq = _read_sequence(args)
    prefix = args.prefix or len(seq)
    print(f"sigma2={estimate_noise(seq, prefix)!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphcpd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="key = value config file")
            p.add_argument("--preset", choices=PRESETS, help="start from a named scenario preset")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        return p

    p = common(sub.add_parser("segment", help="superpixel labeling of frame 1"))
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_segment)

    p = common(sub.add_parser("detect", help="run the online detector"))
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--labels", help="SPL1 labeling to use instead of segmenting frame 1")
    p.add_argument("--method", choices=METHODS, default="dagfss")
    p.add_argument("--pgm", action="store_true", help="also export flagged masks as PGM")
    p.set_defaults(func=cmd_detect)

    p = common(sub.add_parser("simulate", help="draw a synthetic sequence with ground truth"))
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--input", help="MBS1 file whose frame 1 is used as background")
    p.add_argument("--labels", help="SPL1 scene labeling")
    p.add_argument("--mask", help="CMK1 change support")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate", help="Pd/Pfa and delay of estimated masks against truth")
    p.add_argument("--input", required=True, help="directory of estimated masks (mask_tNNNN.cmk)")
    p.add_argument("--truth", required=True, help="directory of truth masks (truth_tNNNN.cmk)")
    p.add_argument("--output", help="metrics CSV")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("roc", help="Monte Carlo operating curve"))
    p.add_argument("--output", required=True, help="metrics CSV")
    p.add_argument("--method", choices=METHODS, default="dagfss")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid", help="comma-separated alpha (dagfss) or tau (cva) values")
    p.set_defaults(func=cmd_roc)

    p = common(sub.add_parser("estimate-noise", help="robust noise variance from a sequence prefix"), config=False)
    p.add_argument("--input", required=True)
    p.add_argument("--prefix", type=int, help="number of leading frames to use (default: all)")
    p.set_defaults(func=cmd_estimate_noise)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (GraphCPDError, ValueError, OSError) as exc:
        print(f"graphcpd: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"graphcpd: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
