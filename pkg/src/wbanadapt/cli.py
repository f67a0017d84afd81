"""Command-line driver: emulate, analyze, simulate, report.

Scenario settings come from a YAML file (``--config``); command-line flags
override it. Data goes to files or stdout, logs go to stderr.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import analytics, channel, netsim, signals
from .adaptive import write_commands_csv
from .bvh import load_bvh
from .errors import (
    BVHParseError,
    CalibrationError,
    ComparisonError,
    ConfigError,
    CSVFormatError,
    DomainError,
    GeometryError,
    InsufficientDataError,
    StructureError,
    WbanError,
)
from .kinematics import (
    DEFAULT_STATURE_M,
    DEFAULT_TORSO_RADIUS_M,
    NodePlacement,
    TorsoSpec,
    node_trajectory,
    scale_to_height,
    synth_imu,
)

log = logging.getLogger("wbanadapt")

EXIT_OK = 0
EXIT_CODES: list[tuple[type[BaseException], int]] = [
    (OSError, 3),
    (BVHParseError, 4),
    (CSVFormatError, 5),
    (StructureError, 6),
    (GeometryError, 7),
    (ConfigError, 8),
    (ComparisonError, 9),
    (InsufficientDataError, 10),
    (DomainError, 11),
    (CalibrationError, 12),
    (WbanError, 1),
]

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "bvh": {"path": None, "scale": 1.0},
    "subject_height_m": DEFAULT_STATURE_M,
    "torso": {"hips": ["Hips"], "neck": "Neck", "radius_m": DEFAULT_TORSO_RADIUS_M},
    "tx": {"joint": "LeftHand", "offset": [0.0, 0.0, 0.0]},
    "rx": {"joint": "RightUpLeg", "offset": [0.0, -0.10, 0.08]},
    "sigma_n_db": channel.DEFAULT_SIGMA_N_DB,
    "link_id": "wrist-pocket",
    # a constant trace with optional fades, used when no BVH clip is given
    "synthetic_channel": None,
    "analysis": {"max_lag_s": 1.0, "window_s": 0.1, "threshold": 0.7},
    "radio": {
        "power_levels": list(netsim.RADIO_LEVELS_DBM),
        "sensitivity_dbm": netsim.DEFAULT_SENSITIVITY_DBM,
        "energy_table_mw": {f"{k:g}": v for k, v in netsim.DEFAULT_ENERGY_TABLE.items()},
        "airtime_s": 1e-3,
    },
    "simulate": {
        "policy": "fixed",
        "power_dbm": -8.0,
        "duration_s": None,
        "packet_interval_s": 0.1,
        "labels": {},
        "imu": {"causal": False, "drop_limit": 3, "rss_smoothing_s": 0.1, "csv": None},
        "emg": {
            "v_thr_uv": 610.0, "p_low_dbm": -4.0, "p_high_dbm": 4.0, "csv": None,
            "rest_uv": 100.0, "burst_uv": 1500.0, "bursts": [],
        },
        "hr": {
            "hr_thr_bpm": 92.0, "p_low_dbm": -8.0, "p_high_dbm": 4.0, "cadence_s": 3.0,
            "csv": None, "profile": [[0.0, 70.0]],
        },
    },
}


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULTS)
    text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(doc) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    return _merge(DEFAULTS, doc)


def _placement(d: dict) -> NodePlacement:
    try:
        return NodePlacement(str(d["joint"]), tuple(float(c) for c in d.get("offset", (0, 0, 0))))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad node placement {d!r}: {exc}") from None


def radio_from(cfg: dict) -> netsim.RadioConfig:
    try:
        return netsim.RadioConfig.from_dict(cfg["radio"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad radio config: {exc}") from None


# -- pipeline pieces -------------------------------------------------------

def scaled_clip(cfg: dict):
    path = cfg["bvh"]["path"]
    if not path:
        return None
    clip = load_bvh(path, scale=float(cfg["bvh"]["scale"]))
    return scale_to_height(clip, float(cfg["subject_height_m"]))


def emulate_trace(cfg: dict, clip=None) -> channel.PathLossTrace:
    shadow = channel.ShadowingModel(float(cfg["sigma_n_db"]), int(cfg["seed"]))
    clip = clip if clip is not None else scaled_clip(cfg)
    if clip is None:
        syn = cfg.get("synthetic_channel")
        if not syn:
            raise ConfigError("no BVH path and no synthetic_channel in the configuration")
        return channel.synthetic_trace(
            float(syn["base_db"]), float(syn["duration_s"]),
            float(syn.get("frame_time_s", 1.0 / 120.0)), float(syn.get("fade_db", 0.0)),
            [tuple(iv) for iv in syn.get("fade_intervals", [])],
            shadow if syn.get("shadowing", False) else None, cfg["link_id"],
        )
    t = cfg["torso"]
    torso = TorsoSpec(tuple(t["hips"]), t["neck"], float(t["radius_m"]))
    return channel.path_loss_trace(clip, _placement(cfg["tx"]), _placement(cfg["rx"]),
                                   torso, shadow, cfg["link_id"])


def _duration(cfg: dict, trace: channel.PathLossTrace) -> float:
    d = cfg["simulate"]["duration_s"]
    return trace.duration if d is None else float(d)


def build_policy(cfg: dict, power: float, trace: channel.PathLossTrace, clip=None):
    sim = cfg["simulate"]
    name = sim["policy"]
    seed = int(cfg["seed"])
    duration = _duration(cfg, trace)
    if name == "fixed":
        return netsim.FixedPower(power)
    if name == "imu":
        c = sim["imu"]
        if c.get("csv"):
            imu = signals.read_trace_csv(c["csv"], signals.SignalKind.ACCEL)
        else:
            clip = clip if clip is not None else scaled_clip(cfg)
            if clip is None:
                raise ConfigError("the imu policy needs a BVH clip or an IMU CSV")
            imu = synth_imu(node_trajectory(clip, _placement(cfg["tx"])), clip.frame_time)
        return netsim.ImuPolicy(power, imu, float(c["rss_smoothing_s"]),
                                None if c["drop_limit"] is None else int(c["drop_limit"]),
                                bool(c["causal"]))
    if name == "emg":
        c = sim["emg"]
        if c.get("csv"):
            emg = signals.read_trace_csv(c["csv"], signals.SignalKind.EMG)
        else:
            emg = signals.synth_emg(float(c["rest_uv"]), float(c["burst_uv"]),
                                    [tuple(iv) for iv in c["bursts"]], duration, seed=seed)
        return netsim.EmgPolicy(emg, float(c["v_thr_uv"]), float(c["p_low_dbm"]),
                                float(c["p_high_dbm"]))
    if name == "hr":
        c = sim["hr"]
        if c.get("csv"):
            ecg = signals.read_trace_csv(c["csv"], signals.SignalKind.ECG)
        else:
            ecg = signals.synth_ecg([tuple(p) for p in c["profile"]], duration, seed=seed)
        return netsim.HrPolicy(ecg, float(c["hr_thr_bpm"]), float(c["p_low_dbm"]),
                               float(c["p_high_dbm"]), float(c["cadence_s"]))
    raise ConfigError(f"unknown policy {name!r}; expected fixed, imu, emg or hr")


def _run_point(cfg: dict, power: float, trace_csv: str | None) -> tuple[str, netsim.SimReport]:
    clip = scaled_clip(cfg) if cfg["bvh"]["path"] else None
    if trace_csv:
        trace = channel.read_trace_csv(trace_csv, cfg["link_id"])
    else:
        trace = emulate_trace(cfg, clip)
    policy = build_policy(cfg, power, trace, clip)
    labels = {k: tuple(float(x) for x in v) for k, v in cfg["simulate"]["labels"].items()}
    report = netsim.run_scenario(trace, policy, radio_from(cfg),
                                 float(cfg["simulate"]["packet_interval_s"]),
                                 _duration(cfg, trace), labels)
    if policy.name in ("fixed", "imu"):
        stem = f"{policy.name}_{power:g}dBm"
    else:
        stem = policy.name
    return stem, report


# -- subcommands -----------------------------------------------------------

def cmd_emulate(args, cfg: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = emulate_trace(cfg)
    channel.write_trace_csv(trace, out / "trace.csv")
    (out / "trace.json").write_text(channel.trace_to_json(trace) + "\n")
    pl = trace.samples
    shadowed = 0.0 if trace.d_bs is None else float(np.mean(trace.d_bs > 0))
    summary = {
        "link_id": trace.link_id,
        "frames": len(trace),
        "frame_time_s": trace.frame_time,
        "pl_mean_db": round(float(pl.mean()), 6),
        "pl_std_db": round(float(pl.std()), 6),
        "pl_min_db": round(float(pl.min()), 6),
        "pl_max_db": round(float(pl.max()), 6),
        "shadowed_fraction": round(shadowed, 6),
        "seed": int(cfg["seed"]),
    }
    (out / "emulate.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"frames={summary['frames']} pl_mean_db={summary['pl_mean_db']:.3f} "
          f"pl_std_db={summary['pl_std_db']:.3f} shadowed={summary['shadowed_fraction']:.3f}")
    return EXIT_OK


def cmd_analyze(args, cfg: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = channel.read_trace_csv(args.trace)
    a = cfg["analysis"]
    rep = analytics.stability_report(trace.samples, trace.frame_time, float(a["max_lag_s"]),
                                     float(a["window_s"]), float(a["threshold"]))
    rep.meta = {"source": Path(args.trace).name, "samples": len(trace),
                "sample_interval_s": trace.frame_time}
    (out / "stability.json").write_text(rep.to_json() + "\n")
    analytics.write_series_csv(rep.autocorr, ("lag_s", "r"), out / "autocorr.csv")
    analytics.write_series_csv(rep.cvf_cdf, ("cvf", "fraction"), out / "cvf_cdf.csv")
    censored = " (censored)" if rep.coherence_censored else ""
    print(f"coherence_time_s={rep.coherence_time:.6f}{censored} "
          f"cvf_median={float(np.median(rep.cvf_series)):.6f}")
    return EXIT_OK


def _parse_sweep(spec: str) -> list[float]:
    key, _, values = spec.partition("=")
    if key.strip() != "powers" or not values:
        raise ConfigError(f"sweep must look like powers=-8,-4,0, got {spec!r}")
    try:
        return [float(v) for v in values.split(",")]
    except ValueError:
        raise ConfigError(f"bad power list in {spec!r}") from None


def cmd_simulate(args, cfg: dict) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    powers = _parse_sweep(args.sweep) if args.sweep else [float(cfg["simulate"]["power_dbm"])]
    if len(powers) > 1 and cfg["simulate"]["policy"] not in ("fixed", "imu"):
        raise ConfigError("power sweeps apply to the fixed and imu policies only")
    if args.jobs > 1 and len(powers) > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_run_point, [cfg] * len(powers), powers,
                                  [args.trace] * len(powers)))
    else:
        results = [_run_point(cfg, p, args.trace) for p in powers]
    for stem, report in results:
        (out / f"{stem}.json").write_text(report.to_json() + "\n")
        netsim.write_packets_csv(report, out / f"{stem}.packets.csv")
        if report.commands:
            write_commands_csv(report.commands, out / f"{stem}.commands.csv")
        print(f"{stem}: pdr={report.pdr:.4f} delivered={report.delivered}/{report.generated}")
    return EXIT_OK


REPORT_COLUMNS = ["report", "policy", "pdr", "pdr_delta_pp", "model", "mw_per_packet",
                  "power_change_pct"]


def cmd_report(args, cfg: dict) -> int:
    summaries = []
    for p in args.reports:
        summaries.append(netsim.SummaryReport.from_json(Path(p).read_text()))
    if not 0 <= args.baseline < len(summaries):
        raise ConfigError(f"baseline index {args.baseline} out of range")
    rows = []
    for model in netsim.RETX_MODELS:
        for path, row in zip(args.reports, netsim.compare_reports(summaries, args.baseline, model)):
            rows.append([Path(path).stem, row["policy"], f"{row['pdr']:.4f}",
                         f"{row['pdr_delta_pp']:+.2f}", model, f"{row['mw_per_packet']:.4f}",
                         f"{row['power_change_pct']:+.2f}"])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            w.writerows(rows)
    widths = [max(len(r[i]) for r in rows + [REPORT_COLUMNS]) for i in range(len(REPORT_COLUMNS))]
    for r in [REPORT_COLUMNS] + rows:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return EXIT_OK


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="wbanadapt", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("emulate", parents=[common], help="path-loss trace from a BVH clip")
    e.add_argument("--bvh", help="BVH file (overrides bvh.path)")
    e.add_argument("--scale", type=float, help="BVH unit scale factor")
    e.add_argument("--height", type=float, help="subject height in meters")
    e.add_argument("--sigma", type=float, help="shadowing std in dB")
    e.add_argument("--out", default="out", help="output directory")

    a = sub.add_parser("analyze", parents=[common], help="stability metrics of a trace")
    a.add_argument("trace", help="trace CSV or t_s,value RSS CSV")
    a.add_argument("--max-lag", type=float)
    a.add_argument("--window", type=float)
    a.add_argument("--threshold", type=float)
    a.add_argument("--out", default="out", help="output directory")

    s = sub.add_parser("simulate", parents=[common], help="packet-level simulation")
    s.add_argument("--bvh", help="BVH file (overrides bvh.path)")
    s.add_argument("--trace", help="use this trace CSV instead of emulating")
    s.add_argument("--policy", choices=["fixed", "imu", "emg", "hr"])
    s.add_argument("--power", type=float, help="Tx power in dBm for fixed/imu")
    s.add_argument("--sweep", help="e.g. powers=-8,-4,0")
    s.add_argument("--duration", type=float)
    s.add_argument("--jobs", type=int, default=1, help="parallel sweep points")
    s.add_argument("--out", default="out", help="output directory")

    r = sub.add_parser("report", parents=[common], help="compare SimReport JSON files")
    r.add_argument("reports", nargs="+")
    r.add_argument("--baseline", type=int, default=0, help="index of the reference report")
    r.add_argument("--out", help="also write the table as CSV")
    return p


def apply_overrides(args, cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "bvh", None):
        cfg["bvh"]["path"] = args.bvh
    if getattr(args, "scale", None) is not None:
        cfg["bvh"]["scale"] = args.scale
    if getattr(args, "height", None) is not None:
        cfg["subject_height_m"] = args.height
    if getattr(args, "sigma", None) is not None:
        cfg["sigma_n_db"] = args.sigma
    for flag, key in (("max_lag", "max_lag_s"), ("window", "window_s"), ("threshold", "threshold")):
        if getattr(args, flag, None) is not None:
            cfg["analysis"][key] = getattr(args, flag)
    if getattr(args, "policy", None):
        cfg["simulate"]["policy"] = args.policy
    if getattr(args, "power", None) is not None:
        cfg["simulate"]["power_dbm"] = args.power
    if getattr(args, "duration", None) is not None:
        cfg["simulate"]["duration_s"] = args.duration
    return cfg


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    handlers = {"emulate": cmd_emulate, "analyze": cmd_analyze,
                "simulate": cmd_simulate, "report": cmd_report}
    try:
        cfg = apply_overrides(args, load_config(args.config))
        return handlers[args.command](args, cfg)
    except (OSError, WbanError) as exc:
        if isinstance(exc, OSError) and exc.filename is not None:
            msg = f"{exc.strerror or exc}: {exc.filename}"
        else:
            msg = str(exc)
        log.error("%s", msg)
        return exit_code_for(exc)
    except KeyError as exc:
        log.error("unknown name %s", exc)
        return exit_code_for(ConfigError())


if __name__ == "__main__":
    sys.exit(main())
