"""Command-line front end.

Each subcommand reads a TOML config (see README for the grammar), writes CSV
results into ``--out``, and leaves a ``manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .compensator import run_compensation
from .config import ConfigError, dump_toml, load_kp_params, merge_defaults, read_toml, save_kp_params
from .feedback import DESIGN_KI, DESIGN_KP, NoCrossoverError, open_loop, stability_margins
from .fixtures import KAPPA_TILDE, PLANT_DC_GAIN, STROKE, fixture_path
from .hysteresis import KpModel
from .ident import (FitError, RankDeficientError, estimate_frf, fit_kp_model, fit_sos_delay,
                    prefilter, sine_records, synthetic_msm_loop)
from .lti import PLANT_DEN, PLANT_NUM, PLANT_DELAY, TransferFunction, lowpass_filter
from .simulate import (MODES, ReferenceSpec, ScenarioConfig, fluctuation_band, make_reference,
                       run_scenario, settled_band, tracking_rms)
from .timeseries import TimeSeries

log = logging.getLogger("msmkp")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_MODEL = {"file": "", "operator": []}
_OUTPUT = {"plot": False}
_SIGNAL = {"kind": "triangle", "amplitude": 2.5, "frequency": 0.1, "offset": 2.5,
           "phase_deg": -90.0, "step_time": 0.0, "amplitudes": [], "amp_min": 0.0,
           "levels": [], "hold": 1.0, "seed": 0, "duration": 20.0, "rate": 2000.0}

DEFAULTS = {
    "hysteresis": {
        "model": _MODEL, "output": _OUTPUT, "input": dict(_SIGNAL),
        "plant": {"kappa_tilde": KAPPA_TILDE},
    },
    "compensate": {
        "model": _MODEL, "output": _OUTPUT,
        "reference": dict(_SIGNAL, kind="sine", amplitude=0.8, offset=0.0, phase_deg=0.0,
                          amplitudes=[0.8, 0.4, 0.6], duration=30.0),
        "compensator": {"gain": 2000.0, "u0": 0.0, "u_limits": [], "stall_window": 1.0},
    },
    "closedloop": {
        "model": _MODEL, "output": _OUTPUT,
        "reference": dict(_SIGNAL, kind="sine", amplitude=200e-6, frequency=1.0,
                          offset=200e-6, duration=5.0),
        "scenario": {"modes": list(MODES), "noise_std": 8e-6, "seed": 0,
                     "feedback_reference": "filtered", "metric_start": 1.0,
                     "plant_weight_scale": 1.0, "plant_kappa_scale": 1.0,
                     "i_limits": [0.0, 5.0], "anti_windup": True,
                     "disturbance_amplitude": 0.0, "disturbance_frequency": 0.0},
        "controller": {"kp": DESIGN_KP, "ki": DESIGN_KI, "filter_cutoff_hz": 10.0},
        "compensator": {"gain": 2000.0},
        "plant": {"kappa_tilde": KAPPA_TILDE},
    },
    "frf": {
        "output": _OUTPUT,
        "frf": {"source": "synthetic", "frequencies_hz": [], "n_points": 20,
                "f_min": 1.0, "f_max": 300.0, "amplitude": 1.0, "n_periods": 20,
                "noise_std": 0.0, "seed": 0, "rate": 2000.0, "settle_periods": 0,
                "records": []},
        "fit": {"max_delay": 0.01},
    },
    "fit": {
        "output": _OUTPUT,
        "fit": {"source": "synthetic", "file": "", "n_operators": 3, "prefilter_hz": 10.0,
                "stroke": STROKE, "noise_std": 8e-6, "seed": 0, "rounds": 4, "stride": 10,
                "w_min": 0.0, "digits": 6},
    },
    "margins": {
        "output": _OUTPUT,
        "controller": {"kp": DESIGN_KP, "ki": DESIGN_KI, "filter_cutoff_hz": 10.0},
        "plant": {"num": list(PLANT_NUM), "den": list(PLANT_DEN), "delay": PLANT_DELAY},
        "scan": {"w_min": 0.1, "w_max": 1e5, "points": 400},
    },
}


def normalize_config(command: str, data: dict) -> dict:
    """Validate a parsed config against the command's schema and fill defaults."""
    return merge_defaults(data, DEFAULTS[command])


def load_config(command: str, path) -> dict:
    return normalize_config(command, read_toml(path)) if path else \
        normalize_config(command, {})


def _model(section: dict, base: Path) -> KpModel:
    if section["operator"]:
        try:
            return KpModel.from_dict({"operator": section["operator"]})
        except ValueError as exc:
            raise ConfigError(f"model.operator: {exc}") from None
    path = Path(section["file"]) if section["file"] else fixture_path()
    if not path.is_absolute() and section["file"]:
        path = base / path
    return load_kp_params(path)


def _reference(section: dict, seed=None) -> tuple[ReferenceSpec, float, float]:
    fields = {k: v for k, v in section.items() if k not in ("duration", "rate")}
    if seed is not None:
        fields["seed"] = seed
    try:
        spec = ReferenceSpec(**fields)
        make_reference(spec, section["duration"], section["rate"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"reference: {exc}") from None
    return spec, section["duration"], section["rate"]


def _plot_script(path: Path, csv_name: str, x: str, ys: list[str], title: str) -> None:
    lines = ["set datafile separator ','", "set key autotitle columnhead",
             f"set title '{title}'", f"set xlabel '{x}'",
             "plot " + ", ".join(f"'{csv_name}' using '{x}':'{y}' with lines" for y in ys)]
    path.write_text("\n".join(lines) + "\n")


def _write_report(path: Path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("quantity,value\n")
        for key, value in rows:
            fh.write(f"{key},{value:.12g}\n" if isinstance(value, float) else f"{key},{value}\n")


def cmd_hysteresis(cfg: dict, out: Path, base: Path, seed=None) -> list[str]:
    model = _model(cfg["model"], base)
    spec, duration, rate = _reference(cfg["input"], seed)
    u = make_reference(spec, duration, rate)["reference"]
    rest = model.output
    y = model.simulate(u)
    stroke = cfg["plant"]["kappa_tilde"] * PLANT_DC_GAIN * (y - rest)
    ts = TimeSeries(1.0 / rate, {"input": u, "output": y, "stroke_m": stroke})
    ts.to_csv(out / "loop.csv")
    files = ["loop.csv"]
    if cfg["output"]["plot"]:
        _plot_script(out / "loop.gp", "loop.csv", "input", ["output"], "KP hysteresis loop")
        files.append("loop.gp")
    log.info("output range [%.6g, %.6g], bound %.6g, max stroke %.1f um",
             y.min(), y.max(), model.bound, stroke.max() * 1e6)
    return files


def cmd_compensate(cfg: dict, out: Path, base: Path, seed=None) -> list[str]:
    model = _model(cfg["model"], base)
    spec, duration, rate = _reference(cfg["reference"], seed)
    ref = make_reference(spec, duration, rate)
    c = cfg["compensator"]
    limits = tuple(c["u_limits"]) if c["u_limits"] else None
    ts = run_compensation(model, c["gain"], ref, u0=c["u0"], u_limits=limits,
                          stall_window=c["stall_window"])
    ts.to_csv(out / "compensate.csv")
    span = 2 * model.bound
    quarter = int(round(0.25 / spec.frequency * rate)) if spec.kind in ("sine", "triangle") else 0
    err = np.abs(ts["error"][quarter:])
    _write_report(out / "report.csv", [
        ("max_abs_error", float(err.max(initial=0.0))),
        ("max_abs_error_over_range", float(err.max(initial=0.0) / span)),
        ("unreachable", str(ts.metadata["unreachable"]).lower()),
        ("stall_time_s", ts.metadata["stall_time"])])
    files = ["compensate.csv", "report.csv"]
    if cfg["output"]["plot"]:
        _plot_script(out / "compensate.gp", "compensate.csv", "time_s", ["y_star", "y_hat", "u"],
                     "Feedforward compensation")
        files.append("compensate.gp")
    return files


def _run_mode(args):
    return run_scenario(args)


def cmd_closedloop(cfg: dict, out: Path, base: Path, seed=None, jobs: int = 1) -> list[str]:
    model = _model(cfg["model"], base)
    spec, duration, rate = _reference(cfg["reference"])
    sc = cfg["scenario"]
    ctl = cfg["controller"]
    run_seed = sc["seed"] if seed is None else seed
    if not 0 <= sc["metric_start"] < duration:
        raise ConfigError(f"scenario.metric_start must lie in [0, {duration}), "
                          f"got {sc['metric_start']}")
    configs = []
    for mode in sc["modes"]:
        try:
            scfg = ScenarioConfig(
                mode=mode, reference=spec, duration=duration, rate=rate,
                noise_std=sc["noise_std"], seed=run_seed, kp=ctl["kp"], ki=ctl["ki"],
                anti_windup=sc["anti_windup"], filter_cutoff_hz=ctl["filter_cutoff_hz"],
                feedback_reference=sc["feedback_reference"], comp_gain=cfg["compensator"]["gain"],
                model=model, plant_weight_scale=sc["plant_weight_scale"],
                kappa=cfg["plant"]["kappa_tilde"], plant_kappa_scale=sc["plant_kappa_scale"],
                i_limits=tuple(sc["i_limits"]), disturbance_amplitude=sc["disturbance_amplitude"],
                disturbance_frequency=sc["disturbance_frequency"])
            scfg.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenario: {exc}") from None
        configs.append(scfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_mode, configs))
    else:
        results = [run_scenario(c) for c in configs]
    files, rows = [], []
    for scfg, ts in zip(configs, results):
        name = f"closedloop_{scfg.mode}.csv"
        ts.to_csv(out / name)
        files.append(name)
        # band around a step's set point, counted from the first time it is reached
        settled = settled_band(ts, spec.offset + spec.amplitude, spec.step_time) \
            if spec.kind == "step" else math.nan
        rows.append((scfg.mode, tracking_rms(ts, sc["metric_start"]),
                     fluctuation_band(ts, sc["metric_start"]), settled,
                     ts.metadata["clipped_samples"]))
    with open(out / "summary.csv", "w") as fh:
        fh.write("mode,rms_tracking_error_m,fluctuation_band_m,settled_band_m,clipped_samples\n")
        for mode, rms, band, settled, clipped in rows:
            fh.write(f"{mode},{rms:.12g},{band:.12g},{settled:.12g},{clipped}\n")
    for mode, rms, band, _, _ in rows:
        log.info("%-16s rms error %.3f um, band %.3f um", mode, rms * 1e6, band * 1e6)
    files.append("summary.csv")
    if cfg["output"]["plot"]:
        lines = ["set datafile separator ','", "set key autotitle columnhead",
                 "set xlabel 'time_s'", "plot " + ", ".join(
                     f"'{f}' using 'time_s':'plant_output' with lines title '{c.mode}'"
                     for f, c in zip(files, configs))
                 + f", '{files[0]}' using 'time_s':'reference' with lines title 'reference'"]
        (out / "closedloop.gp").write_text("\n".join(lines) + "\n")
        files.append("closedloop.gp")
    return files


def cmd_frf(cfg: dict, out: Path, base: Path, seed=None) -> list[str]:
    f = cfg["frf"]
    if f["source"] == "synthetic":
        freqs = f["frequencies_hz"] or np.geomspace(f["f_min"], f["f_max"], f["n_points"]).tolist()
        records = sine_records(TransferFunction(PLANT_NUM, PLANT_DEN, PLANT_DELAY), freqs,
                               rate=f["rate"], n_periods=f["n_periods"], amplitude=f["amplitude"],
                               noise_std=f["noise_std"], seed=f["seed"] if seed is None else seed)
    elif f["source"] == "records":
        records = []
        for k, rec in enumerate(f["records"]):
            try:
                path = base / rec["file"]
                ts = TimeSeries.from_csv(path)
                records.append((float(rec["frequency"]), ts.select(rec.get("input", "u")),
                                ts.select(rec.get("output", "y"))))
            except (KeyError, OSError, ValueError) as exc:
                raise ConfigError(f"frf.records[{k}]: {exc}") from None
    else:
        raise ConfigError(f"frf.source must be 'synthetic' or 'records', got {f['source']!r}")
    try:
        points = estimate_frf(records, settle_periods=f["settle_periods"])
    except ValueError as exc:
        raise ConfigError(f"frf: {exc}") from None
    fit = fit_sos_delay(points, max_delay=cfg["fit"]["max_delay"])
    freqs = np.array([p[0] for p in points])
    data = np.array([p[1] for p in points])
    model = fit.tf(2j * np.pi * freqs)
    with open(out / "frf.csv", "w") as fh:
        fh.write("frequency_hz,omega,magnitude,phase_deg,model_magnitude,model_phase_deg\n")
        for fr, d, m in zip(freqs, data, model):
            fh.write(",".join(f"{v:.12g}" for v in (fr, 2 * np.pi * fr, abs(d),
                                                    np.degrees(np.angle(d)), abs(m),
                                                    np.degrees(np.angle(m)))) + "\n")
    _write_report(out / "fit_report.csv", [
        ("gain", fit.gain), ("wn_rad_s", fit.wn), ("zeta", fit.zeta), ("delay_s", fit.delay),
        ("den_s1", 2 * fit.zeta * fit.wn), ("den_s0", fit.wn ** 2),
        ("relative_residual_rms", fit.residual)])
    files = ["frf.csv", "fit_report.csv"]
    log.info("fit: %.6g / (s^2 + %.6g s + %.6g) exp(-%.6g s)", fit.gain,
             2 * fit.zeta * fit.wn, fit.wn ** 2, fit.delay)
    if cfg["output"]["plot"]:
        (out / "frf.gp").write_text(
            "set datafile separator ','\nset logscale xy\nset key autotitle columnhead\n"
            "plot 'frf.csv' using 'omega':'magnitude' with points, "
            "'frf.csv' using 'omega':'model_magnitude' with lines\n")
        files.append("frf.gp")
    return files


def cmd_fit(cfg: dict, out: Path, base: Path, seed=None) -> list[str]:
    f = cfg["fit"]
    if f["source"] == "synthetic":
        loop = synthetic_msm_loop(stroke=f["stroke"], noise_std=f["noise_std"],
                                  seed=f["seed"] if seed is None else seed)
    elif f["source"] == "file":
        try:
            loop = TimeSeries.from_csv(base / f["file"])
            missing = {"current", "displacement"} - set(loop.names)
            if missing:
                raise KeyError(f"missing channels {sorted(missing)}")
        except (KeyError, OSError, ValueError) as exc:
            raise ConfigError(f"fit.file: {exc}") from None
    else:
        raise ConfigError(f"fit.source must be 'synthetic' or 'file', got {f['source']!r}")
    disp = loop["displacement"]
    if f["prefilter_hz"] > 0:
        disp = prefilter(disp, loop.h, f["prefilter_hz"])
    z = 2 * disp / f["stroke"] - 1
    fit = fit_kp_model(loop["current"], z, n_operators=f["n_operators"], rounds=f["rounds"],
                       stride=f["stride"], w_min=f["w_min"])

    def r(x):
        return float(f"{x:.{f['digits']}g}")

    params = {"N": len(fit.model), "operator": [
        {"delta": r(op.delta), "w": r(op.w), "m": r(op.m), "gamma": r(op.gamma), "rho": r(rho),
         "y0": -r(op.gamma) * r(op.m)}
        for op, rho in zip(fit.model.operators, fit.model.weights)]}
    model = KpModel.from_dict(params)
    save_kp_params(model, out / "kp_params.toml",
                   comment="KP parameters fitted by `msmkp fit` (unity-saturated, input in A).")
    fitted = model.copy().simulate(loop["current"])
    TimeSeries(loop.h, {"current": loop["current"], "target": z, "model": fitted}).to_csv(
        out / "fit_loop.csv")
    _write_report(out / "fit_report.csv", [
        ("n_operators", len(model)), ("rms_normalized", fit.rms),
        ("bound", model.bound), ("max_gain", model.max_gain)])
    return ["kp_params.toml", "fit_loop.csv", "fit_report.csv"]


def cmd_margins(cfg: dict, out: Path, base: Path, seed=None) -> list[str]:
    c, p, s = cfg["controller"], cfg["plant"], cfg["scan"]
    try:
        plant = TransferFunction(p["num"], p["den"], p["delay"])
        L = open_loop(c["kp"], c["ki"], plant, lowpass_filter(c["filter_cutoff_hz"]))
    except ValueError as exc:
        raise ConfigError(f"margins: {exc}") from None
    rep = stability_margins(L, s["w_min"], s["w_max"], s["points"] * 5)
    _write_report(out / "margins.csv", rep.as_rows())
    w = np.geomspace(s["w_min"], s["w_max"], s["points"])
    resp = L.freq_response(w)
    with open(out / "bode.csv", "w") as fh:
        fh.write("omega,magnitude,phase_deg\n")
        for wi, g, ph in zip(w, resp, np.degrees(L.phase(w))):
            fh.write(f"{wi:.12g},{abs(g):.12g},{ph:.12g}\n")
    log.info("phase margin %.2f deg at %.3f rad/s, gain margin %.2f dB",
             rep.phase_margin_deg, rep.gain_crossover_rad_s, rep.gain_margin_db)
    return ["margins.csv", "bode.csv"]


COMMANDS = {"hysteresis": cmd_hysteresis, "compensate": cmd_compensate,
            "closedloop": cmd_closedloop, "frf": cmd_frf, "fit": cmd_fit,
            "margins": cmd_margins}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msmkp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML config; defaults apply when omitted")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        p.add_argument("--seed", type=int, help="override every seed in the config")
        p.add_argument("--format", choices=["csv"], default="csv")
        if name == "closedloop":
            p.add_argument("--jobs", type=int, default=1, help="parallel scenario runs")
    return parser


def _manifest(command, cfg, seed, files) -> dict:
    return {"command": command, "seed": seed, "outputs": files, "config": cfg,
            "versions": {"msmkp": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__}}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    base = args.config.parent if args.config else Path.cwd()
    try:
        cfg = load_config(args.command, args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        kwargs = {"jobs": args.jobs} if args.command == "closedloop" else {}
        files = COMMANDS[args.command](cfg, args.out, base, args.seed, **kwargs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, RankDeficientError, NoCrossoverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    (args.out / "config.toml").write_text(dump_toml(cfg))
    manifest = _manifest(args.command, cfg, args.seed, files + ["config.toml"])
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
