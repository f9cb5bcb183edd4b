"""Command-line entry point.

Subcommands cover the whole pipeline:

    simulate   solve one drug configuration, write the trajectory CSV
    calibrate  find a pulse amplitude that elicits an action potential
    gen-data   write a drug dataset and its sparse observations
    train      fit the surrogate (hypernetwork or single-config mode)
    predict    evaluate a trained surrogate on a time grid
    evaluate   score a surrogate against the solver, with figures

Every command writes a JSON run manifest next to its outputs (resolved
options, seed, artifact list, wall-clock timings), so a run can be
reproduced from the manifest alone. Defaults can be overridden by a
YAML config file (--config); explicit flags win over the file.

Exit codes: 0 success, 2 usage, 3 numeric failure, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .capmodel import DEFAULT_CONSTANTS, DrugConfig, ModelConstants, StimulusSpec
from .solver import (
    DEFAULT_STIMULUS,
    CalibrationError,
    IntegrationError,
    SolveConfig,
    Trajectory,
    calibrate_stimulus,
    resting_state,
    solve,
    write_trajectory_csv,
)
from . import biomarkers, figures, training
from .training import (
    Checkpoint,
    DatasetSpec,
    NumericsError,
    TrainConfig,
    dataset_and_observations,
    load_checkpoint,
    save_checkpoint,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a mapping")
    return cfg


def _constants_from(cfg: dict) -> ModelConstants:
    section = cfg.get("constants", {})
    return replace(DEFAULT_CONSTANTS, **{k: float(v) for k, v in section.items()})


def _stimulus_from(cfg: dict) -> StimulusSpec:
    section = cfg.get("stimulus", {})
    base = {"onset": DEFAULT_STIMULUS.onset, "duration": DEFAULT_STIMULUS.duration,
            "amplitude": DEFAULT_STIMULUS.amplitude}
    base.update({k: float(v) for k, v in section.items()})
    return StimulusSpec(**base)


def _solve_cfg_from(cfg: dict, args=None) -> SolveConfig:
    section = dict(cfg.get("solver", {}))
    if args is not None:
        for name in ("t_end", "grid_dt", "rtol", "atol"):
            val = getattr(args, name.replace("-", "_"), None)
            if val is not None:
                section[name] = val
    return SolveConfig(**{k: float(v) for k, v in section.items()})


def _drug_from(cfg: dict, args) -> DrugConfig:
    section = dict(cfg.get("drug", {}))
    for flag, key in (("c", "c"), ("ic50_naf", "ic50_naf"), ("ic50_cal", "ic50_cal"),
                      ("ic50_tof", "ic50_tof"), ("ic50_kr", "ic50_kr")):
        val = getattr(args, flag, None)
        if val is not None:
            section[key] = val
    return DrugConfig(**{k: float(v) for k, v in section.items()})


def _train_cfg_from(cfg: dict, args) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    overrides = {
        "iters": args.iters, "lr_plateau": args.lr_plateau,
        "obs_fraction": args.obs_fraction, "colloc_size": args.colloc_size,
        "seed": args.seed, "checkpoint_every": args.checkpoint_every,
    }
    for k, v in overrides.items():
        if v is not None:
            section[k] = v
    if args.deterministic:
        section["deterministic"] = True
    return TrainConfig.from_dict({**TrainConfig().to_dict(), **section})


def _dataset_from(cfg: dict, args) -> DatasetSpec:
    section = dict(cfg.get("dataset", {}))
    if getattr(args, "q", None) is not None:
        section["q"] = args.q
    if getattr(args, "seed", None) is not None:
        section["seed"] = args.seed
    return DatasetSpec.from_dict({**DatasetSpec().to_dict(), **section})


def _write_manifest(path: Path, command: str, options: dict, artifacts: list,
                    timings: dict, extra: dict | None = None) -> None:
    doc = {
        "command": command,
        "tool_version": __version__,
        "options": options,
        "artifacts": [str(a) for a in artifacts],
        "timings_seconds": timings,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, default=str)
        fh.write("\n")


def _add_drug_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--c", type=float, default=None, help="compound concentration (uM)")
    for name in ("naf", "cal", "tof", "kr"):
        p.add_argument(f"--ic50-{name}", dest=f"ic50_{name}", type=float, default=None,
                       help=f"IC50 of the {name.upper()} channel (uM)")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="random seed")
    p.add_argument("--deterministic", action="store_true",
                   help="force the deterministic single-schedule path")
    p.add_argument("--out", default=None, help="output file or directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsbinn",
        description="Cardiac action potential surrogate workbench")
    parser.add_argument("--version", action="version", version=f"hsbinn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="solve one drug configuration to CSV")
    _add_common(p)
    _add_drug_flags(p)
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--grid-dt", type=float, default=None)
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--atol", type=float, default=None)
    p.add_argument("--no-stimulus", action="store_true", help="solve without pacing")
    p.add_argument("--plot", action="store_true", help="also render the state curves")

    p = sub.add_parser("calibrate", help="calibrate the pacing pulse amplitude")
    _add_common(p)
    p.add_argument("--target-peak", type=float, default=10.0,
                   help="required drug-free AP peak (mV)")

    p = sub.add_parser("gen-data", help="write a drug dataset and observations")
    _add_common(p)
    p.add_argument("--q", type=int, default=None, help="number of drug configurations")
    p.add_argument("--obs-fraction", type=float, default=None)

    p = sub.add_parser("train", help="train the surrogate")
    _add_common(p)
    p.add_argument("--q", type=int, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--mode", choices=("hyper", "sbinn"), default="hyper")
    p.add_argument("--lr-plateau", type=float, default=None)
    p.add_argument("--obs-fraction", type=float, default=None)
    p.add_argument("--colloc-size", type=int, default=None)
    p.add_argument("--checkpoint-every", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")

    p = sub.add_parser("predict", help="evaluate a trained surrogate on a grid")
    _add_common(p)
    _add_drug_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--grid-dt", type=float, default=None)

    p = sub.add_parser("evaluate", help="score a surrogate against the solver")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--q", type=int, default=None, help="test-set size")
    p.add_argument("--oracle", action="store_true",
                   help="self-comparison mode: the solver scores itself")
    p.add_argument("--t-end", type=float, default=None)
    p.add_argument("--grid-dt", type=float, default=None)
    p.add_argument("--rtol", type=float, default=None)
    p.add_argument("--atol", type=float, default=None)

    return parser


def cmd_simulate(args) -> int:
    cfg = _load_config_file(args.config)
    constants = _constants_from(cfg)
    stim = StimulusSpec.off() if args.no_stimulus else _stimulus_from(cfg)
    solve_cfg = _solve_cfg_from(cfg, args)
    drug = _drug_from(cfg, args)
    out = Path(args.out or "trajectory.csv")
    t0 = time.perf_counter()
    traj = solve(drug, stim=stim, cfg=solve_cfg, constants=constants)
    solve_s = time.perf_counter() - t0
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(traj, out)
    artifacts = [out]
    if args.plot:
        fig_path = out.with_suffix(".png")
        figures.render_trajectory(traj, fig_path)
        artifacts.append(fig_path)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "simulate",
        {"drug": drug.__dict__, "stimulus": stim.__dict__,
         "solver": solve_cfg.__dict__, "constants": constants.__dict__},
        artifacts, {"solve": solve_s})
    print(f"wrote {out} ({traj.t.size} rows)")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _load_config_file(args.config)
    constants = _constants_from(cfg)
    solve_cfg = _solve_cfg_from(cfg)
    t0 = time.perf_counter()
    spec = calibrate_stimulus(target_peak=args.target_peak, cfg=solve_cfg,
                              constants=constants)
    dt = time.perf_counter() - t0
    print(f"calibrated stimulus: onset={spec.onset} duration={spec.duration} "
          f"amplitude={spec.amplitude:.6g}")
    artifacts = []
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as fh:
            yaml.safe_dump({"stimulus": {"onset": spec.onset, "duration": spec.duration,
                                         "amplitude": float(spec.amplitude)}}, fh)
        artifacts.append(out)
        _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "calibrate",
                        {"target_peak": args.target_peak}, artifacts, {"calibrate": dt})
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load_config_file(args.config)
    constants = _constants_from(cfg)
    stim = _stimulus_from(cfg)
    solve_cfg = _solve_cfg_from(cfg)
    dspec = _dataset_from(cfg, args)
    fraction = args.obs_fraction
    if fraction is None:
        fraction = float(cfg.get("train", {}).get("obs_fraction",
                                                  TrainConfig().obs_fraction))
    out_dir = Path(args.out or "dataset")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    configs, obs, trajs = dataset_and_observations(
        dspec, fraction, stim=stim, solve_cfg=solve_cfg, constants=constants)
    dt = time.perf_counter() - t0

    configs_path = out_dir / "configs.csv"
    with open(configs_path, "w") as fh:
        fh.write("index,c,ic50_naf,ic50_cal,ic50_tof,ic50_kr\n")
        for i, d in enumerate(configs):
            fh.write(f"{i}," + ",".join(
                "%.17g" % x for x in (d.c, d.ic50_naf, d.ic50_cal, d.ic50_tof, d.ic50_kr)) + "\n")
    obs_path = out_dir / "observations.csv"
    from .solver import TRAJECTORY_HEADER
    with open(obs_path, "w") as fh:
        fh.write("config_index," + TRAJECTORY_HEADER + "\n")
        for i in range(len(obs)):
            row = [obs.config_index[i], obs.times[i], *obs.states[i]]
            fh.write("%d," % row[0] + ",".join("%.17g" % x for x in row[1:]) + "\n")
    n_failed = sum(1 for t in trajs if t is None)
    _write_manifest(out_dir / "manifest.json", "gen-data",
                    {"dataset": dspec.to_dict(), "obs_fraction": fraction,
                     "stimulus": stim.__dict__, "solver": solve_cfg.__dict__},
                    [configs_path, obs_path], {"generate": dt},
                    {"n_observations": len(obs), "n_failed_configs": n_failed})
    print(f"wrote {configs_path} ({len(configs)} configs) and {obs_path} "
          f"({len(obs)} observations)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config_file(args.config)
    constants = _constants_from(cfg)
    stim = _stimulus_from(cfg)
    solve_cfg = _solve_cfg_from(cfg)
    out_dir = Path(args.out or "run")
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = out_dir / "model.ckpt"
    log_path = out_dir / "train_log.jsonl"

    resume = None
    if args.resume is not None:
        resume = load_checkpoint(args.resume)
        dspec = resume.dataset
        tcfg = resume.train_cfg
        if args.iters is not None:
            tcfg = TrainConfig.from_dict({**tcfg.to_dict(), "iters": args.iters})
        stim = resume.stim
        constants = resume.constants
        mode = resume.mode
        if dspec is None:
            raise ValueError("checkpoint carries no dataset spec; cannot resume")
    else:
        tcfg = _train_cfg_from(cfg, args)
        dspec = _dataset_from(cfg, args)
        mode = args.mode
        if mode == "sbinn" and dspec.q != 1:
            dspec = DatasetSpec.from_dict({**dspec.to_dict(), "q": 1})

    t0 = time.perf_counter()
    configs, obs, _ = dataset_and_observations(
        dspec, tcfg.obs_fraction, stim=stim, solve_cfg=solve_cfg, constants=constants)
    data_s = time.perf_counter() - t0

    u0 = resting_state(-85.0)
    t0 = time.perf_counter()
    log_mode = "a" if resume is not None else "w"
    with open(log_path, log_mode) as log_file:
        ckpt, history = training.train(
            configs, obs, u0, tcfg, mode=mode, stim=stim, constants=constants,
            t_max=solve_cfg.t_end, dataset=dspec, log_file=log_file,
            checkpoint_path=ckpt_path, resume=resume)
    train_s = time.perf_counter() - t0
    save_checkpoint(ckpt, ckpt_path)

    fig_path = out_dir / "loss_curves.png"
    figures.render_loss_curves(history, fig_path,
                               plateau_end=tcfg.plateau_end, decay_end=tcfg.decay_end)
    _write_manifest(out_dir / "manifest.json", "train",
                    {"dataset": dspec.to_dict(), "train": tcfg.to_dict(), "mode": mode,
                     "stimulus": stim.__dict__, "solver": solve_cfg.__dict__,
                     "resumed_from": args.resume},
                    [ckpt_path, log_path, fig_path],
                    {"observations": data_s, "train": train_s},
                    {"final_loss": history[-1]["loss_total"] if history else None,
                     "iterations": ckpt.iteration})
    print(f"trained to iteration {ckpt.iteration}; checkpoint at {ckpt_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _load_config_file(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    drug = _drug_from(cfg, args)
    grid_dt = args.grid_dt or 0.5
    out = Path(args.out or "prediction.csv")
    times = np.arange(0.0, ckpt.t_max + 0.5 * grid_dt, grid_dt)
    t0 = time.perf_counter()
    states = ckpt.predict(drug, times)
    dt = time.perf_counter() - t0
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trajectory_csv(Trajectory(t=times, states=states, drug=drug, stim=ckpt.stim), out)
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "predict",
                    {"checkpoint": args.checkpoint, "drug": drug.__dict__,
                     "grid_dt": grid_dt}, [out], {"predict": dt})
    print(f"wrote {out} ({times.size} rows)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _load_config_file(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    solve_cfg = _solve_cfg_from(cfg, args)
    dspec = _dataset_from(cfg, args)
    if args.seed is None and "dataset" not in cfg:
        # default test seed: disjoint from the training default
        dspec = DatasetSpec.from_dict({**dspec.to_dict(), "seed": 1000})
    if args.q is None and "dataset" not in cfg:
        dspec = DatasetSpec.from_dict({**dspec.to_dict(), "q": 16})
    configs = training.generate_dataset(dspec)

    out_dir = Path(args.out or "eval")
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    report = biomarkers.evaluate(ckpt, configs, solve_cfg=solve_cfg,
                                 oracle_mode=args.oracle)
    eval_s = time.perf_counter() - t0

    json_path = out_dir / "report.json"
    with open(json_path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")
    curves_path = out_dir / "report_curves.csv"
    biomarkers.write_curve_stats_csv(report, curves_path)
    apd_path = out_dir / "report_apd90.csv"
    biomarkers.write_apd_stats_csv(report, apd_path)

    u0 = resting_state(ckpt.v0)
    overlays = []
    for r in report.rows[:8]:
        traj = solve(r.drug, stim=ckpt.stim, cfg=solve_cfg, u0=u0,
                     constants=ckpt.constants)
        pred = traj.states if args.oracle else ckpt.predict(r.drug, traj.t)
        overlays.append((traj.t, traj.v, pred[:, 0], f"config {r.index}"))
    fig_v = out_dir / "voltage_overlays.png"
    figures.render_voltage_overlays(overlays, fig_v)
    fig_apd = out_dir / "apd90_scatter.png"
    figures.render_apd_scatter(report, fig_apd)

    per_config = [{"index": r.index, "solver_seconds": r.solver_seconds,
                   "surrogate_seconds": r.surrogate_seconds} for r in report.rows]
    _write_manifest(out_dir / "manifest.json", "evaluate",
                    {"checkpoint": args.checkpoint, "dataset": dspec.to_dict(),
                     "solver": solve_cfg.__dict__, "oracle": args.oracle},
                    [json_path, curves_path, apd_path, fig_v, fig_apd],
                    {"evaluate": eval_s},
                    {"solver_seconds": report.solver_seconds,
                     "surrogate_seconds": report.surrogate_seconds,
                     "surrogate_speedup": report.speedup,
                     "per_config_timings": per_config,
                     "n_apd_excluded": report.n_apd_excluded})
    med = report.curve_stats["V"]["Median"]
    print(f"evaluated {len(configs)} configs: median V nsd {med:.4g}, "
          f"speedup x{report.speedup:.1f}; report in {out_dir}")
    return EXIT_OK


_HANDLERS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (IntegrationError, CalibrationError, NumericsError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
