"""Command-line entry point: gen / train / eval / verify / ablate.

One workspace directory holds everything a run produces: generated
trajectories under data/, checkpoints and CSV logs under checkpoints/,
evaluation reports, and a manifest embedding the fully resolved
configuration so identical (config, seed) reruns are bitwise identical.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from .config import ConfigError, dump_config, load_config, resolve_config
from .datasets import (
    Trajectory,
    gen_springmesh,
    gen_vorticity2d,
    gen_wave1d,
    load_trajectory,
    save_trajectory,
    split_trajectories,
)
from .forecaster import (
    ForecastConfig,
    ForecastModel,
    train_forecaster,
    uniform_schedule,
)
from .grid import GridSpec
from .interpolator import InterpConfig, InterpModel, train_interpolator
from .metrics import crps_ensemble, ensemble_mse, ssr, tradeoff_curve
from .nets import load_checkpoint, save_checkpoint
from .sampler import RolloutConfig, ensemble
from .spde import EllipticOpParams
from .ukf import UkfParams
from .verification import run_all

NATIVE_BC = {"wave": "periodic", "springmesh": "dirichlet", "vorticity": "periodic"}


class CliError(RuntimeError):
    pass


def derive_seed(*parts):
    """Stable child seed from integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def method_label(config):
    plain = (
        config["interpolator"]["lambda_reg"] == 0
        and not config["forecaster"]["use_ukf"]
    )
    return "dyffusion_baseline" if plain else "pdyffusion"


def effective_bc(config):
    bc = config["interpolator"]["bc"]
    if bc:
        return bc
    kind = config["dataset"]["kind"]
    if kind == "file":
        return ""  # resolved from the loaded data
    return NATIVE_BC[kind]


def generate_one(config, seed):
    d = config["dataset"]
    kind = d["kind"]
    if kind == "wave":
        return gen_wave1d(
            d["n_grid"], d["n_frames"], d["wave_speed"], seed,
            extent=d["extent"], cfl=d["cfl"],
        )
    if kind == "springmesh":
        return gen_springmesh(
            d["mesh_k"], d["n_frames"], d["stiffness"], d["damping"], seed,
            dt=d["spring_dt"],
        )
    if kind == "vorticity":
        return gen_vorticity2d(
            d["vort_grid"], d["n_frames"], d["viscosity"], seed, dt=d["vort_dt"]
        )
    raise CliError(f"dataset kind {kind!r} cannot be generated")


def redeclare_bc(traj, bc):
    """Re-wrap trajectory values onto a grid with a different assumed bc."""
    if traj.spec.bc == bc:
        return traj
    spec = GridSpec(traj.spec.dims, traj.spec.extent, bc)
    return Trajectory(spec=spec, dt=traj.dt, frames=traj.frames)


def write_manifest(out_dir, name, payload):
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, header, rows, preamble=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if preamble:
            fh.write(f"# {preamble}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_gen(config, out_dir, seed, force=False):
    data_dir = os.path.join(out_dir, "data")
    if os.path.isdir(data_dir) and os.listdir(data_dir) and not force:
        raise CliError(f"{data_dir} already holds data; pass --force to overwrite")
    os.makedirs(data_dir, exist_ok=True)
    if config["dataset"]["kind"] == "file":
        raise CliError("dataset.kind='file' points at existing data; nothing to generate")
    n = config["dataset"]["n_trajectories"]
    files = []
    for k in range(n):
        traj = generate_one(config, derive_seed(seed, k))
        name = f"traj_{k:04d}.pdytraj"
        save_trajectory(traj, os.path.join(data_dir, name))
        files.append(name)
    splits = split_trajectories(n, seed)
    write_manifest(out_dir, "manifest_gen.json", {
        "command": "gen",
        "seed": seed,
        "config": config,
        "files": files,
        "splits": splits,
        "method": method_label(config),
    })
    return files


def load_dataset(config, out_dir):
    if config["dataset"]["kind"] == "file":
        data_dir = config["dataset"]["path"]
        if not data_dir:
            raise CliError("dataset.kind='file' requires dataset.path")
        names = sorted(f for f in os.listdir(data_dir) if f.endswith(".pdytraj"))
        if not names:
            raise CliError(f"no .pdytraj files under {data_dir}")
        trajs = [load_trajectory(os.path.join(data_dir, f)) for f in names]
        splits = split_trajectories(len(trajs), config["seed"])
        return trajs, splits
    manifest_path = os.path.join(out_dir, "manifest_gen.json")
    if not os.path.isfile(manifest_path):
        raise CliError(f"no generated dataset under {out_dir}; run `pdy gen` first")
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    data_dir = os.path.join(out_dir, "data")
    trajs = [load_trajectory(os.path.join(data_dir, f)) for f in manifest["files"]]
    return trajs, manifest["splits"]


def build_interp_config(config, bc):
    ic = config["interpolator"]
    return InterpConfig(
        op=EllipticOpParams(l=ic["l"], alpha=ic["alpha"], bc=bc),
        lambda_reg=ic["lambda_reg"],
        horizon=ic["horizon"],
        batch_size=ic["batch_size"],
        steps=ic["steps"],
        lr=ic["lr"],
        momentum=ic["momentum"],
        hidden_dims=tuple(ic["hidden_dims"]),
        time_embed_dim=ic["time_embed_dim"],
        init_seed=ic["init_seed"],
    )


def build_forecast_config(config):
    fc = config["forecaster"]
    u = fc["ukf"]
    return ForecastConfig(
        schedule=uniform_schedule(fc["n_diffusion_steps"], config["interpolator"]["horizon"]),
        horizon=config["interpolator"]["horizon"],
        ukf=UkfParams(
            alpha_u=u["alpha_u"], beta_u=u["beta_u"], kappa_u=u["kappa_u"],
            q_scale=u["q_scale"], r_scale=u["r_scale"], p0_scale=u["p0_scale"],
        ),
        use_ukf=fc["use_ukf"],
        batch_size=fc["batch_size"],
        steps=fc["steps"],
        lr=fc["lr"],
        momentum=fc["momentum"],
        hidden_dims=tuple(fc["hidden_dims"]),
        time_embed_dim=fc["time_embed_dim"],
        init_seed=fc["init_seed"],
    )


def load_interp_model(config, out_dir, grid, channels):
    """Rebuild the interpolator around a checkpoint; architecture travels
    with the checkpoint, the grid must match the data."""
    bc = effective_bc(config) or grid.bc
    imodel = InterpModel(cfg=build_interp_config(config, bc), grid=grid, channels=channels)
    path = os.path.join(out_dir, "checkpoints", "interpolator.ckpt")
    if not os.path.isfile(path):
        raise CliError("missing interpolator checkpoint; train the interpolator first")
    net, phi = load_checkpoint(path)
    state = channels * grid.n_cells
    if net.input_dim != 2 * state or net.output_dim != state:
        raise CliError(
            f"interpolator checkpoint expects state {net.output_dim}, "
            f"data grid has {state}"
        )
    imodel.net = net
    return imodel, phi


def load_forecast_model(config, out_dir, grid, channels):
    path = os.path.join(out_dir, "checkpoints", "forecaster.ckpt")
    if not os.path.isfile(path):
        raise CliError("missing forecaster checkpoint; run `pdy train` first")
    net, theta = load_checkpoint(path)
    state = channels * grid.n_cells
    if net.input_dim != state or net.output_dim != state:
        raise CliError(
            f"forecaster checkpoint expects state {net.input_dim}, "
            f"data grid has {state}"
        )
    fmodel = ForecastModel(cfg=build_forecast_config(config), grid=grid, channels=channels)
    fmodel.net = net
    return fmodel, theta


def cmd_train(config, out_dir, seed):
    trajs, splits = load_dataset(config, out_dir)
    bc = effective_bc(config) or trajs[0].spec.bc
    train_trajs = [redeclare_bc(trajs[i], bc) for i in splits["train"]]
    grid = train_trajs[0].spec
    channels = train_trajs[0].channels
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    label = method_label(config)
    stage = config["train"]["stage"]

    if stage in ("both", "interpolator"):
        icfg = build_interp_config(config, bc)
        imodel, phi, ilog = train_interpolator(
            train_trajs, icfg, derive_seed(seed, 101)
        )
        if ilog and not np.isfinite(ilog[-1][3]):
            raise CliError("interpolator training produced a nonfinite loss")
        save_checkpoint(os.path.join(ckpt_dir, "interpolator.ckpt"), imodel.net, phi)
        write_csv(
            os.path.join(ckpt_dir, "interp_log.csv"),
            ["step", "recon_loss", "pde_loss", "total"],
            ilog,
            preamble=f"method={label}",
        )
    if stage in ("both", "forecaster"):
        imodel, phi = load_interp_model(config, out_dir, grid, channels)
        fcfg = build_forecast_config(config)
        fmodel, theta, flog = train_forecaster(
            train_trajs, imodel, phi, fcfg, derive_seed(seed, 202)
        )
        if flog and not np.isfinite(flog[-1][3]):
            raise CliError("forecaster training produced a nonfinite loss")
        save_checkpoint(os.path.join(ckpt_dir, "forecaster.ckpt"), fmodel.net, theta)
        write_csv(
            os.path.join(ckpt_dir, "forecaster_log.csv"),
            ["step", "mse", "nll", "total"],
            flog,
            preamble=f"method={label}",
        )
    write_manifest(out_dir, "manifest_train.json", {
        "command": "train",
        "seed": seed,
        "config": config,
        "method": label,
        "stage": stage,
    })


def _rollout_config(config):
    r = config["rollout"]
    fcfg = build_forecast_config(config)
    return RolloutConfig(
        schedule=fcfg.schedule,
        horizon=fcfg.horizon,
        windows=r["windows"],
        ensemble_size=r["ensemble_size"],
        input_noise_sigma=r["input_noise_sigma"],
        ukf_correct=r["ukf_correct"],
        ukf=fcfg.ukf,
        r_inflation=r["r_inflation"],
    )


def evaluate_checkpoints(config, out_dir, eval_seed):
    """Ensemble rollouts on the test split; returns aggregate and per-step rows."""
    trajs, splits = load_dataset(config, out_dir)
    bc = effective_bc(config) or trajs[0].spec.bc
    test = [redeclare_bc(trajs[i], bc) for i in splits["test"]]
    test = test[: config["eval"]["max_test_trajectories"]]
    grid = test[0].spec
    channels = test[0].channels

    imodel, phi = load_interp_model(config, out_dir, grid, channels)
    fmodel, theta = load_forecast_model(config, out_dir, grid, channels)

    rcfg = _rollout_config(config)
    needed = rcfg.windows * rcfg.horizon + 1
    crps_vals, mse_vals, ssr_vals = [], [], []
    step_mse = None
    step_spread = None
    for k, traj in enumerate(test):
        if traj.n_frames < needed:
            raise CliError(
                f"test trajectory has {traj.n_frames} frames; rollout needs {needed}"
            )
        truth = traj.frames[:needed]
        members = ensemble(
            fmodel, theta, imodel, phi, traj.frame(0), rcfg,
            seed=derive_seed(eval_seed, k), dt=traj.dt,
        )
        stack = np.stack([m.frames for m in members])  # (E, T, C, ...)
        pred, tru = stack[:, 1:], truth[1:]
        crps_vals.append(crps_ensemble(pred, tru))
        mse_vals.append(ensemble_mse(pred, tru))
        try:
            ssr_vals.append(ssr(pred, tru))
        except ValueError:
            ssr_vals.append(None)
        per_t_mse = np.mean((stack.mean(axis=0) - truth) ** 2, axis=tuple(range(1, truth.ndim)))
        per_t_spread = np.sqrt(stack.var(axis=0, ddof=0).mean(axis=tuple(range(1, truth.ndim))))
        step_mse = per_t_mse if step_mse is None else step_mse + per_t_mse
        step_spread = per_t_spread if step_spread is None else step_spread + per_t_spread

    n = len(test)
    if any(v is None for v in ssr_vals) or rcfg.ensemble_size < 2:
        ssr_out = "undefined"
    else:
        ssr_out = float(np.mean(ssr_vals))
    curves = [
        (t, float(step_mse[t] / n), float(step_spread[t] / n))
        for t in range(needed)
    ]
    return {
        "crps": float(np.mean(crps_vals)),
        "mse": float(np.mean(mse_vals)),
        "ssr": ssr_out,
        "curves": curves,
    }


def cmd_eval(config, out_dir, seed):
    label = method_label(config)
    dataset = config["dataset"]["kind"]
    rows = []
    for eval_seed in config["eval"]["seeds"]:
        t0 = time.perf_counter()
        agg = evaluate_checkpoints(config, out_dir, derive_seed(seed, eval_seed))
        wall = time.perf_counter() - t0
        rows.append(
            (dataset, label, eval_seed, agg["crps"], agg["mse"], agg["ssr"], wall)
        )
        if config["eval"]["per_timestep_curves"]:
            write_csv(
                os.path.join(out_dir, f"curves_seed{eval_seed}.csv"),
                ["t", "mse", "spread"],
                agg["curves"],
            )
    write_csv(
        os.path.join(out_dir, "report.csv"),
        ["dataset", "method", "seed", "CRPS", "MSE", "SSR", "wallclock_s"],
        rows,
    )
    write_manifest(out_dir, "manifest_eval.json", {
        "command": "eval",
        "seed": seed,
        "config": config,
        "method": label,
    })
    return rows


def cmd_verify(out_dir=None, seed=0):
    results = run_all(seed=seed)
    lines = [r.line() for r in results]
    for line in lines:
        print(line)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "verify_report.txt"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    return all(r.passed for r in results)


def cmd_ablate(config, out_dir, seed, axis):
    values = {
        "lambda": config["ablate"]["lambda_values"],
        "bc": config["ablate"]["bc_values"],
        "noise": config["ablate"]["noise_levels"],
    }.get(axis)
    if values is None:
        raise CliError(f"unknown ablation axis {axis!r}")
    if not values:
        raise CliError(f"ablation axis {axis!r} has no values in the config")

    if axis == "noise":
        # delegate to the trade-off curve on one evaluated ensemble
        trajs, splits = load_dataset(config, out_dir)
        bc = effective_bc(config) or trajs[0].spec.bc
        test = [redeclare_bc(trajs[i], bc) for i in splits["test"]]
        traj = test[0]
        grid, channels = traj.spec, traj.channels
        imodel, phi = load_interp_model(config, out_dir, grid, channels)
        fmodel, theta = load_forecast_model(config, out_dir, grid, channels)
        rcfg = _rollout_config(config)
        needed = rcfg.windows * rcfg.horizon + 1
        members = ensemble(fmodel, theta, imodel, phi, traj.frame(0), rcfg,
                           seed=derive_seed(seed, 7), dt=traj.dt)
        stack = np.stack([m.frames for m in members])[:, 1:]
        truth = traj.frames[1:needed]
        rows = tradeoff_curve(stack, truth, values, seed=derive_seed(seed, 8))
        write_csv(
            os.path.join(out_dir, f"sweep_{axis}.csv"),
            ["sigma", "MSE", "abs_one_minus_SSR"],
            rows,
        )
        return rows

    rows = []
    for value in values:
        sub = json.loads(json.dumps(config))
        if axis == "lambda":
            sub["interpolator"]["lambda_reg"] = value
        else:
            sub["interpolator"]["bc"] = value
        sub = resolve_config(sub)
        sub_dir = os.path.join(out_dir, f"ablate_{axis}_{value}")
        os.makedirs(sub_dir, exist_ok=True)
        # share the parent's generated data
        for name in ("manifest_gen.json",):
            src = os.path.join(out_dir, name)
            if not os.path.isfile(src):
                raise CliError("ablation needs a generated dataset; run `pdy gen` first")
        _link_dataset(out_dir, sub_dir)
        cmd_train(sub, sub_dir, seed)
        sub_eval = json.loads(json.dumps(sub))
        sub_eval["eval"]["seeds"] = [config["eval"]["seeds"][0]]
        report = cmd_eval(resolve_config(sub_eval), sub_dir, seed)
        _, _, _, crps_v, mse_v, ssr_v, _ = report[0]
        rows.append((value, crps_v, mse_v, ssr_v))
    write_csv(
        os.path.join(out_dir, f"sweep_{axis}.csv"),
        [axis, "CRPS", "MSE", "SSR"],
        rows,
    )
    return rows


def _link_dataset(parent, child):
    """Expose the parent's dataset inside an ablation workspace."""
    import shutil

    src_manifest = os.path.join(parent, "manifest_gen.json")
    dst_manifest = os.path.join(child, "manifest_gen.json")
    shutil.copyfile(src_manifest, dst_manifest)
    src_data = os.path.join(parent, "data")
    dst_data = os.path.join(child, "data")
    if os.path.islink(dst_data) or os.path.isdir(dst_data):
        return
    try:
        os.symlink(os.path.abspath(src_data), dst_data)
    except OSError:
        shutil.copytree(src_data, dst_data)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="pdy",
        description="PDE-regularized dynamics-informed diffusion forecasting",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("gen", "train", "eval", "verify", "ablate"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON config path")
        p.add_argument("--out", default="runs", help="workspace directory")
        p.add_argument("--seed", type=int, default=None, help="overrides config seed")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (PDY_THREADS as fallback)")
        p.add_argument("--force", action="store_true", help="allow overwriting outputs")
        if name == "ablate":
            p.add_argument("--axis", choices=("lambda", "bc", "noise"), required=True)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config) if args.config else resolve_config({})
        if args.seed is not None:
            config["seed"] = args.seed
        threads = args.threads
        if threads is None:
            threads = int(os.environ.get("PDY_THREADS", config["threads"]))
        config["threads"] = max(1, threads)
        seed = config["seed"]
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "resolved_config.json"), "w",
                  encoding="utf-8") as fh:
            fh.write(dump_config(config) + "\n")

        if args.command == "gen":
            cmd_gen(config, args.out, seed, force=args.force)
        elif args.command == "train":
            cmd_train(config, args.out, seed)
        elif args.command == "eval":
            cmd_eval(config, args.out, seed)
        elif args.command == "verify":
            ok = cmd_verify(args.out, seed=seed)
            return 0 if ok else 1
        elif args.command == "ablate":
            cmd_ablate(config, args.out, seed, args.axis)
        return 0
    except (ConfigError, CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
