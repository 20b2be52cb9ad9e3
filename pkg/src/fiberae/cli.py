"""Command-line entry point.

Subcommands: ``validate-rp``, ``train``, ``finetune``, ``evaluate``, ``sweep``.
Every run writes a resolved-config snapshot next to its outputs.  Exit codes:
0 ok, 1 configuration error, 2 numeric failure.
"""

from __future__ import annotations

import functools
import sys
from datetime import datetime, timezone
from pathlib import Path

import click
import numpy as np

from . import artifacts, config as config_mod, dsp, model, parallel, pipeline, ssfm
from .dsp import SymbolFrame
from .errors import ConfigurationError, NumericalDivergenceError
from .pipeline import ModelParams
from .rp import rp_propagate


def _load(ctx) -> config_mod.ExperimentConfig:
    opts = ctx.obj
    overrides: dict = {}
    if opts["seed"] is not None:
        overrides["seed"] = opts["seed"]
    if opts["threads"] is not None:
        overrides["threads"] = opts["threads"]
    if opts["out"] is not None:
        overrides["out_dir"] = opts["out"]
    if opts["power_dbm"] is not None:
        overrides.setdefault("train", {})["launch_power_dbm"] = opts["power_dbm"]
    if opts["no_preemph"]:
        overrides.setdefault("train", {})["train_preemph"] = False
        overrides.setdefault("train", {})["init_preemph"] = False
    cfg = config_mod.load_config(opts["config"], overrides)
    parallel.set_threads(cfg["threads"])
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    cfg.dump(out / "resolved-config.yaml")
    return cfg


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigurationError as exc:
            click.echo(f"configuration error: {exc}", err=True)
            sys.exit(1)
        except (NumericalDivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
            click.echo(f"numeric failure: {exc}", err=True)
            sys.exit(2)
    return wrapper


@click.group()
@click.option("--config", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Experiment config file (YAML).")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--threads", type=int, default=None, help="Pin the worker count.")
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory.")
@click.option("--power-dbm", type=float, default=None, help="Override launch power.")
@click.option("--channel", type=click.Choice(["ssfm", "rp"]), default=None,
              help="Evaluation channel.")
@click.option("--no-preemph", is_flag=True, help="Disable the pre-emphasis group.")
@click.pass_context
def main(ctx, **opts):
    ctx.obj = opts


@main.command("validate-rp")
@click.pass_context
@_handle_errors
def cmd_validate_rp(ctx):
    """Sweep launch powers; emit per-power SSFM SNR, RP SNR, and RP-vs-SSFM SDR."""
    cfg = _load(ctx)
    link = cfg.link()
    pulse = cfg.pulse()
    powers = cfg["validate"]["powers"]
    n_sym = cfg["validate"]["n_symbols"]
    rng = np.random.default_rng(cfg.seed)
    msgs = rng.integers(0, model.M_POINTS, size=(2, n_sym))
    tx = model.encode(msgs, model.Constellation.qam64())
    frame = SymbolFrame(tx, 64e9)
    base = dsp.modulate(frame, pulse)
    noisy = cfg.ssfm_options(include_ase=True)
    clean = cfg.ssfm_options(include_ase=False)
    rows = []
    for p in powers:
        w = dsp.set_launch_power(base, p)
        y_ssfm = ssfm.ssfm_propagate(w, link, noisy, np.random.default_rng(cfg.seed + 1))
        y_ssfm_clean = ssfm.ssfm_propagate(w, link, clean)
        y_rp = rp_propagate(w, cfg.rp_config(with_noise=True), link,
                            np.random.default_rng(cfg.seed + 2))
        y_rp_clean = rp_propagate(w, cfg.rp_config(with_noise=False), link)
        snr_ssfm = dsp.estimate_snr(frame, dsp.demodulate(dsp.cdc(y_ssfm, link), pulse, 64e9))
        snr_rp = dsp.estimate_snr(frame, dsp.demodulate(dsp.cdc(y_rp, link), pulse, 64e9))
        sdr_db = dsp.sdr(y_rp_clean, y_ssfm_clean)
        rows.append({"power_dbm": p, "snr_ssfm_db": f"{snr_ssfm:.4f}",
                     "snr_rp_db": f"{snr_rp:.4f}", "sdr_db": f"{sdr_db:.4f}"})
        click.echo(f"validate-rp: {p:+.2f} dBm  snr_ssfm={snr_ssfm:.2f} dB  "
                   f"snr_rp={snr_rp:.2f} dB  sdr={sdr_db:.2f} dB")
    path = cfg.out_dir / "validate_rp.csv"
    with open(path, "w") as f:
        f.write(f"# generated {datetime.now(timezone.utc).isoformat()}\n")
        f.write("power_dbm,snr_ssfm_db,snr_rp_db,sdr_db\n")
        for r in rows:
            f.write(f"{r['power_dbm']},{r['snr_ssfm_db']},{r['snr_rp_db']},{r['sdr_db']}\n")
    click.echo(f"validate-rp: wrote {path}")


def _init_params(cfg) -> ModelParams:
    t = cfg["train"]
    pe = None
    if t["init_preemph"] and t["train_preemph"]:
        pe = model.init_preemph(cfg.link(), cfg.pulse(), seed=cfg.seed + 31)
    return ModelParams.init(cfg.seed, preemph=pe)


def _export_params(cfg, params: ModelParams, rng=None):
    out = cfg.out_dir
    artifacts.save_checkpoint(out / "checkpoint.npz", params, rng)
    artifacts.export_constellation(out / "constellation.txt", params.constellation_obj())
    artifacts.export_preemph(out / "preemph.txt", params.preemph_obj())


@main.command("train")
@click.pass_context
@_handle_errors
def cmd_train(ctx):
    """End-to-end training over the RP model; writes a checkpoint and exports."""
    cfg = _load(ctx)
    params = _init_params(cfg)
    tc = cfg.train_config()
    if tc.iterations > 0:
        params, history = pipeline.train_e2e(tc, params)
        final = float(np.mean(history[-min(100, len(history)):]))
    else:
        history, final = [], float("nan")
    _export_params(cfg, params)
    click.echo(f"train: {len(history)} iterations, final loss {final:.4f} nats, "
               f"checkpoint {cfg.out_dir / 'checkpoint.npz'}")


@main.command("finetune")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=False)
@click.pass_context
@_handle_errors
def cmd_finetune(ctx, checkpoint):
    """Fine-tune the decoder on SSFM propagation data."""
    cfg = _load(ctx)
    params = _load_checkpoint_or_fail(cfg, checkpoint)
    ev = cfg["eval"]
    tc = cfg.train_config(iterations=max(ev["finetune_iters"], 1),
                          train_encoder=False, train_preemph=False)
    if ev["finetune_iters"] > 0:
        params, history = pipeline.finetune_decoder(
            params, tc, n_frames=ev["finetune_frames"],
            frame_symbols=ev["frame_symbols"], ssfm_opts=cfg.ssfm_options())
        click.echo(f"finetune: {len(history)} iterations, final loss {history[-1]:.4f} nats")
    else:
        click.echo("finetune: 0 iterations requested, checkpoint unchanged")
    _export_params(cfg, params)


def _load_checkpoint_or_fail(cfg, checkpoint) -> ModelParams:
    path = Path(checkpoint) if checkpoint else cfg.out_dir / "checkpoint.npz"
    if not path.exists():
        raise ConfigurationError(f"missing checkpoint: {path}")
    params, _ = artifacts.load_checkpoint(path)
    return params


@main.command("evaluate")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--estimator", type=click.Choice(["nn", "kde"]), default=None)
@click.pass_context
@_handle_errors
def cmd_evaluate(ctx, checkpoint, estimator):
    """Evaluate a checkpoint over the reference channel (decoder fine-tuned first)."""
    cfg = _load(ctx)
    params = _load_checkpoint_or_fail(cfg, checkpoint)
    ev = cfg["eval"]
    est = estimator or ev["estimator"]
    channel = ctx.obj["channel"] or "ssfm"
    power = cfg["train"]["launch_power_dbm"]
    if ev["finetune_iters"] > 0 and est == "nn":
        tc = cfg.train_config(iterations=ev["finetune_iters"],
                              train_encoder=False, train_preemph=False)
        params, _ = pipeline.finetune_decoder(
            params, tc, n_frames=ev["finetune_frames"],
            frame_symbols=ev["frame_symbols"], ssfm_opts=cfg.ssfm_options())
    report = pipeline.evaluate(
        params, cfg.train_config(), power, n_seq=ev["n_seq"], seq_len=ev["seq_len"],
        seed=cfg.seed, channel=channel, estimator=est, ssfm_opts=cfg.ssfm_options(),
        rp_cfg=cfg.rp_config())
    path = cfg.out_dir / "metrics.csv"
    artifacts.write_metrics_csv(path, artifacts.report_rows(report))
    click.echo(f"evaluate: {power:+.2f} dBm  MI {report.mi_mean:.4f} "
               f"+/- {report.mi_std:.4f} bits/sym/pol  SNR {report.snr_db:.2f} dB  ({path})")


@main.command("sweep")
@click.pass_context
@_handle_errors
def cmd_sweep(ctx):
    """Full recipe (train, finetune, evaluate) per launch power; emits one CSV."""
    cfg = _load(ctx)
    ev = cfg["eval"]
    rows = []

    def recipe(power):
        params = _init_params(cfg)
        tc = cfg.train_config(launch_power_dbm=power)
        if tc.iterations > 0:
            params, _ = pipeline.train_e2e(tc, params)
        if ev["finetune_iters"] > 0:
            ftc = cfg.train_config(launch_power_dbm=power, iterations=ev["finetune_iters"],
                                   train_encoder=False, train_preemph=False)
            params, _ = pipeline.finetune_decoder(
                params, ftc, n_frames=ev["finetune_frames"],
                frame_symbols=ev["frame_symbols"], ssfm_opts=cfg.ssfm_options())
        return pipeline.evaluate(
            params, tc, power, n_seq=ev["n_seq"], seq_len=ev["seq_len"], seed=cfg.seed,
            channel="ssfm", estimator=ev["estimator"], ssfm_opts=cfg.ssfm_options())

    results = pipeline.sweep_power(cfg["sweep"]["powers"], recipe)
    failures = 0
    for power, res in zip(cfg["sweep"]["powers"], results):
        if isinstance(res, Exception):
            failures += 1
            click.echo(f"sweep: {power:+.2f} dBm FAILED: {res}", err=True)
            continue
        rows.extend(artifacts.report_rows(res))
        click.echo(f"sweep: {power:+.2f} dBm  MI {res.mi_mean:.4f} +/- {res.mi_std:.4f}")
    path = cfg.out_dir / "sweep.csv"
    artifacts.write_metrics_csv(path, rows)
    click.echo(f"sweep: wrote {path} ({failures} failed points)")


if __name__ == "__main__":
    main()
