"""Stage implementations behind the CLI: simulate, preprocess, align, train,
generate, eval, fairness.

Each stage reads containers, writes containers/reports under its output
directory, echoes the effective config, and records a run manifest with input
hashes. Outputs are byte-identical across reruns for fixed seeds (wall time
is zeroed in deterministic mode so even the manifest reproduces).
"""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .align import AlignmentConfig, conjugate_representation, time_alignment_matrix, zscore_matrix
from .config import (
    alignment_config_from,
    emit_toml,
    sim_config_from,
    training_config_from,
)
from .container import dump_json, load_container, save_container
from .errors import InvalidArgumentError
from .fairness import ClassifierConfig, ImbalanceSpec, fairness_experiment
from .metrics import (
    MetricReport,
    absolute_lag_scan,
    activation_map,
    eeg_envelope_at_hemo,
    fc_similarity,
    functional_connectivity,
    noise_baseline,
    pearson,
    region_grid_shape,
    ssim_map,
)
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.generate import assets_from_parts, generate_targets
from .model.train import train
from .signal import (
    MultichannelTimeSeries,
    PairedDataset,
    PairedSample,
    RegionParcellation,
    SensorGeometry,
    bandpass_filter,
    hemodynamic_lag_align,
    segment_epochs,
)
from .simulate import make_paired_dataset, save_ground_truth


def _dir_digest(path) -> str:
    root = Path(path)
    h = hashlib.sha256()
    for f in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(f.relative_to(root)).encode())
        h.update(hashlib.sha256(f.read_bytes()).digest())
    return h.hexdigest()


def _write_stage_outputs(out_dir, command, config, inputs, deterministic, t0):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    toml_text = emit_toml(config)
    (out / "config.toml").write_text(toml_text, "utf-8")
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(toml_text.encode()).hexdigest(),
        "input_hashes": {name: _dir_digest(p) for name, p in inputs.items()},
        "version": __version__,
        "seed": config["seed"],
        "deterministic": bool(deterministic),
        "wall_time_s": 0.0 if deterministic else round(time.monotonic() - t0, 3),
    }
    (out / "run_manifest.json").write_bytes(dump_json(manifest))


def run_simulate(config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    sim_config = sim_config_from(config)
    dataset, truth = make_paired_dataset(sim_config)
    dataset_dir = Path(out_dir) / "dataset"
    save_container(dataset, dataset_dir)
    save_ground_truth(truth, dataset_dir / "groundtruth")
    if not quiet:
        print(f"simulate: wrote {dataset.n_samples} paired samples to {dataset_dir}")
    _write_stage_outputs(out_dir, "simulate", config, {}, deterministic, t0)
    return dataset_dir


def _preprocess_sample(sample, pp):
    src = bandpass_filter(
        sample.source_epoch, pp["eeg_low_hz"], pp["eeg_high_hz"],
        order=pp["eeg_order"], zero_phase=pp["zero_phase"],
    )
    tgt = bandpass_filter(
        sample.target_epoch, pp["hemo_low_hz"], pp["hemo_high_hz"],
        order=pp["hemo_order"], zero_phase=pp["zero_phase"],
    )
    if pp["extra_lag_s"] > 0.0:
        src, tgt = hemodynamic_lag_align(src, tgt, pp["extra_lag_s"])
    return src, tgt


def run_preprocess(in_dir, config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    dataset = load_container(in_dir)
    pp = config["preprocess"]
    out_samples = []
    for sample in dataset.samples:
        src, tgt = _preprocess_sample(sample, pp)
        if pp["window_s"] > 0.0:
            stride = pp["stride_s"] if pp["stride_s"] > 0.0 else pp["window_s"]
            src_epochs = segment_epochs(src, pp["window_s"], stride)
            tgt_epochs = segment_epochs(tgt, pp["window_s"], stride)
            for se, te in zip(src_epochs, tgt_epochs):
                out_samples.append(
                    PairedSample(
                        source_epoch=se, target_epoch=te,
                        condition_label=sample.condition_label,
                        subject_id=sample.subject_id,
                        group_id=sample.group_id,
                        synthetic=sample.synthetic,
                    )
                )
        else:
            out_samples.append(
                PairedSample(
                    source_epoch=src, target_epoch=tgt,
                    condition_label=sample.condition_label,
                    subject_id=sample.subject_id,
                    group_id=sample.group_id,
                    synthetic=sample.synthetic,
                )
            )
    metadata = dict(dataset.manifest)
    metadata["preprocess"] = dict(pp)
    out_dataset = PairedDataset(samples=tuple(out_samples), manifest=metadata)
    target_dir = Path(out_dir) / "dataset"
    save_container(out_dataset, target_dir)
    if not quiet:
        print(f"preprocess: wrote {out_dataset.n_samples} samples to {target_dir}")
    _write_stage_outputs(out_dir, "preprocess", config, {"input": in_dir}, deterministic, t0)
    return target_dir


def _geometry_from_metadata(metadata):
    try:
        geo = metadata["geometry"]
        parc = metadata["parcellation"]
    except KeyError as e:
        raise InvalidArgumentError(
            f"container metadata lacks {e} needed for alignment; run simulate first"
        ) from e
    geometry = SensorGeometry(
        positions=np.asarray(geo["positions"]), frame_label=geo.get("frame_label", "head")
    )
    parcellation = RegionParcellation(
        region_ids=tuple(parc["region_ids"]),
        centroids=np.asarray(parc["centroids"]),
        names=tuple(parc["names"]),
        frame_label=parc.get("frame_label", "head"),
    )
    return geometry, parcellation


def run_align(in_dir, config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    dataset = load_container(in_dir)
    if dataset.n_samples == 0:
        raise InvalidArgumentError("cannot align an empty dataset")
    geometry, parcellation = _geometry_from_metadata(dataset.manifest)
    align_config = alignment_config_from(config)
    smooth_hz = config["align"]["envelope_smooth_hz"]
    first = dataset.samples[0]
    signature = (
        first.source_epoch.n_samples,
        first.target_epoch.n_samples,
        first.source_epoch.sample_rate_hz,
        first.target_epoch.sample_rate_hz,
        first.target_epoch.start_time_s - first.source_epoch.start_time_s,
    )
    kernel = time_alignment_matrix(
        first.source_epoch.times(), first.target_epoch.times(), align_config
    ).row_normalized()
    out_samples = []
    for sample in dataset.samples:
        sig = (
            sample.source_epoch.n_samples,
            sample.target_epoch.n_samples,
            sample.source_epoch.sample_rate_hz,
            sample.target_epoch.sample_rate_hz,
            sample.target_epoch.start_time_s - sample.source_epoch.start_time_s,
        )
        shared = kernel if sig == signature else None
        out_samples.append(
            conjugate_representation(
                sample, geometry, parcellation, align_config,
                smooth_hz=smooth_hz, resample_kernel=shared,
            )
        )
    metadata = dict(dataset.manifest)
    metadata["assets"] = assets_from_parts(
        align_config, geometry, parcellation, smooth_hz,
        first.source_epoch.sample_rate_hz,
        first.source_epoch.n_samples,
        first.source_epoch.channel_ids,
    )
    out_dataset = PairedDataset(samples=tuple(out_samples), manifest=metadata)
    target_dir = Path(out_dir) / "dataset"
    save_container(out_dataset, target_dir)
    if not quiet:
        print(f"align: wrote {out_dataset.n_samples} conjugate pairs to {target_dir}")
    _write_stage_outputs(out_dir, "align", config, {"input": in_dir}, deterministic, t0)
    return target_dir


def run_train(in_dir, config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    dataset = load_container(in_dir)
    assets = dataset.manifest.get("assets")
    if assets is None:
        raise InvalidArgumentError(
            "container lacks alignment assets; train expects the aligned container"
        )
    training_config = training_config_from(config)
    params, schedule, curve = train(dataset, training_config, assets=assets)
    ckpt_dir = Path(out_dir) / "checkpoint"
    save_checkpoint(
        params, schedule, ckpt_dir,
        loss_curve=curve, training_config=training_config.to_jsonable(),
    )
    curve_path = Path(out_dir) / "loss_curve.csv"
    with open(curve_path, "w") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for row in curve:
            fh.write(f"{row['epoch']},{row['train_loss']:.8g},{row['val_loss']:.8g}\n")
    if not quiet:
        final = curve[-1] if curve else {}
        print(
            f"train: {params.parameter_count()} parameters, {len(curve)} epochs, "
            f"final val loss {final.get('val_loss', float('nan')):.4g}"
        )
    _write_stage_outputs(out_dir, "train", config, {"input": in_dir}, deterministic, t0)
    return ckpt_dir


def run_generate(checkpoint_dir, in_dir, config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    params, schedule, _ = load_checkpoint(checkpoint_dir)
    dataset = load_container(in_dir)
    gen = torch.Generator().manual_seed(int(config["seed"]))
    epochs = [s.source_epoch for s in dataset.samples]
    outputs = generate_targets(epochs, params, schedule, gen)
    out_samples = tuple(
        PairedSample(
            source_epoch=s.source_epoch,
            target_epoch=out,
            condition_label=s.condition_label,
            subject_id=s.subject_id,
            group_id=s.group_id,
            synthetic=True,
        )
        for s, out in zip(dataset.samples, outputs)
    )
    metadata = dict(dataset.manifest)
    metadata["generated"] = {"checkpoint": _dir_digest(checkpoint_dir)}
    out_dataset = PairedDataset(samples=out_samples, manifest=metadata)
    target_dir = Path(out_dir) / "dataset"
    save_container(out_dataset, target_dir)
    if not quiet:
        print(f"generate: wrote {out_dataset.n_samples} generated epochs to {target_dir}")
    _write_stage_outputs(
        out_dir, "generate", config,
        {"checkpoint": checkpoint_dir, "input": in_dir}, deterministic, t0,
    )
    return target_dir


def evaluate_containers(generated: PairedDataset, reference: PairedDataset, config) -> MetricReport:
    """Score a generated container against its reference."""
    if generated.n_samples != reference.n_samples:
        raise InvalidArgumentError(
            f"sample count mismatch: generated {generated.n_samples} vs "
            f"reference {reference.n_samples}"
        )
    if generated.n_samples == 0:
        raise InvalidArgumentError("nothing to evaluate")
    ev = config["eval"]
    seed = int(config["seed"])
    rng = np.random.default_rng(seed)
    pccs = []
    peak_lags = []
    expected_lags = []
    curves = []
    by_condition_gen = {}
    by_condition_ref = {}
    concat_gen = []
    concat_ref = []
    hemo_rate = reference.samples[0].target_epoch.sample_rate_hz
    for gen_s, ref_s in zip(generated.samples, reference.samples):
        g = zscore_matrix(gen_s.target_epoch.data)
        r = zscore_matrix(ref_s.target_epoch.data)
        if g.shape != r.shape:
            raise InvalidArgumentError("generated/reference target shapes differ")
        for ch in range(r.shape[0]):
            try:
                pccs.append(pearson(g[ch], r[ch]))
            except Exception:
                continue
        env = eeg_envelope_at_hemo(
            ref_s.source_epoch, hemo_rate, band=tuple(ev["envelope_band"])
        )
        offset = gen_s.target_epoch.start_time_s - ref_s.source_epoch.start_time_s
        gen_mean = gen_s.target_epoch
        result, peak_s = absolute_lag_scan(env, gen_mean, ev["max_lag_s"])
        peak_lags.append(peak_s)
        expected_lags.append(-offset)
        curves.append(result.normalized_curve)
        by_condition_gen.setdefault(gen_s.condition_label, []).append(
            activation_map(gen_s.target_epoch)
        )
        by_condition_ref.setdefault(ref_s.condition_label, []).append(
            activation_map(ref_s.target_epoch)
        )
        concat_gen.append(g)
        concat_ref.append(r)
    tol = 1.0 / hemo_rate + 1e-9
    hits = sum(
        1 for peak, exp in zip(peak_lags, expected_lags) if abs(peak - exp) <= tol
    )
    baseline = noise_baseline(
        [s.target_epoch for s in reference.samples], rng, n_draws=ev["n_noise_draws"]
    )
    ssim_by_condition = {}
    grid = region_grid_shape(reference.samples[0].target_epoch.n_channels)
    for cond in sorted(by_condition_ref):
        ref_map = np.mean(by_condition_ref[cond], axis=0).reshape(grid)
        gen_map = np.mean(by_condition_gen[cond], axis=0).reshape(grid)
        window = min(ev["ssim_window"], min(grid))
        if window % 2 == 0:
            window -= 1
        ssim_by_condition[cond] = ssim_map(gen_map, ref_map, window=max(1, window))
    fc_gen = functional_connectivity(np.concatenate(concat_gen, axis=1))
    fc_ref = functional_connectivity(np.concatenate(concat_ref, axis=1))
    fc_sim = fc_similarity(fc_gen, fc_ref)
    ref_concat = np.concatenate(concat_ref, axis=1)
    noise_series = rng.normal(0.0, 1.0, size=ref_concat.shape) * ref_concat.std(
        axis=1, keepdims=True
    )
    fc_noise_val = fc_similarity(functional_connectivity(noise_series), fc_ref)
    pcc_mean = float(np.mean(pccs))
    report = MetricReport(
        metrics={
            "pcc_mean": pcc_mean,
            "pcc_std": float(np.std(pccs)),
            "noise_pcc_mean": baseline.mean,
            "noise_pcc_std": baseline.std,
            "noise_pcc_abs_mean": baseline.abs_mean,
            "pcc_over_noise_abs": pcc_mean / max(baseline.abs_mean, 1e-12),
            "lag_fraction_at_expected": hits / len(peak_lags),
            "lag_expected_s": float(np.mean(expected_lags)),
            "lag_peak_mean_s": float(np.mean(peak_lags)),
            "ssim_mean": float(np.mean(list(ssim_by_condition.values()))),
            **{f"ssim_{c}": v for c, v in ssim_by_condition.items()},
            "fc_similarity_generated": fc_sim,
            "fc_similarity_noise": fc_noise_val,
            "fc_similarity_margin": fc_sim - fc_noise_val,
        },
        curves={
            "lag_scan_mean_normalized": np.mean(curves, axis=0),
            "lag_scan_lags_s": (
                np.arange(-int(round(ev["max_lag_s"] * hemo_rate)),
                          int(round(ev["max_lag_s"] * hemo_rate)) + 1)
                / hemo_rate
            ),
            "per_sample_peak_lag_s": np.asarray(peak_lags),
        },
        provenance={"dataset_id": "", "seed": seed},
        notes={
            "lag_sign_convention": "negative lag: first argument (EEG envelope) leads",
            "lag_curve_normalization": "max-normalized (reading of the undefined protocol)",
            "ssim_grid_rows_cols": list(grid),
        },
    )
    return report


def run_eval(gen_dir, ref_dir, config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    generated = load_container(gen_dir)
    reference = load_container(ref_dir)
    report = evaluate_containers(generated, reference, config)
    report.provenance.update(
        {"dataset_id": _dir_digest(ref_dir), "generated_id": _dir_digest(gen_dir)}
    )
    report.validate()
    report_dir = Path(out_dir) / "report"
    report.save(report_dir)
    if not quiet:
        m = report.metrics
        print(
            f"eval: pcc={m['pcc_mean']:.4f} (noise |pcc|={m['noise_pcc_abs_mean']:.4f}), "
            f"lag hit rate={m['lag_fraction_at_expected']:.2f}, "
            f"ssim={m['ssim_mean']:.4f}, fc margin={m['fc_similarity_margin']:.4f}"
        )
    _write_stage_outputs(
        out_dir, "eval", config,
        {"generated": gen_dir, "reference": ref_dir}, deterministic, t0,
    )
    return report_dir


def run_fairness(checkpoint_dir, in_dir, config, out_dir, deterministic=False, quiet=False):
    t0 = time.monotonic()
    params, schedule, _ = load_checkpoint(checkpoint_dir)
    dataset = load_container(in_dir)
    f = config["fairness"]
    spec = ImbalanceSpec(
        minority_class=f["minority_class"],
        n_minority=f["n_minority"],
        n_majority=f["n_majority"],
        n_generated=f["n_generated"],
        k_folds=f["k_folds"],
        seed=int(config["seed"]),
    )
    report = fairness_experiment(
        dataset, params, spec, schedule,
        classifier_config=ClassifierConfig(ridge_alpha=f["ridge_alpha"]),
    )
    report_dir = Path(out_dir) / "report"
    report.save(report_dir)
    if not quiet:
        before = report.f1_before[spec.minority_class]
        after = report.f1_after[spec.minority_class]
        print(
            f"fairness: minority F1 {before[0]:.3f}±{before[1]:.3f} -> "
            f"{after[0]:.3f}±{after[1]:.3f}; gap {report.gap_before:.3f} -> "
            f"{report.gap_after:.3f}"
        )
    _write_stage_outputs(
        out_dir, "fairness", config,
        {"checkpoint": checkpoint_dir, "input": in_dir}, deterministic, t0,
    )
    return report_dir


def run_demo(config, out_dir, deterministic=False, quiet=False):
    """Chain every stage on one config; the whole-pipeline reproduction path."""
    out = Path(out_dir)
    ds = run_simulate(config, out / "sim", deterministic, quiet)
    pre = run_preprocess(ds, config, out / "preprocessed", deterministic, quiet)
    aligned = run_align(pre, config, out / "aligned", deterministic, quiet)
    ckpt = run_train(aligned, config, out / "model", deterministic, quiet)
    gen = run_generate(ckpt, pre, config, out / "generated", deterministic, quiet)
    run_eval(gen, pre, config, out / "eval", deterministic, quiet)
    run_fairness(ckpt, pre, config, out / "fairness", deterministic, quiet)
    if not quiet:
        print(f"demo: all stages complete under {out}")
    return out
