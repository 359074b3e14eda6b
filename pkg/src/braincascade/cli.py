"""Command-line interface: extract, synth, eval, simulate, plan."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__, cascade, io_nifti, metrics, synth
from . import volume as vol_ops
from .cascade import STATUS_NO_BRAIN, single_pass_extract
from .predictor import NoiseSpec, NoisyOraclePredictor
from .synth import MODEL_PARAMS, MODEL_STEPS
from .volume import BoundingBox, Kind, Volume
from .windowing import coverage_counts, plan_windows

DEFAULT_CONFIG_ENV = "BRAINCASCADE_CONFIG"


@dataclass(frozen=True)
class RunManifest:
    """Reproducibility record written alongside command outputs."""

    command: str
    config: str | None
    seed: int | None
    inputs: list[str]
    outputs: list[str]
    version: str
    timestamp: str


def _manifest(command, config, seed, inputs, outputs) -> dict:
    return asdict(RunManifest(
        command=command, config=config, seed=seed,
        inputs=[str(p) for p in inputs], outputs=[str(p) for p in outputs],
        version=__version__,
        timestamp=time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    ))


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def _substream(master_seed: int, label: str, *extra) -> np.random.Generator:
    """Derive a labeled child generator from the master seed."""
    digest = int.from_bytes(label.encode(), "big") % (1 << 63)
    return np.random.default_rng(np.random.SeedSequence([master_seed, digest, *extra]))


# -- extract -----------------------------------------------------------------

def cmd_extract(args) -> int:
    if not os.path.exists(args.input):
        return _fail(f"input file not found: {args.input}")
    config_path = args.config or os.environ.get(DEFAULT_CONFIG_ENV)
    if config_path is None:
        return _fail("no config given (use --config or set $" + DEFAULT_CONFIG_ENV)
    if not os.path.exists(config_path):
        return _fail(f"config file not found: {config_path}")
    cfg_dict = _load_json(config_path)

    vol = io_nifti.read_nifti(args.input)
    native_dims, native_spacing = vol.dims, vol.spacing
    side, spacing = args.side, args.spacing

    gt = None
    gt_path = args.gt or cfg_dict.get("gt")
    if gt_path:
        if not os.path.exists(gt_path):
            return _fail(f"ground-truth file not found: {gt_path}")
        gt = cascade.conform_input(
            io_nifti.read_nifti(gt_path, kind=Kind.MASK), side, spacing
        )
    config = cascade.config_from_dict(cfg_dict, gt=gt, master_seed=args.seed,
                                      threads=args.threads)

    result = cascade.extract_brain(vol, config, conform_side=side,
                                   target_spacing=spacing)

    # map the mask back to the input's native grid
    resampled_dims = tuple(
        int(np.floor(d * s / spacing + 0.5))
        for d, s in zip(native_dims, native_spacing)
    )
    mask = vol_ops.unconform_cube(result.mask, resampled_dims)
    mask = vol_ops._resample_to(mask, native_dims, native_spacing, "nearest")
    io_nifti.write_nifti(mask, args.out, datatype="uint8")

    trace_path = args.trace or (os.path.splitext(args.out)[0] + "_trace.json")
    trace = {
        "status": result.status,
        "roi_trace": [
            {"stage": name, "min": list(box.mins), "max": list(box.maxs)}
            for name, box in result.roi_trace
        ],
        "manifest": _manifest("extract", config_path, args.seed,
                              [args.input], [args.out]),
    }
    with open(trace_path, "w") as f:
        json.dump(trace, f, indent=2)

    if result.status == STATUS_NO_BRAIN:
        print("no brain found", file=sys.stderr)
        return 2
    print(f"wrote {args.out}")
    return 0


# -- synth -------------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.model:
        if args.model not in MODEL_PARAMS:
            return _fail(f"unknown model {args.model!r}, expected one of A B C D")
        params = MODEL_PARAMS[args.model]
    elif args.params:
        params = synth.SynthesisParams(**_load_json(args.params))
    else:
        return _fail("one of --model or --params is required")

    if args.labelmap:
        if not os.path.exists(args.labelmap):
            return _fail(f"label map not found: {args.labelmap}")
        lm_vol = io_nifti.read_nifti(args.labelmap, kind=Kind.LABEL)
        lm_vol = Volume(lm_vol.data.astype(np.int32), lm_vol.spacing, Kind.LABEL)
        lm = lambda i: lm_vol
    else:
        lm = lambda i: synth.make_phantom_label_map(
            _substream(args.seed, "phantom", i), (max(64, params.window),) * 3
        )

    os.makedirs(args.outdir, exist_ok=True)
    for i in range(args.count):
        rng = _substream(args.seed, "pair", i)
        pair = synth.make_training_pair(lm(i), params, rng)
        img_path = os.path.join(args.outdir, f"image_{i:04d}.nii")
        mask_path = os.path.join(args.outdir, f"mask_{i:04d}.nii")
        side_path = os.path.join(args.outdir, f"pair_{i:04d}.json")
        io_nifti.write_nifti(pair.image, img_path, datatype="float32")
        io_nifti.write_nifti(pair.gt, mask_path, datatype="uint8")
        sidecar = dict(pair.metadata)
        sidecar["manifest"] = _manifest("synth", args.params, args.seed,
                                        [args.labelmap or "<phantom>"],
                                        [img_path, mask_path])
        with open(side_path, "w") as f:
            json.dump(sidecar, f, indent=2)
    print(f"wrote {args.count} pairs to {args.outdir}")
    return 0


# -- eval --------------------------------------------------------------------

def cmd_eval(args) -> int:
    for path in (args.pred, args.gt):
        if not os.path.exists(path):
            return _fail(f"file not found: {path}")
    pred = cascade.conform_input(io_nifti.read_nifti(args.pred, kind=Kind.MASK),
                                 args.side, args.spacing)
    gt = cascade.conform_input(io_nifti.read_nifti(args.gt, kind=Kind.MASK),
                               args.side, args.spacing)
    if pred.dims != gt.dims:
        return _fail(f"dims mismatch after conforming: {pred.dims} vs {gt.dims}")
    report = metrics.overlap_report(pred, gt)
    case_id = os.path.basename(args.pred)
    if args.csv:
        new = not os.path.exists(args.csv)
        with open(args.csv, "a") as f:
            if new:
                f.write(metrics.OverlapReport.CSV_HEADER + "\n")
            f.write(report.csv_row(case_id) + "\n")
    print(json.dumps(report.to_dict(), indent=2))
    return 0


# -- simulate ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.noise_spec and os.path.exists(args.noise_spec):
        spec_dict = _load_json(args.noise_spec)
    elif args.noise_spec:
        spec_dict = json.loads(args.noise_spec)
    else:
        spec_dict = {}
    if "fp_blob_radius" in spec_dict:
        spec_dict["fp_blob_radius"] = tuple(spec_dict["fp_blob_radius"])
    noise = NoiseSpec(**spec_dict)

    rows = []
    for k in range(args.seeds):
        lm = synth.make_phantom_label_map(_substream(args.seed, "sim", k), (192,) * 3)
        gt = synth.brain_mask(lm)
        intensity = vol_ops.minmax_normalize(
            Volume(lm.data.astype(np.float32), lm.spacing, Kind.INTENSITY)
        )
        master = args.seed * 10_000 + k
        config = cascade.default_noisy_config(gt, noise, master_seed=master,
                                              threads=args.threads)
        box, status = cascade.bfs_localize(intensity, config)
        if status != cascade.STATUS_OK:
            rows.append((k, 0.0, 0.0, float("nan")))
            continue
        result = cascade.dfs_refine(intensity, box, config)
        cascade_dice = metrics.dice(result.mask, gt)

        single_stage = next(s for s in config.bfs_stages if s.name == "A")
        single = single_pass_extract(intensity, single_stage, alpha=config.alpha,
                                     threads=args.threads)
        single_dice = metrics.dice(single, gt)

        final_roi = result.roi_trace[-1][1] if result.roi_trace else box
        roi_pred = result.mask.data[final_roi.slices()]
        roi_gt = gt.data[final_roi.slices()]
        neg = roi_gt == 0
        fp_rate = float(roi_pred[neg].mean()) if neg.any() else float("nan")
        rows.append((k, cascade_dice, single_dice, fp_rate))

    header = "seed,cascade_dice,single_dice,cascade_fp_rate"
    lines = [header] + [
        f"{k},{cd:.6f},{sd:.6f},{fr:.6f}" for k, cd, sd, fr in rows
    ]
    mean_c = float(np.mean([r[1] for r in rows]))
    mean_s = float(np.mean([r[2] for r in rows]))
    mean_fp = float(np.nanmean([r[3] for r in rows]))
    wins = sum(1 for r in rows if r[1] > r[2])
    summary = (
        f"seeds={len(rows)} cascade_mean_dice={mean_c:.4f} "
        f"single_mean_dice={mean_s:.4f} cascade_wins={wins}/{len(rows)} "
        f"cascade_mean_fp_rate={mean_fp:.4f}"
    )
    if args.report:
        with open(args.report + ".csv", "w") as f:
            f.write("\n".join(lines) + "\n")
        with open(args.report + ".txt", "w") as f:
            f.write(summary + "\n")
    print("\n".join(lines))
    print(summary)
    return 0


# -- plan --------------------------------------------------------------------

def cmd_plan(args) -> int:
    dims = tuple(int(v) for v in args.dims.split(","))
    if len(dims) != 3 or any(d <= 0 for d in dims):
        return _fail(f"--dims must be three positive integers, got {args.dims}")
    if args.window < 1 or args.step < 1:
        return _fail("--window and --step must be >= 1")
    plan = plan_windows(BoundingBox.full(dims), args.window, args.step)
    counts = coverage_counts(plan).data
    print(f"windows: {len(plan.origins)}")
    for o in plan.origins:
        print(f"  {o[0]:5d} {o[1]:5d} {o[2]:5d}")
    print(f"coverage: min={counts.min()} max={counts.max()} "
          f"mean={counts.mean():.3f}")
    return 0


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="braincascade",
        description="Multi-scale sliding-window fetal brain extraction",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("extract", help="extract a brain mask from a NIfTI volume")
    p.add_argument("input", help="input .nii/.nii.gz")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", required=True, help="output mask .nii")
    p.add_argument("--trace", help="ROI trace JSON path")
    p.add_argument("--gt", help="ground-truth mask for oracle backends")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--side", type=int, default=192)
    p.add_argument("--spacing", type=float, default=1.0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", help="generate synthetic training pairs")
    p.add_argument("--labelmap", help="input label-map NIfTI (default: phantom)")
    p.add_argument("--phantom", action="store_true",
                   help="use the built-in phantom label map")
    p.add_argument("--model", choices=list(MODEL_PARAMS),
                   help="use a predefined model row")
    p.add_argument("--params", help="synthesis params JSON")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="score a predicted mask against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--csv", help="append one CSV row to this file")
    p.add_argument("--side", type=int, default=192)
    p.add_argument("--spacing", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate",
                       help="paired single-pass vs cascade noisy-oracle runs")
    p.add_argument("--noise-spec", help="NoiseSpec JSON (inline or path)")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--report", help="output file prefix (.csv/.txt)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("plan", help="show sliding-window origins and coverage")
    p.add_argument("--dims", required=True, help="e.g. 192,192,192")
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--step", type=int, required=True)
    p.set_defaults(func=cmd_plan)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, io_nifti.NiftiError) as e:
        return _fail(str(e))


if __name__ == "__main__":
    sys.exit(main())
