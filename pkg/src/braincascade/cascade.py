"""Two-stage search pipeline: full-volume localization, then progressive
region refinement with majority-vote fusion.

Localization scans the whole conformed volume with a coarse and a fine
model, unions their supra-threshold probabilities, and fits a bounding box
to the largest connected component. Refinement then runs progressively
smaller-window sliding passes inside the shrinking region; each pass is
thresholded, re-boxed, reconstructed to full size, and the final mask is
the voxel-wise majority vote of the reconstructed stage masks.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import morphology, windowing
from . import volume as vol_ops
from .morphology import (
    bounding_box, connected_components, largest_component, majority_vote, threshold,
)
from .predictor import (
    ConstantPredictor, ExternalPredictor, NoiseSpec, NoisyOraclePredictor,
    OraclePredictor, Predictor,
)
from .synth import MODEL_PARAMS, MODEL_STEPS
from .volume import BoundingBox, Kind, Volume
from .windowing import plan_windows, run_windows, snap_plan_into

STATUS_OK = "ok"
STATUS_NO_BRAIN = "no_brain_found"


@dataclass(frozen=True)
class StageSpec:
    """One sliding-window pass: a predictor plus its window and step."""

    name: str
    predictor: Predictor
    window: int
    step: int

    def __post_init__(self):
        if not 1 <= self.step <= self.window:
            raise ValueError(f"stage {self.name}: need 1 <= step <= window")
        if self.predictor.window != self.window:
            raise ValueError(
                f"stage {self.name}: predictor window {self.predictor.window} "
                f"!= stage window {self.window}"
            )


@dataclass(frozen=True)
class CascadeConfig:
    bfs_stages: list[StageSpec]
    dfs_stages: list[StageSpec]
    alpha: float = 0.2
    bfs_threshold: float = 0.0  # strict > comparison
    accumulate_mode: str = "sum"
    bfs_combine: str = "union"  # or "intersection"
    connectivity: int = 26
    threads: int = 1

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValueError("alpha must be in [0, 1]")
        if not self.dfs_stages:
            raise ValueError("at least one refinement stage is required")
        windows = [s.window for s in self.dfs_stages]
        if windows != sorted(windows, reverse=True) or len(set(windows)) != len(windows):
            raise ValueError("refinement stages must have strictly decreasing windows")
        if self.bfs_combine not in ("union", "intersection"):
            raise ValueError("bfs_combine must be 'union' or 'intersection'")
        if self.accumulate_mode not in ("sum", "mean"):
            raise ValueError("accumulate_mode must be 'sum' or 'mean'")


@dataclass(frozen=True)
class ExtractionResult:
    mask: Volume
    roi_trace: list[tuple[str, BoundingBox]] = field(default_factory=list)
    status: str = STATUS_OK
    stage_masks: dict = field(default_factory=dict)  # stage name -> full-size mask


def reconstruct_full(s: Volume, r: BoundingBox, dims) -> Volume:
    """Zero-pad a region mask into a full-size volume at the region offset."""
    dims = tuple(int(d) for d in dims)
    if s.dims != r.shape:
        raise ValueError(f"mask dims {s.dims} != region shape {r.shape}")
    if any(a < 0 for a in r.mins) or any(b > d for b, d in zip(r.maxs, dims)):
        raise ValueError(f"region {r.mins}-{r.maxs} outside dims {dims}")
    out = np.zeros(dims, dtype=s.data.dtype)
    out[r.slices()] = s.data
    return Volume(out, s.spacing, s.kind)


def bfs_localize(vol: Volume, config: CascadeConfig):
    """Scan the full volume with every localization stage and box the result.

    Returns (box, status); the box is None when no voxel survives the
    threshold in the combined probability map.
    """
    full = BoundingBox.full(vol.dims)
    combined = None
    for stage in config.bfs_stages:
        plan = plan_windows(full, stage.window, stage.step)
        plan = snap_plan_into(plan, vol.dims)
        p = run_windows(vol, plan, stage.predictor,
                        mode=config.accumulate_mode, threads=config.threads)
        above = p.data > config.bfs_threshold
        if combined is None:
            combined = above
        elif config.bfs_combine == "union":
            combined |= above
        else:
            combined &= above
    mask = Volume(combined.astype(np.uint8), vol.spacing, Kind.MASK)
    comps = connected_components(mask, config.connectivity)
    if not comps.sizes:
        return None, STATUS_NO_BRAIN
    return bounding_box(largest_component(comps)), STATUS_OK


def dfs_refine(vol: Volume, region: BoundingBox, config: CascadeConfig) -> ExtractionResult:
    """Refine a region through the staged sliding-window passes and vote.

    Each stage thresholds its accumulated probability map and shrinks the
    region to the largest component's bounding box. A stage producing an
    empty mask stops the cascade; the vote runs over the stages completed
    so far.
    """
    roi_trace: list[tuple[str, BoundingBox]] = []
    stage_masks: dict[str, Volume] = {}
    full_masks: list[Volume] = []
    r = region
    for stage in config.dfs_stages:
        plan = plan_windows(r, stage.window, stage.step)
        plan = snap_plan_into(plan, vol.dims)
        p = run_windows(vol, plan, stage.predictor,
                        mode=config.accumulate_mode, threads=config.threads)
        s = threshold(p, config.alpha)
        comps = connected_components(s, config.connectivity)
        if not comps.sizes:
            break
        local_box = bounding_box(largest_component(comps))
        s_full = reconstruct_full(s, r, vol.dims)
        stage_masks[stage.name] = s_full
        full_masks.append(s_full)
        r = BoundingBox(
            tuple(a + b for a, b in zip(r.mins, local_box.mins)),
            tuple(a + b for a, b in zip(r.mins, local_box.maxs)),
        )
        roi_trace.append((stage.name, r))
    if not full_masks:
        empty = Volume(np.zeros(vol.dims, dtype=np.uint8), vol.spacing, Kind.MASK)
        return ExtractionResult(empty, roi_trace, STATUS_NO_BRAIN, stage_masks)
    final = majority_vote(full_masks)
    return ExtractionResult(final, roi_trace, STATUS_OK, stage_masks)


def extract_brain(vol: Volume, config: CascadeConfig,
                  conform_side: int = 192, target_spacing: float = 1.0) -> ExtractionResult:
    """Full pipeline on an intensity volume: conform, localize, refine.

    The result lives on the conformed grid; callers needing the native grid
    undo the conforming themselves (the CLI does).
    """
    if vol.kind is not Kind.INTENSITY:
        raise ValueError("extract_brain expects an intensity volume")
    conformed = conform_input(vol, conform_side, target_spacing)
    box, status = bfs_localize(conformed, config)
    if status != STATUS_OK:
        empty = Volume(np.zeros(conformed.dims, dtype=np.uint8),
                       conformed.spacing, Kind.MASK)
        return ExtractionResult(empty, [], STATUS_NO_BRAIN, {})
    result = dfs_refine(conformed, box, config)
    return ExtractionResult(result.mask, [("bfs", box)] + result.roi_trace,
                            result.status, result.stage_masks)


def conform_input(vol: Volume, side: int = 192, spacing: float = 1.0) -> Volume:
    """Preprocess to the pipeline grid: isotropic resample, cube, normalize."""
    interp = "nearest" if vol.kind in (Kind.LABEL, Kind.MASK) else "linear"
    out = vol_ops.resample(vol, (spacing,) * 3, interp)
    out = vol_ops.conform_cube(out, side)
    if out.kind is Kind.INTENSITY:
        out = vol_ops.minmax_normalize(out)
    return out


def single_pass_extract(vol: Volume, stage: StageSpec, alpha: float = 0.2,
                        mode: str = "sum", threads: int = 1) -> Volume:
    """One sliding pass over the full volume, thresholded; the non-cascaded
    comparison arm."""
    plan = plan_windows(BoundingBox.full(vol.dims), stage.window, stage.step)
    plan = snap_plan_into(plan, vol.dims)
    p = run_windows(vol, plan, stage.predictor, mode=mode, threads=threads)
    return threshold(p, alpha)


# -- configuration -----------------------------------------------------------

CONFIG_SCHEMA_VERSION = 1


def _build_predictor(spec: dict, window: int, name: str, gt: Volume | None,
                     master_seed: int) -> Predictor:
    backend = spec.get("backend", "constant")
    if backend == "oracle":
        if gt is None:
            raise ValueError(f"stage {name}: oracle backend needs ground truth")
        return OraclePredictor(gt, window, id=name)
    if backend == "noisy_oracle":
        if gt is None:
            raise ValueError(f"stage {name}: noisy_oracle backend needs ground truth")
        noise = NoiseSpec(
            fp_blob_rate=spec.get("fp_blob_rate", 0.0),
            fp_blob_radius=tuple(spec.get("fp_blob_radius", (3.0, 3.0))),
            fn_hole_rate=spec.get("fn_hole_rate", 0.0),
            per_voxel_fp=spec.get("per_voxel_fp", 0.0),
            seed_offset=spec.get("seed_offset", 0),
        )
        return NoisyOraclePredictor(gt, window, noise,
                                    model_seed=spec.get("model_seed", 0),
                                    master_seed=master_seed, id=name)
    if backend == "constant":
        return ConstantPredictor(spec.get("value", 0.0), window, id=name)
    if backend == "external":
        return ExternalPredictor(list(spec["command"]), window,
                                 timeout=spec.get("timeout", 30.0), id=name)
    raise ValueError(f"stage {name}: unknown backend {backend!r}")


def config_from_dict(d: dict, gt: Volume | None = None,
                     master_seed: int = 0, threads: int = 1) -> CascadeConfig:
    """Build a runnable configuration from the JSON config schema."""
    version = d.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        raise ValueError(f"unsupported config schema version {version}")

    def stages(key, default_models):
        specs = d.get(key)
        if specs is None:
            specs = [{"model": m} for m in default_models]
        out = []
        for s in specs:
            model = s.get("model")
            window = s.get("window", MODEL_PARAMS[model].window if model else None)
            step = s.get("step", MODEL_STEPS[model] if model else None)
            if window is None or step is None:
                raise ValueError(f"stage in {key} needs a model letter or window+step")
            name = s.get("name", model or f"w{window}")
            backend = s.get("predictor", d.get("predictor", {"backend": "constant"}))
            pred = _build_predictor(backend, window, name, gt, master_seed)
            out.append(StageSpec(name, pred, window, step))
        return out

    return CascadeConfig(
        bfs_stages=stages("bfs_stages", ["A", "D"]),
        dfs_stages=stages("dfs_stages", ["B", "C", "D"]),
        alpha=d.get("alpha", 0.2),
        bfs_threshold=d.get("bfs_threshold", 0.0),
        accumulate_mode=d.get("accumulate_mode", "sum"),
        bfs_combine=d.get("bfs_combine", "union"),
        connectivity=d.get("connectivity", 26),
        threads=threads,
    )


def default_oracle_config(gt: Volume, threads: int = 1, **overrides) -> CascadeConfig:
    """Default model roster (localization A+D, refinement B,C,D) with perfect
    oracles for the given ground truth."""
    def stage(model):
        w = MODEL_PARAMS[model].window
        return StageSpec(model, OraclePredictor(gt, w, id=model), w, MODEL_STEPS[model])

    kwargs = dict(
        bfs_stages=[stage("A"), stage("D")],
        dfs_stages=[stage("B"), stage("C"), stage("D")],
        threads=threads,
    )
    kwargs.update(overrides)
    return CascadeConfig(**kwargs)


def default_noisy_config(gt: Volume, noise: NoiseSpec, master_seed: int = 0,
                         threads: int = 1, **overrides) -> CascadeConfig:
    """Default roster with independently seeded noisy oracles per model."""
    model_seeds = {"A": 1, "B": 2, "C": 3, "D": 4}

    def stage(model):
        w = MODEL_PARAMS[model].window
        pred = NoisyOraclePredictor(gt, w, noise, model_seed=model_seeds[model],
                                    master_seed=master_seed, id=model)
        return StageSpec(model, pred, w, MODEL_STEPS[model])

    kwargs = dict(
        bfs_stages=[stage("A"), stage("D")],
        dfs_stages=[stage("B"), stage("C"), stage("D")],
        threads=threads,
    )
    kwargs.update(overrides)
    return CascadeConfig(**kwargs)
