"""Operator-facing command line: preprocess, the four training stages,
single-shot reenactment, evaluation and the HTTP service.

Machine-readable progress is emitted as JSON lines on stdout. Exit codes:
0 success, 1 runtime failure (checkpoint-safe), 2 bad configuration.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml

from . import checkpoint as ckpt
from .data import build_corpus, load_corpus, load_image, save_image
from .geometry import LandmarkSet, normalize_motion
from .pipeline import PipelineBundle
from .synthetic import HeuristicEstimators, landmark_pair_dataset, synthetic_video
from .transformer import TrainingDiverged


def emit(event: str, **fields) -> None:
    print(json.dumps({"event": event, **fields}, sort_keys=True), flush=True)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        cfg = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(cfg, dict):
            raise ValueError("config root must be a mapping")
        return cfg
    except Exception as e:
        emit("error", reason="bad config", message=str(e))
        sys.exit(2)


def write_history(bundle_dir: Path, stage: str, history: list[dict]) -> None:
    """Persist per-step losses next to the checkpoints, with a loss-curve figure."""
    bundle_dir.mkdir(parents=True, exist_ok=True)
    (bundle_dir / f"history_{stage}.json").write_text(json.dumps(history))
    from .plots import plot_training_history
    plot_training_history(history, bundle_dir / f"history_{stage}.png")


def update_manifest(bundle_dir: Path, resolution: int, **checkpoints: str) -> None:
    bundle_dir.mkdir(parents=True, exist_ok=True)
    path = bundle_dir / "bundle.json"
    manifest = json.loads(path.read_text()) if path.exists() else {
        "resolution": resolution, "estimators": "heuristic", "checkpoints": {}}
    manifest["resolution"] = resolution
    manifest["checkpoints"].update(checkpoints)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


@click.group()
def main():
    """FACEGAN-style face reenactment toolkit."""


@main.command()
@click.option("--corpus", required=True, type=click.Path(), help="output corpus root")
@click.option("--video", "videos", multiple=True, type=click.Path(exists=True),
              help="directory of PNG frames, one per video")
@click.option("--synthetic", "n_synthetic", default=0, help="generate N synthetic videos")
@click.option("--frames", default=40, help="frames per synthetic video")
@click.option("--resolution", default=256, type=click.Choice(["64", "128", "256"]))
@click.option("--min-extent", default=80.0, help="reject faces smaller than this many pixels")
@click.option("--seed", default=0)
def preprocess(corpus, videos, n_synthetic, frames, resolution, min_extent, seed):
    """Build a training corpus from videos (tracking, cropping, annotation)."""
    resolution = int(resolution)
    estimators = HeuristicEstimators()
    total = {"detected": 0, "rejected": 0, "failed": 0, "kept": 0}
    sources = []
    for i in range(n_synthetic):
        sources.append((f"synthetic_{i:03d}",
                        synthetic_video(identity_seed=seed + i, n_frames=frames,
                                        seed=seed + 1000 + i)))
    for vdir in videos:
        vdir = Path(vdir)
        imgs = [load_image(p) for p in sorted(vdir.glob("*.png"))]
        sources.append((vdir.name, imgs))
    if not sources:
        emit("error", reason="bad config", message="no input videos (use --video or --synthetic)")
        sys.exit(2)
    for video_id, frames_list in sources:
        _, stats = build_corpus(corpus, video_id, frames_list, estimators,
                                out_size=resolution, min_extent=min_extent)
        for key in ("detected", "rejected", "failed"):
            total[key] += getattr(stats, key)
        total["kept"] += stats.kept
        emit("video_done", video=video_id, detected=stats.detected,
             rejected=stats.rejected, failed=stats.failed, kept=stats.kept)
    emit("preprocess_done", **total)


def _train_guard(fn):
    try:
        return fn()
    except TrainingDiverged as e:
        emit("error", reason="training diverged", message=str(e),
             last_checkpoint=str(e.last_checkpoint))
        sys.exit(1)


@main.command("train-lt")
@click.option("--corpus", type=click.Path(exists=True))
@click.option("--synthetic-pairs", default=0, help="use N synthetic landmark pairs instead of a corpus")
@click.option("--steps", default=5000)
@click.option("--seed", default=0)
@click.option("--bundle", required=True, type=click.Path(), help="output bundle directory")
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_lt(corpus, synthetic_pairs, steps, seed, bundle, config_path):
    """Train the landmark transformer and AU regressor."""
    from .e2e import landmark_triples
    from .geometry import default_connectivity
    from .transformer import LandmarkTrainConfig, train_landmark_transformer

    cfg = load_config(config_path).get("landmark_transformer", {})
    bundle_dir = Path(bundle)
    tc = LandmarkTrainConfig(steps=steps, seed=seed,
                             checkpoint_dir=str(bundle_dir), **cfg)
    if synthetic_pairs:
        triples = landmark_pair_dataset(synthetic_pairs, seed=seed)
        resolution = 256
    elif corpus:
        index = load_corpus(corpus)
        rng = np.random.default_rng(seed)
        triples = landmark_triples(index, max(200, steps // 10), rng)
        resolution = load_image(index.records()[0].crop_path).shape[0]
    else:
        emit("error", reason="bad config", message="need --corpus or --synthetic-pairs")
        sys.exit(2)

    def run():
        return train_landmark_transformer(triples, tc, default_connectivity())

    _, _, history = _train_guard(run)
    write_history(bundle_dir, "lt", history)
    name = f"landmark_transformer_{tc.steps:07d}.pt"
    update_manifest(bundle_dir, resolution, transformer=name)
    emit("train_lt_done", steps=tc.steps, final=history[-1] if history else None,
         checkpoint=name, hash=ckpt.checkpoint_hash(bundle_dir / name))


@main.command("train-reenactor")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--steps", default=500, help="steps per progressive stage")
@click.option("--resolution", default=256, type=click.Choice(["64", "128", "256"]))
@click.option("--seed", default=0)
@click.option("--bundle", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_reenactor_cmd(corpus, steps, resolution, seed, bundle, config_path):
    """Train the heatmap-conditioned face generator."""
    from .e2e import reenactor_samples
    from .reenactor import ReenactorTrainConfig, train_reenactor

    resolution = int(resolution)
    cfg = load_config(config_path).get("reenactor", {})
    cfg.setdefault("schedule", ((resolution, steps),))
    cfg["schedule"] = tuple(tuple(s) for s in cfg["schedule"])
    bundle_dir = Path(bundle)
    tc = ReenactorTrainConfig(seed=seed, checkpoint_dir=str(bundle_dir), **cfg)
    index = load_corpus(corpus)
    rng = np.random.default_rng(seed)
    samples = reenactor_samples(index, min(len(index.records()), 200), rng, resolution)

    _, _, history = _train_guard(lambda: train_reenactor(samples, tc))
    write_history(bundle_dir, "reenactor", history)
    total_steps = sum(s for _, s in tc.schedule)
    name = f"reenactor_{total_steps:07d}.pt"
    update_manifest(bundle_dir, resolution, reenactor=name)
    emit("train_reenactor_done", steps=total_steps, checkpoint=name,
         hash=ckpt.checkpoint_hash(bundle_dir / name))


@main.command("train-mixer")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--steps", default=500)
@click.option("--resolution", default=256, type=click.Choice(["64", "128", "256"]))
@click.option("--seed", default=0)
@click.option("--bundle", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_mixer_cmd(corpus, steps, resolution, seed, bundle, config_path):
    """Train the background mixer (teacher-forced on ground-truth faces)."""
    from .e2e import mixer_samples
    from .mixer import MixerTrainConfig, train_mixer

    resolution = int(resolution)
    cfg = load_config(config_path).get("mixer", {})
    bundle_dir = Path(bundle)
    tc = MixerTrainConfig(steps=steps, resolution=resolution, seed=seed,
                          checkpoint_dir=str(bundle_dir), **cfg)
    index = load_corpus(corpus)
    rng = np.random.default_rng(seed)
    samples = mixer_samples(index, min(len(index.records()), 200), rng, resolution)

    _, _, history = _train_guard(lambda: train_mixer(samples, tc))
    write_history(bundle_dir, "mixer", history)
    name = f"mixer_{tc.steps:07d}.pt"
    update_manifest(bundle_dir, resolution, mixer=name)
    emit("train_mixer_done", steps=tc.steps, checkpoint=name,
         hash=ckpt.checkpoint_hash(bundle_dir / name))


@main.command("train-e2e")
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--bundle", required=True, type=click.Path(exists=True),
              help="bundle with separately trained checkpoints; updated in place")
@click.option("--steps", default=500)
@click.option("--seed", default=0)
@click.option("--config", "config_path", type=click.Path(exists=True))
def train_e2e(corpus, bundle, steps, seed, config_path):
    """Fine-tune all three blocks jointly."""
    from .e2e import E2EConfig, train_end_to_end
    from .mixer import MixerTrainConfig, MixerGenerator
    from .reenactor import MultiScaleDiscriminator, ReenactorTrainConfig
    from .transformer import LandmarkTrainConfig

    bundle_dir = Path(bundle)
    pb = PipelineBundle.load(bundle_dir)
    manifest = pb.manifest
    gr_payload = ckpt.load_checkpoint(bundle_dir / manifest["checkpoints"]["reenactor"])
    gb_payload = ckpt.load_checkpoint(bundle_dir / manifest["checkpoints"]["mixer"])
    gr_cfg = ReenactorTrainConfig(
        schedule=tuple(tuple(s) for s in gr_payload["config"]["schedule"]),
        base_width=gr_payload["config"]["base_width"], depth=gr_payload["config"]["depth"],
        disc_base=gr_payload["config"]["disc_base"],
        n_disc_scales=gr_payload["config"]["n_disc_scales"])
    gb_cfg = MixerTrainConfig(
        resolution=gb_payload["config"]["resolution"],
        base_width=gb_payload["config"]["base_width"], depth=gb_payload["config"]["depth"],
        disc_base=gb_payload["config"]["disc_base"],
        n_disc_scales=gb_payload["config"]["n_disc_scales"])
    reen_discs = MultiScaleDiscriminator(gr_cfg.n_disc_scales, 3, gr_cfg.disc_base)
    ckpt.restore_module(gr_payload, "discriminators", reen_discs)
    mixer_disc = MultiScaleDiscriminator(gb_cfg.n_disc_scales, 3, gb_cfg.disc_base)
    ckpt.restore_module(gb_payload, "discriminator", mixer_disc)

    cfg = load_config(config_path).get("e2e", {})
    ec = E2EConfig(steps=steps, resolution=pb.resolution, seed=seed,
                   checkpoint_dir=str(bundle_dir), **cfg)
    index = load_corpus(corpus)
    for m in (pb.transformer, pb.au_regressor, pb.reenactor, pb.mixer):
        m.train()

    def run():
        return train_end_to_end(
            index, transformer=pb.transformer, au_regressor=pb.au_regressor,
            reenactor=pb.reenactor, reenactor_discs=reen_discs,
            mixer=pb.mixer, mixer_disc=mixer_disc, config=ec,
            gr_config=gr_cfg, gb_config=gb_cfg,
            lt_config=LandmarkTrainConfig(hidden=tuple(
                ckpt.load_checkpoint(bundle_dir / manifest["checkpoints"]["transformer"])
                ["config"]["hidden"])))

    history, paths = _train_guard(run)
    write_history(bundle_dir, "e2e", history)
    update_manifest(bundle_dir, pb.resolution,
                    transformer=Path(paths["transformer"]).name,
                    reenactor=Path(paths["reenactor"]).name,
                    mixer=Path(paths["mixer"]).name)
    emit("train_e2e_done", steps=steps,
         final=history[-1] if history else None, checkpoints=paths)


@main.command()
@click.option("--source", required=True, type=click.Path(exists=True))
@click.option("--driving", required=True, type=click.Path(exists=True))
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--out", default="reenacted.png", type=click.Path())
def reenact(source, driving, bundle, out):
    """Reenact a source image with the motion of a driving image."""
    pb = PipelineBundle.load(bundle)
    res = pb.resolution

    def load_at(path):
        from PIL import Image
        img = Image.open(path).convert("RGB").resize((res, res), Image.BILINEAR)
        return np.asarray(img).astype(np.float64) / 255.0

    src = load_at(source)
    drv = load_at(driving)
    try:
        src_lm = LandmarkSet(points=pb.estimators.landmarks(src))
        motion = normalize_motion(*pb.estimators.motion(drv))
    except Exception as e:  # noqa: BLE001
        emit("error", reason="annotation failed", message=str(e))
        sys.exit(1)
    result = pb.reenact(src, src_lm, motion)
    out = Path(out)
    save_image(out, result["output"])
    out.with_suffix(".json").write_text(json.dumps({
        "source": str(source), "driving": str(driving),
        "motion": {"au": motion.au.tolist(), "pose": motion.pose.tolist()},
    }, indent=2, sort_keys=True))
    emit("reenact_done", output=str(out), motion_json=str(out.with_suffix(".json")))


@main.command()
@click.option("--mode", required=True, type=click.Choice(["self", "cross"]))
@click.option("--pairs", default=100)
@click.option("--seed", default=0)
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--corpus", required=True, type=click.Path(exists=True))
@click.option("--out", default="eval_report", type=click.Path())
def evaluate(mode, pairs, seed, bundle, corpus, out):
    """Run the self- or cross-reenactment protocol and write the report."""
    from .evaluation import run_cross_reenactment, run_self_reenactment

    pb = PipelineBundle.load(bundle)
    index = load_corpus(corpus)
    meta = {"corpus": str(corpus), "bundle": str(bundle),
            "checkpoint_hash": ckpt.checkpoint_hash(
                Path(bundle) / pb.manifest["checkpoints"]["reenactor"])}
    if mode == "self":
        report = run_self_reenactment(pb.reenact_records, index, pairs, seed, meta)
    else:
        report = run_cross_reenactment(pb.reenact_records, index, pairs, seed,
                                       pb.estimators, meta)
    paths = report.write(out)
    emit("evaluate_done", mode=mode, aggregates=report.aggregates(),
         **{k: str(v) for k, v in paths.items()})


@main.command()
@click.option("--bundle", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000)
@click.option("--store", default="sessions", type=click.Path())
def serve(bundle, host, port, store):
    """Start the /v1 HTTP inference service."""
    import uvicorn

    from .service import create_app
    pb = PipelineBundle.load(bundle)
    emit("serving", host=host, port=port, resolution=pb.resolution)
    uvicorn.run(create_app(pb, store), host=host, port=port)


if __name__ == "__main__":
    main()
