"""Command-line surface: bank synthesis, dataset generation/validation,
audio rendering, navigation training, evaluation, reports, and traces.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import episodes as ep
from . import harness, observe
from .acoustics import save_wav
from .episodes import DatasetManifest, load_episodes, load_scenes
from .soundbank import SoundBank

TASK_ALIASES = {"stow": ep.TASK_STOW, "interact": ep.TASK_INTERACT,
                "bisonic": ep.TASK_BISONIC,
                ep.TASK_STOW: ep.TASK_STOW, ep.TASK_INTERACT: ep.TASK_INTERACT}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deskecho",
        description="Desk-scale sound-triggered mobile manipulation benchmark")
    parser.add_argument("--seed", type=int, default=0, help="global RNG seed")
    parser.add_argument("--config", type=Path, help="JSON run-config file")
    parser.add_argument("--jobs", type=int, default=1, help="worker pool size")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-bank", help="synthesize the audio clip library")
    p.add_argument("--out", type=Path, default=Path("bank"))
    p.add_argument("--wav", action="store_true", help="also export WAV files")

    p = sub.add_parser("generate", help="generate an episode dataset")
    p.add_argument("--task", required=True, choices=sorted(TASK_ALIASES))
    p.add_argument("--preset", default="desk", choices=sorted(ep.PRESETS))
    p.add_argument("--out", type=Path, default=Path("dataset"))
    p.add_argument("--scenes", type=int, default=8)

    p = sub.add_parser("validate", help="re-validate a generated dataset")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])

    p = sub.add_parser("render-audio", help="render an episode's first frame")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", type=Path, required=True, help="stereo WAV path")

    p = sub.add_parser("train-nav", help="train the Navigate policy")
    p.add_argument("--preset", default="desk", choices=["desk", "paper"])
    p.add_argument("--steps", type=int, help="override total environment steps")
    p.add_argument("--out", type=Path, default=Path("nav-policy.bin"))
    p.add_argument("--curve", type=Path, help="learning-curve CSV path")

    p = sub.add_parser("eval", help="run a benchmark evaluation")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--planner", default="oracle", choices=["oracle", "rule", "remote"])
    p.add_argument("--controllers", default="oracle", choices=["oracle", "trained"])
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--endpoint", help="remote planner URL (or ECHO_ENDPOINT)")
    p.add_argument("--model", default="omni")
    p.add_argument("--limit", type=int)
    p.add_argument("--out", type=Path, default=Path("runs"))

    p = sub.add_parser("report", help="re-aggregate saved episode records")
    p.add_argument("--records", type=Path, required=True)
    p.add_argument("--out", type=Path, default=Path("runs"))

    p = sub.add_parser("trace", help="trace one episode to JSON/SVG")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--episode", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out", type=Path, default=Path("traces"))
    return parser


def _cmd_synth_bank(args) -> int:
    bank = SoundBank.build(args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "bank-manifest.json").write_text(bank.manifest())
    if args.wav:
        bank.export_wavs(args.out / "wav")
    print(f"bank: {len(bank)} clips -> {args.out}")
    return 0


def _cmd_generate(args) -> int:
    bank = SoundBank.build(args.seed)
    manifest = ep.generate_dataset(TASK_ALIASES[args.task], args.preset,
                                   args.seed, args.out, bank,
                                   scene_count=args.scenes)
    print(f"dataset: {manifest.train_episodes} train / "
          f"{manifest.test_episodes} test -> {args.out}")
    return 0


def _cmd_validate(args) -> int:
    manifest = DatasetManifest.from_json(args.manifest.read_text())
    root = args.manifest.parent
    scenes = load_scenes(root / manifest.scenes_file)
    eps = load_episodes(root / manifest.episode_files[args.split],
                        revalidate=False)
    failures = 0
    for episode in eps:
        report = ep.validate_episode(episode, scenes[episode.scene_id])
        if not report.passed:
            failures += 1
            print(f"FAIL {episode.episode_id}: {','.join(report.reasons)}")
    print(f"validated {len(eps)} episodes, {failures} failures")
    return 1 if failures else 0


def _cmd_render_audio(args) -> int:
    manifest = DatasetManifest.from_json(args.manifest.read_text())
    root = args.manifest.parent
    scenes = load_scenes(root / manifest.scenes_file)
    eps = load_episodes(root / manifest.episode_files[args.split],
                        revalidate=False)
    matches = [e for e in eps if e.episode_id == args.episode]
    if not matches:
        print(f"episode {args.episode!r} not found", file=sys.stderr)
        return 1
    episode = matches[0]
    bank = SoundBank.build(manifest.seed)
    world = ep.build_world(scenes[episode.scene_id], episode, bank)
    frame = observe.binaural_observation(world)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    save_wav(args.out, frame)
    print(f"wrote {args.out} ({frame.duration:.2f} s, clipped={frame.clipped})")
    return 0


def _cmd_train_nav(args) -> int:
    from . import learning
    config = learning.PAPER_CONFIG if args.preset == "paper" else learning.DESK_CONFIG
    if args.steps:
        from dataclasses import replace
        config = replace(config, total_steps=args.steps)
    factory = learning.make_env_factory()
    net, curve = learning.train_navigate(factory, config, seed=args.seed)
    learning.save_checkpoint(net, args.out, config)
    if args.curve:
        learning.save_curve(curve, args.curve)
    success = learning.evaluate_navigate(net, factory, episodes=50)
    print(f"trained {config.total_steps} steps, eval success {success:.2%}, "
          f"checkpoint -> {args.out}")
    return 0


def _run_config_from_args(args) -> harness.RunConfig:
    base = {}
    if args.config:
        base = json.loads(args.config.read_text())
    merged = harness.RunConfig(
        task=base.get("task", ""),
        manifest=str(getattr(args, "manifest", base.get("manifest", ""))),
        planner=getattr(args, "planner", None) or base.get("planner", "oracle"),
        controllers=getattr(args, "controllers", None) or base.get("controllers", "oracle"),
        split=getattr(args, "split", None) or base.get("split", "test"),
        seed=args.seed,
        jobs=args.jobs,
        out_dir=str(getattr(args, "out", base.get("out_dir", "runs"))),
        checkpoint=str(args.checkpoint) if getattr(args, "checkpoint", None)
        else base.get("checkpoint"),
        endpoint=getattr(args, "endpoint", None) or base.get("endpoint")
        or os.environ.get("ECHO_ENDPOINT"),
        model=getattr(args, "model", None) or base.get("model", "omni"),
        limit=getattr(args, "limit", None) or base.get("limit"),
    )
    return merged


def _cmd_eval(args) -> int:
    config = _run_config_from_args(args)
    manifest = DatasetManifest.from_json(Path(config.manifest).read_text())
    config.task = manifest.task
    report, records = harness.run_eval(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = harness.emit_report(report, out)
    harness.save_records(records, out / "records.jsonl")
    print(harness.render_table(report))
    print(f"report -> {files['csv']}")
    return 0


def _cmd_report(args) -> int:
    records = harness.records_from_jsonl(args.records)
    report = harness.aggregate(records)
    files = harness.emit_report(report, args.out)
    print(harness.render_table(report))
    print(f"report -> {files['csv']}")
    return 0


def _cmd_trace(args) -> int:
    manifest = DatasetManifest.from_json(args.manifest.read_text())
    root = args.manifest.parent
    scenes = load_scenes(root / manifest.scenes_file)
    eps = load_episodes(root / manifest.episode_files[args.split],
                        revalidate=False)
    matches = [e for e in eps if e.episode_id == args.episode]
    if not matches:
        print(f"episode {args.episode!r} not found", file=sys.stderr)
        return 1
    episode = matches[0]
    scene = scenes[episode.scene_id]
    bank = SoundBank.build(manifest.seed)
    from .controllers import ORACLE_CONTROLLERS
    from .planner import plan_oracle
    record, trace = harness.run_episode_with_trace(
        episode, scene, bank, lambda e, w: plan_oracle(e), ORACLE_CONTROLLERS)
    args.out.mkdir(parents=True, exist_ok=True)
    trace_path = args.out / f"{episode.episode_id}.json"
    trace_path.write_text(json.dumps(trace, indent=2, sort_keys=True))
    out_note = str(trace_path)
    if args.svg:
        svg_path = args.out / f"{episode.episode_id}.svg"
        harness.trace_to_svg(trace, scene, svg_path)
        out_note += f" and {svg_path}"
    ok = all(s.success for s in record.skills)
    print(f"trace ({'success' if ok else 'failure'}) -> {out_note}")
    return 0


_COMMANDS = {
    "synth-bank": _cmd_synth_bank,
    "generate": _cmd_generate,
    "validate": _cmd_validate,
    "render-audio": _cmd_render_audio,
    "train-nav": _cmd_train_nav,
    "eval": _cmd_eval,
    "report": _cmd_report,
    "trace": _cmd_trace,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
