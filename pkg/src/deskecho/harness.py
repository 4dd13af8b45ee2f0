"""End-to-end episode runner, metric aggregation, and report emission.

A run plans each episode, validates the chain, executes it (even when the
plan is wrong, so per-skill columns stay populated), and aggregates
planning / per-skill / overall success rates. Dual-source episodes report
rates as first/second pairs, with the second stage attempted only after the
first fully succeeds.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

from . import observe
from .controllers import ORACLE_CONTROLLERS, policy_controllers
from .episodes import (DatasetManifest, Episode, TASK_BISONIC,
                       build_world, load_episodes, load_scenes)
from .errors import EmptyRun, IoFailure, Transport
from .planner import (PlannerObservation, PlannerVerdict, SkillChain,
                      chain_matches_truth, plan_oracle, plan_remote,
                      plan_rule_based)
from .skills import run_chain
from .soundbank import SoundBank

SKILL_COLUMNS = ("nav", "pick", "place", "open_door", "close_sink")
COLUMN_TITLES = {"planning": "Task Planning", "nav": "Navigate",
                 "pick": "Pick", "place": "Place", "open_door": "Open Door",
                 "close_sink": "Close Sink", "overall": "Overall"}
TASK_SKILLS = {
    "sonicstow": ("nav", "pick", "place"),
    "sonicinteract": ("nav", "open_door", "close_sink"),
    "bisonic": SKILL_COLUMNS,
}


@dataclass
class RunConfig:
    task: str
    manifest: str
    planner: str = "oracle"               # oracle | rule | remote
    controllers: str = "oracle"           # oracle | trained
    split: str = "test"
    seed: int = 0
    jobs: int = 1
    out_dir: str = "runs"
    checkpoint: str | None = None
    endpoint: str | None = None
    model: str = "omni"
    retries: int = 2
    timeout_s: float = 30.0
    limit: int | None = None
    rate_per_s: float = 4.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


@dataclass
class SkillRow:
    slot: int
    skill: str
    success: bool
    failure_reason: str | None
    steps: int


@dataclass
class EpisodeRecord:
    episode_id: str
    task: str
    skipped: bool = False
    skip_reason: str | None = None
    backend: str | None = None
    planning_correct: bool | None = None
    predicted: dict | list | None = None
    skills: list[SkillRow] = field(default_factory=list)
    stage_success: list[bool] = field(default_factory=list)
    overall: list[bool] = field(default_factory=list)
    trace: dict | None = None


class TokenBucket:
    """Shared rate limiter for remote planner calls."""

    def __init__(self, rate_per_s: float, capacity: float | None = None):
        self.rate = rate_per_s
        self.capacity = capacity or max(1.0, rate_per_s)
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self.lock = threading.Lock()

    def acquire(self):
        while True:
            with self.lock:
                now = time.monotonic()
                self.tokens = min(self.capacity,
                                  self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            time.sleep(wait)


def make_planner(config: RunConfig, classifier=None, bucket: TokenBucket | None = None):
    """Backend dispatch: callable (episode, world) -> PlannerVerdict."""
    if config.planner == "oracle":
        return lambda episode, world: plan_oracle(episode)
    if config.planner == "rule":
        if classifier is None:
            raise ValueError("rule-based planner needs a fitted classifier")

        def rule(episode, world):
            return plan_rule_based(_observation(episode, world), classifier)
        return rule
    if config.planner == "remote":
        endpoint = config.endpoint
        if not endpoint:
            raise ValueError("remote planner needs an endpoint URL")

        def remote(episode, world):
            if bucket is not None:
                bucket.acquire()
            return plan_remote(_observation(episode, world), endpoint,
                               model=config.model, retries=config.retries,
                               timeout=config.timeout_s)
        return remote
    raise ValueError(f"unknown planner backend {config.planner!r}")


def _observation(episode: Episode, world) -> PlannerObservation:
    hint = None
    if episode.task == TASK_BISONIC:
        hint = episode.sources[episode.priority_order[0]].category
    return PlannerObservation(audio=observe.binaural_observation(world),
                              scan=observe.agent_scan(world),
                              known_first_source=hint)


def _stage_chains(chain: SkillChain, episode: Episode) -> list[tuple[str, ...]]:
    """Predicted chain(s) in priority order, tolerating structural
    mismatches so wrong plans still execute diagnostically."""
    per_source = chain.per_source()
    n = len(episode.priority_order)
    return per_source[:n]


def run_episode(episode: Episode, scene, bank: SoundBank, planner_fn,
                controllers, keep_trace: bool = False) -> EpisodeRecord:
    """Plan, validate, execute, record. Planner transport failures mark the
    record Skipped; wrong plans execute anyway for per-skill diagnostics.
    """
    record = EpisodeRecord(episode.episode_id, episode.task)
    world = build_world(scene, episode, bank)
    try:
        verdict: PlannerVerdict = planner_fn(episode, world)
    except Transport as exc:
        record.skipped = True
        record.skip_reason = str(exc)
        return record
    record.backend = verdict.backend
    record.planning_correct = chain_matches_truth(verdict.chain, episode)
    record.predicted = verdict.chain.to_payload()

    traces = {}
    for stage, slot in enumerate(episode.priority_order):
        chains = _stage_chains(verdict.chain, episode)
        if stage >= len(chains):
            break
        outcomes, stage_ok = run_chain(world, episode, chains[stage], slot,
                                       controllers)
        for outcome in outcomes:
            record.skills.append(SkillRow(stage, outcome.skill, outcome.success,
                                          outcome.failure_reason, outcome.steps))
        record.stage_success.append(stage_ok)
        if keep_trace:
            traces[stage] = [o.skill for o in outcomes]
        if not stage_ok:
            break

    # overall per stage: correct plan AND every stage up to here succeeded
    cumulative = bool(record.planning_correct)
    for stage in range(len(episode.priority_order)):
        done = stage < len(record.stage_success) and record.stage_success[stage]
        cumulative = cumulative and done
        record.overall.append(cumulative)
    if keep_trace:
        record.trace = {
            "sources": [list(s.position) for s in episode.sources],
            "stages": traces,
        }
    return record


@dataclass
class EvalReport:
    task: str
    episode_count: int
    skipped_count: int
    planning: tuple[int, int]                       # (correct, total)
    skill_counts: dict[tuple[str, int], tuple[int, int]]
    overall_counts: dict[int, tuple[int, int]]

    @staticmethod
    def rate(pair) -> float:
        succ, att = pair
        return 100.0 * succ / att if att else 0.0

    def stages(self) -> int:
        return 2 if self.task == TASK_BISONIC else 1


def aggregate(records: list[EpisodeRecord]) -> EvalReport:
    """Rates over non-skipped records: planning accuracy, per-skill success
    conditioned on the skill being reached, and overall success under a
    correct plan."""
    live = [r for r in records if not r.skipped]
    if not live:
        raise EmptyRun("no non-skipped records to aggregate")
    task = live[0].task
    planning_correct = sum(bool(r.planning_correct) for r in live)

    skill_counts: dict[tuple[str, int], list[int]] = {}
    overall_counts: dict[int, list[int]] = {}
    for r in live:
        for row in r.skills:
            cell = skill_counts.setdefault((row.skill, row.slot), [0, 0])
            cell[0] += bool(row.success)
            cell[1] += 1
        for stage, ok in enumerate(r.overall):
            cell = overall_counts.setdefault(stage, [0, 0])
            cell[0] += bool(ok)
            cell[1] += 1
    return EvalReport(
        task=task,
        episode_count=len(live),
        skipped_count=sum(r.skipped for r in records),
        planning=(planning_correct, len(live)),
        skill_counts={k: tuple(v) for k, v in sorted(skill_counts.items())},
        overall_counts={k: tuple(v) for k, v in sorted(overall_counts.items())},
    )


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def _fmt_rate(pair) -> str:
    return f"{EvalReport.rate(pair):.2f}"


def _cell(report: EvalReport, metric: str) -> str:
    """One table cell; dual-source tasks show 'first / second'."""
    if metric == "planning":
        return _fmt_rate(report.planning)
    parts = []
    for stage in range(report.stages()):
        if metric == "overall":
            pair = report.overall_counts.get(stage, (0, 0))
        else:
            pair = report.skill_counts.get((metric, stage), (0, 0))
        parts.append(_fmt_rate(pair))
    return " / ".join(parts)


def render_table(report: EvalReport) -> str:
    metrics = ["planning", *TASK_SKILLS[report.task], "overall"]
    headers = [COLUMN_TITLES[m] for m in metrics]
    cells = [_cell(report, m) for m in metrics]
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    head = "  ".join(h.ljust(w) for h, w in zip(headers, widths))
    body = "  ".join(c.ljust(w) for c, w in zip(cells, widths))
    note = (f"task={report.task} episodes={report.episode_count} "
            f"skipped={report.skipped_count}")
    return f"{note}\n{head}\n{body}\n"


def report_to_csv(report: EvalReport) -> str:
    lines = ["task,metric,slot,successes,attempts"]
    lines.append(f"{report.task},episodes,,{report.episode_count},")
    lines.append(f"{report.task},skipped,,{report.skipped_count},")
    lines.append(f"{report.task},planning,,{report.planning[0]},{report.planning[1]}")
    for (skill, slot), (succ, att) in report.skill_counts.items():
        lines.append(f"{report.task},skill:{skill},{slot},{succ},{att}")
    for slot, (succ, att) in report.overall_counts.items():
        lines.append(f"{report.task},overall,{slot},{succ},{att}")
    return "\n".join(lines) + "\n"


def report_from_csv(text: str) -> EvalReport:
    task = None
    episode_count = skipped = 0
    planning = (0, 0)
    skill_counts = {}
    overall_counts = {}
    for line in text.strip().splitlines()[1:]:
        cols = line.split(",")
        task = cols[0]
        metric, slot, succ, att = cols[1], cols[2], cols[3], cols[4]
        if metric == "episodes":
            episode_count = int(succ)
        elif metric == "skipped":
            skipped = int(succ)
        elif metric == "planning":
            planning = (int(succ), int(att))
        elif metric.startswith("skill:"):
            skill_counts[(metric.split(":", 1)[1], int(slot))] = (int(succ), int(att))
        elif metric == "overall":
            overall_counts[int(slot)] = (int(succ), int(att))
    return EvalReport(task, episode_count, skipped, planning,
                      dict(sorted(skill_counts.items())),
                      dict(sorted(overall_counts.items())))


def emit_report(report: EvalReport, out_dir, stem: str = "report") -> dict[str, Path]:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        txt_path = out / f"{stem}.txt"
        csv_path.write_text(report_to_csv(report))
        txt_path.write_text(render_table(report))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return {"csv": csv_path, "txt": txt_path}


# ---------------------------------------------------------------------------
# Trace artifacts
# ---------------------------------------------------------------------------

def run_episode_with_trace(episode: Episode, scene, bank, planner_fn,
                           controllers) -> tuple[EpisodeRecord, dict]:
    """Re-run one episode recording the agent polyline per skill."""
    from .skills import RUNNERS, make_context
    from .planner import chain_matches_truth as _cmt

    record = EpisodeRecord(episode.episode_id, episode.task)
    world = build_world(scene, episode, bank)
    verdict = planner_fn(episode, world)
    record.backend = verdict.backend
    record.planning_correct = _cmt(verdict.chain, episode)
    record.predicted = verdict.chain.to_payload()

    segments = []
    for stage, slot in enumerate(episode.priority_order):
        chains = _stage_chains(verdict.chain, episode)
        if stage >= len(chains):
            break
        stage_ok = True
        for skill in chains[stage]:
            ctx = make_context(world, episode, slot, skill)
            controller = controllers[skill](ctx)
            start_pose = list(world.agent.base_position)
            outcome = RUNNERS[skill](ctx, controller)
            record.skills.append(SkillRow(stage, skill, outcome.success,
                                          outcome.failure_reason, outcome.steps))
            segments.append({
                "stage": stage, "skill": skill, "success": outcome.success,
                "start": start_pose,
                "poses": [t["pose"] for t in ctx.trace],
            })
            if not outcome.success:
                stage_ok = False
                break
        record.stage_success.append(stage_ok)
        if not stage_ok:
            break
    trace = {
        "episode_id": episode.episode_id,
        "scene_id": episode.scene_id,
        "bounds": list(scene.bounds),
        "sources": [{"category": s.category, "position": list(s.position)}
                    for s in episode.sources],
        "agent_start": list(episode.agent_start),
        "segments": segments,
        "outcomes": [asdict(s) for s in record.skills],
    }
    return record, trace


def trace_to_svg(trace: dict, scene, path):
    """Static top-down plot of the trajectory and sound sources."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 6))
    x0, y0, x1, y1 = scene.bounds
    ax.plot([x0, x1, x1, x0, x0], [y0, y0, y1, y1, y0], color="black")
    for w in scene.walls:
        ax.plot([w.start[0], w.end[0]], [w.start[1], w.end[1]],
                color="black", lw=2)
    for r in scene.receptacles:
        ax.add_patch(plt.Rectangle((r.rect[0], r.rect[1]),
                                   r.rect[2] - r.rect[0], r.rect[3] - r.rect[1],
                                   color="tan", alpha=0.6))
    for d in scene.doors:
        ax.plot([d.hinge[0], d.handle[0]], [d.hinge[1], d.handle[1]],
                color="saddlebrown", lw=3)
    for src in trace["sources"]:
        ax.scatter(*src["position"], marker="*", s=160, zorder=5,
                   label=src["category"])
    colors = {"nav": "tab:blue", "pick": "tab:green", "place": "tab:orange",
              "open_door": "tab:purple", "close_sink": "tab:red"}
    for seg in trace["segments"]:
        poses = [seg["start"]] + [p[:2] for p in seg["poses"]]
        xs = [p[0] for p in poses]
        ys = [p[1] for p in poses]
        ax.plot(xs, ys, color=colors.get(seg["skill"], "gray"),
                lw=1.5, label=f'{seg["skill"]} ({"ok" if seg["success"] else "fail"})')
    ax.scatter(*trace["agent_start"], marker="o", color="black", zorder=5)
    ax.set_aspect("equal")
    ax.set_xlim(x0 - 0.3, x1 + 0.3)
    ax.set_ylim(y0 - 0.3, y1 + 0.3)
    handles, labels = ax.get_legend_handles_labels()
    seen = dict(zip(labels, handles))
    ax.legend(seen.values(), seen.keys(), fontsize=8, loc="upper right")
    ax.set_title(trace["episode_id"])
    fig.savefig(path, format="svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# Full evaluation runs
# ---------------------------------------------------------------------------

def _load_dataset(config: RunConfig):
    manifest_path = Path(config.manifest)
    manifest = DatasetManifest.from_json(manifest_path.read_text())
    root = manifest_path.parent
    scenes = load_scenes(root / manifest.scenes_file)
    episodes = load_episodes(root / manifest.episode_files[config.split],
                             scenes, revalidate=False)
    if config.limit:
        episodes = episodes[: config.limit]
    return manifest, scenes, episodes


def run_eval(config: RunConfig, bank: SoundBank | None = None,
             classifier=None) -> tuple[EvalReport, list[EpisodeRecord]]:
    """Evaluate one task dataset under the configured planner/controllers."""
    _, scenes, episodes = _load_dataset(config)
    bank = bank or SoundBank.build(config.seed)

    if config.planner == "rule" and classifier is None:
        from .perception import CategoryClassifier
        classifier = CategoryClassifier().fit(bank)

    bucket = TokenBucket(config.rate_per_s) if config.planner == "remote" else None
    planner_fn = make_planner(config, classifier=classifier, bucket=bucket)

    if config.controllers == "trained":
        from .learning import load_checkpoint
        if not config.checkpoint:
            raise ValueError("trained controllers need --checkpoint")
        net, _ = load_checkpoint(config.checkpoint)
        controllers = policy_controllers(net)
    else:
        controllers = ORACLE_CONTROLLERS

    def job(episode: Episode) -> EpisodeRecord:
        return run_episode(episode, scenes[episode.scene_id], bank,
                           planner_fn, controllers)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(job, episodes))
    else:
        records = [job(ep) for ep in episodes]
    records.sort(key=lambda r: r.episode_id)
    report = aggregate(records)
    return report, records


def save_records(records: list[EpisodeRecord], path):
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def records_from_jsonl(path) -> list[EpisodeRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            doc["skills"] = [SkillRow(**s) for s in doc.get("skills", [])]
            records.append(EpisodeRecord(**doc))
    return records
