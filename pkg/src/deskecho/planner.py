"""Sound-triggered task planning: observation to validated skill chain via
oracle, rule-based (classifier), or remote multimodal-LLM backends.

The remote wire format is a single JSON POST
``{model, messages: [{role: system, content}, {role: user, parts: [...]}]}``
with the user parts carrying text, a base64 WAV of the binaural window, and
a base64 PNG rasterization of the range scan; the endpoint replies
``{"text": ...}``. Any OpenAI-style multimodal endpoint can be adapted
behind this contract.
"""

from __future__ import annotations

import base64
import io
import json
import math
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np
import requests

from .acoustics import BinauralFrame, save_wav
from .errors import PlanInvalid, PlanParse, Transport
from .episodes import Episode, TASK_BISONIC, ground_truth_chain
from .perception import CategoryClassifier, RangeScan, mel_spectrogram, stft
from .skills import VOCABULARY
from .world import Category

BACKEND_ORACLE = "Oracle"
BACKEND_RULE = "RuleBased"
BACKEND_REMOTE = "Remote"

FALLBACK_CHAIN = ("nav", "pick", "place")
DEFAULT_RETRIES = 2
DEFAULT_TIMEOUT_S = 30.0

# category label -> name used in the dual-source prompt's hint slot
PROMPT_NAMES = {
    Category.ALARM: "Mechanical_Alarm",
    Category.PHONE: "Phone",
    Category.FURBY: "Furby",
    Category.DOORBELL: "Doorbell",
    Category.SINK: "Running-Water",
}


@dataclass(frozen=True)
class SkillChain:
    """Either a flat skill list or the two-keyed dual-source form."""

    skills: tuple[str, ...] = ()
    first_sound: tuple[str, ...] | None = None
    second_sound: tuple[str, ...] | None = None

    @property
    def is_dual(self) -> bool:
        return self.first_sound is not None

    def per_source(self) -> list[tuple[str, ...]]:
        if self.is_dual:
            return [self.first_sound, self.second_sound]
        return [self.skills]

    def to_payload(self):
        if self.is_dual:
            return {"first_sound": list(self.first_sound),
                    "second_sound": list(self.second_sound)}
        return list(self.skills)


@dataclass
class PlannerObservation:
    """Exactly the Navigate-skill observation space, nothing more."""

    audio: BinauralFrame
    scan: RangeScan
    known_first_source: str | None = None


@dataclass
class PlannerVerdict:
    chain: SkillChain
    backend: str
    raw_response: str | None = None
    planning_correct: bool | None = None
    fallback: bool = False


def _valid_list(raw) -> tuple[str, ...]:
    if not isinstance(raw, (list, tuple)):
        raise PlanInvalid(f"plan must be a list, got {type(raw).__name__}")
    if len(raw) == 0:
        raise PlanInvalid("empty")
    for token in raw:
        if token not in VOCABULARY:
            raise PlanInvalid(str(token))
    return tuple(raw)


def validate_chain(raw) -> SkillChain:
    """Accept a non-empty vocabulary-pure list, or the exact two-key
    first_sound/second_sound mapping; raise PlanInvalid otherwise."""
    if isinstance(raw, dict):
        if set(raw.keys()) != {"first_sound", "second_sound"}:
            bad = set(raw.keys()) ^ {"first_sound", "second_sound"}
            raise PlanInvalid(f"keys: {sorted(bad)}")
        return SkillChain(first_sound=_valid_list(raw["first_sound"]),
                          second_sound=_valid_list(raw["second_sound"]))
    return SkillChain(skills=_valid_list(raw))


def chain_matches_truth(chain: SkillChain, episode: Episode) -> bool:
    truth = [episode.ground_truth_chains[i] for i in episode.priority_order]
    if episode.task == TASK_BISONIC:
        return chain.is_dual and list(chain.per_source()) == truth
    return (not chain.is_dual) and chain.skills == truth[0]


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

def plan_oracle(episode: Episode) -> PlannerVerdict:
    """Privileged planner: replays the ground-truth chain(s)."""
    chains = [episode.ground_truth_chains[i] for i in episode.priority_order]
    if episode.task == TASK_BISONIC:
        chain = SkillChain(first_sound=chains[0], second_sound=chains[1])
    else:
        chain = SkillChain(skills=chains[0])
    chain = validate_chain(chain.to_payload())
    return PlannerVerdict(chain, BACKEND_ORACLE, planning_correct=True)


def _classify_window(obs: PlannerObservation, classifier: CategoryClassifier,
                     exclude: str | None = None):
    mono = 0.5 * (obs.audio.left.samples + obs.audio.right.samples)
    if float(np.sum(mono ** 2)) < 1e-10:
        return None
    from .acoustics import Waveform
    mel = mel_spectrogram(stft(Waveform(mono)), classifier.bands)
    return classifier.predict(mel, exclude=exclude)


def plan_rule_based(obs: PlannerObservation,
                    classifier: CategoryClassifier) -> PlannerVerdict:
    """Classifier-backed planner: classify the window, map the category to
    its required chain. Dual-source mode uses the confirmed first source and
    classifies the remaining mixture for the second. Silence falls back to
    the rigid-object chain, flagged.
    """
    if obs.known_first_source is not None:
        first = ground_truth_chain(obs.known_first_source)
        guess = _classify_window(obs, classifier, exclude=obs.known_first_source)
        if guess is None:
            chain = validate_chain({"first_sound": first,
                                    "second_sound": FALLBACK_CHAIN})
            return PlannerVerdict(chain, BACKEND_RULE, fallback=True)
        chain = validate_chain({"first_sound": first,
                                "second_sound": ground_truth_chain(guess[0])})
        return PlannerVerdict(chain, BACKEND_RULE)
    guess = _classify_window(obs, classifier)
    if guess is None:
        return PlannerVerdict(validate_chain(list(FALLBACK_CHAIN)),
                              BACKEND_RULE, fallback=True)
    return PlannerVerdict(validate_chain(list(ground_truth_chain(guess[0]))),
                          BACKEND_RULE)


# ---------------------------------------------------------------------------
# Remote backend
# ---------------------------------------------------------------------------

def load_prompt(dual: bool) -> str:
    name = "dual_source.txt" if dual else "single_source.txt"
    return resources.files("deskecho").joinpath(f"prompts/{name}").read_text()


def split_prompt(text: str) -> tuple[str, str]:
    """(system, user instruction) pieces of a stored prompt asset."""
    head, _, tail = text.partition("\nUser Prompt:")
    system = head.removeprefix("System Prompt: ").strip()
    quoted = re.search(r'"([^"]+)"\s*$', tail.strip())
    user = quoted.group(1) if quoted else tail.strip()
    return system, user


def strip_fences(text: str) -> str:
    """Remove markdown code fences that models emit despite instructions."""
    stripped = text.strip()
    if stripped.startswith("```"):
        stripped = re.sub(r"^```[a-zA-Z]*\s*", "", stripped)
        stripped = re.sub(r"\s*```$", "", stripped)
    return stripped.strip()


def _wav_b64(frame: BinauralFrame) -> str:
    buf = io.BytesIO()
    save_wav(buf, frame)
    return base64.b64encode(buf.getvalue()).decode()


def _scan_png_b64(scan: RangeScan, size: int = 128) -> str:
    """Rasterize the range scan as a top-down grayscale polar plot."""
    from PIL import Image, ImageDraw
    img = Image.new("L", (size, size), 255)
    draw = ImageDraw.Draw(img)
    cx, cy = size // 2, size - 4
    scale = (size - 8) / scan.max_range
    angles = np.linspace(-scan.fov / 2.0, scan.fov / 2.0, len(scan.ranges))
    for ang, rng in zip(angles, scan.ranges):
        # forward is up in image space
        ex = cx + rng * scale * math.sin(ang)
        ey = cy - rng * scale * math.cos(ang)
        draw.line([(cx, cy), (ex, ey)], fill=200)
        if rng < scan.max_range:
            draw.ellipse([ex - 1, ey - 1, ex + 1, ey + 1], fill=0)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode()


def build_request(obs: PlannerObservation, model: str) -> dict:
    """Wire payload from a PlannerObservation; accepting only that type is
    the information-leak guard."""
    if not isinstance(obs, PlannerObservation):
        raise TypeError("remote planner accepts PlannerObservation only")
    dual = obs.known_first_source is not None
    system, user = split_prompt(load_prompt(dual))
    if dual:
        system = system.replace("{obj_1}", PROMPT_NAMES[obs.known_first_source])
    return {
        "model": model,
        "messages": [
            {"role": "system", "content": system},
            {"role": "user", "parts": [
                {"type": "text", "text": user},
                {"type": "audio", "format": "wav_base64", "data": _wav_b64(obs.audio)},
                {"type": "image", "format": "png_base64", "data": _scan_png_b64(obs.scan)},
            ]},
        ],
    }


def plan_remote(obs: PlannerObservation, endpoint: str, model: str = "omni",
                retries: int = DEFAULT_RETRIES,
                timeout: float = DEFAULT_TIMEOUT_S,
                session=None) -> PlannerVerdict:
    """One planning request against a remote endpoint.

    Raises Transport on network/HTTP failure, PlanParse when the response is
    not JSON after ``retries`` re-requests, PlanInvalid on vocabulary or
    structure violations.
    """
    payload = build_request(obs, model)
    http = session or requests
    last_error = None
    for _ in range(retries + 1):
        try:
            response = http.post(endpoint, json=payload, timeout=timeout)
            response.raise_for_status()
            text = response.json().get("text", "")
        except (requests.RequestException, ValueError) as exc:
            raise Transport(str(exc)) from exc
        try:
            doc = json.loads(strip_fences(text))
        except json.JSONDecodeError as exc:
            last_error = exc
            continue
        if not isinstance(doc, dict) or "plan" not in doc:
            last_error = PlanParse("missing 'plan' key")
            continue
        chain = validate_chain(doc["plan"])
        return PlannerVerdict(chain, BACKEND_REMOTE, raw_response=text)
    raise PlanParse(f"unparseable response after {retries + 1} attempts: {last_error}")
