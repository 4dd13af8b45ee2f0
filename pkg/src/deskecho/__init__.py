"""Desk-scale simulator and benchmark harness for sound-triggered mobile
manipulation: 2D acoustic rendering, seeded episode generation, skill-chain
execution with exact success predicates, and planning/evaluation tooling.
"""

__version__ = "0.1.0"

from .acoustics import (BinauralFrame, EarGeometry, ImpulseResponse, Waveform,
                        compute_rir, convolve, render_binaural, rt60_estimate)
from .episodes import Episode, generate_episode, ground_truth_chain, validate_episode
from .planner import SkillChain, plan_oracle, plan_rule_based, plan_remote, validate_chain
from .soundbank import SoundBank, SoundClip, synthesize_bank, window_of
from .world import AgentState, ObjectInstance, Scene, World, build_occupancy_grid

__all__ = [
    "AgentState", "BinauralFrame", "EarGeometry", "Episode", "ImpulseResponse",
    "ObjectInstance", "Scene", "SkillChain", "SoundBank", "SoundClip",
    "Waveform", "World", "build_occupancy_grid", "compute_rir", "convolve",
    "generate_episode", "ground_truth_chain", "plan_oracle", "plan_remote",
    "plan_rule_based", "render_binaural", "rt60_estimate", "synthesize_bank",
    "validate_chain", "validate_episode", "window_of",
]
