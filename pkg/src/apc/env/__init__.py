from apc.env.core import (
    PLACEHOLDER,
    EpisodeDoneError,
    GameSpec,
    InvalidActionError,
    MarkovGame,
    ReplayBuffer,
    StepContext,
    StepResult,
    TraceWriter,
    TransitionRecord,
    non_target_actions,
    read_trace,
    record_transitions,
)

__all__ = [
    "PLACEHOLDER",
    "EpisodeDoneError",
    "GameSpec",
    "InvalidActionError",
    "MarkovGame",
    "ReplayBuffer",
    "StepContext",
    "StepResult",
    "TraceWriter",
    "TransitionRecord",
    "non_target_actions",
    "read_trace",
    "record_transitions",
]
