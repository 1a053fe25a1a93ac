"""
Episode traces and the per-episode balancing metrics.

Band membership for climb and convergence time is closed (|e| <= 0.02 m);
success is strict (|e| < 0.01 m at the end of an episode that did not fail).
"""

from dataclasses import dataclass, fields
from typing import Dict, Optional, Sequence

import numpy as np

from task_env import Terminal

BAND = 0.02
SUCCESS_THRESHOLD = 0.01

TRACE_COLUMNS = [
    "time",
    "e",
    "p_b",
    "v_b",
    "theta",
    "omega",
    "v_rz",
    "delta_v",
    "r_object",
    "r_control",
    "r_failure",
    "r_goal",
]


@dataclass
class EpisodeTrace:
    """60 Hz samples of one episode; row k is the state at decision k"""

    time: np.ndarray
    e: np.ndarray
    p_b: np.ndarray
    v_b: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    v_rz: np.ndarray
    delta_v: np.ndarray
    r_object: np.ndarray
    r_control: np.ndarray
    r_failure: np.ndarray
    r_goal: np.ndarray
    duration: float
    terminal: Terminal = Terminal.TIMEOUT
    final_error: Optional[float] = None  # error after the last decision

    def __len__(self) -> int:
        return len(self.time)

    @property
    def failed(self) -> bool:
        return self.terminal == Terminal.FAILURE

    def columns(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TRACE_COLUMNS}

    @classmethod
    def from_error(cls, e: Sequence[float], duration: float, dt: float = 1.0 / 60.0, **kwargs) -> "EpisodeTrace":
        """Trace carrying only an error signal, other columns zero"""
        e = np.asarray(e, dtype=float)
        zeros = np.zeros_like(e)
        columns = {f.name: zeros for f in fields(cls) if f.name in TRACE_COLUMNS}
        columns.update(time=np.arange(e.size) * dt, e=e)
        return cls(**columns, duration=duration, **kwargs)


def terminal_error(trace: EpisodeTrace) -> float:
    """|e| at the end of the episode"""
    if trace.final_error is not None:
        return abs(float(trace.final_error))
    return abs(float(trace.e[-1]))


def is_success(trace: EpisodeTrace) -> bool:
    return not trace.failed and terminal_error(trace) < SUCCESS_THRESHOLD


def success_rate(traces: Sequence[EpisodeTrace]) -> float:
    """Percentage of successful episodes"""
    if not traces:
        return 0.0
    return 100.0 * sum(is_success(t) for t in traces) / len(traces)


def climb_time(trace: EpisodeTrace, band: float = BAND) -> float:
    """First time |e| enters the band; the episode duration if never or on failure"""
    if trace.failed:
        return trace.duration
    inside = np.flatnonzero(np.abs(trace.e) <= band)
    return float(trace.time[inside[0]]) if inside.size else trace.duration


def convergence_time(trace: EpisodeTrace, band: float = BAND) -> float:
    """Start of the final stretch that stays inside the band to the end"""
    if trace.failed:
        return trace.duration
    outside = np.flatnonzero(np.abs(trace.e) > band)
    if outside.size == 0:
        return float(trace.time[0])
    last_out = outside[-1]
    if last_out == len(trace) - 1:
        return trace.duration
    return float(trace.time[last_out + 1])


def sign_changes(trace: EpisodeTrace) -> int:
    """Number of sign flips of e, zeros skipped"""
    signs = np.sign(trace.e)
    signs = signs[signs != 0]
    return int(np.count_nonzero(signs[1:] != signs[:-1]))


def episode_metrics(traces: Sequence[EpisodeTrace]) -> Dict[str, float]:
    """SR (%), SE (mm), CONT (s) and CLIT (s) averaged over the episodes"""
    return {
        "SR": success_rate(traces),
        "SE_mm": 1000.0 * float(np.mean([terminal_error(t) for t in traces])),
        "CONT_s": float(np.mean([convergence_time(t) for t in traces])),
        "CLIT_s": float(np.mean([climb_time(t) for t in traces])),
    }


def failure_count(traces: Sequence[EpisodeTrace]) -> int:
    return sum(t.failed for t in traces)

