"""Per-sensor health tracking and measurement-covariance scaling."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NonMonotonicTime


@dataclass(frozen=True)
class AwareParams:
    tau: float = 0.5  # unhealthy below this score
    tau_rec: float = 0.8  # re-enable at or above this score
    gamma: float = 2.0
    N: int = 5
    dT: float = 2.0
    # True: healthy updates use R / sigma^2 (tighter than nominal once sigma
    # has grown). False: healthy updates use the nominal R.
    tighten_healthy: bool = False

    def __post_init__(self):
        if not 0.0 <= self.tau <= self.tau_rec <= 1.0:
            raise ValueError("need 0 <= tau <= tau_rec <= 1")
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if self.N < 1 or self.dT <= 0:
            raise ValueError("N must be >= 1 and dT positive")


@dataclass(frozen=True)
class Decision:
    """``update`` with covariance multiplier ``scale``, or a skip."""

    update: bool
    scale: float = 1.0

    @classmethod
    def skip(cls) -> "Decision":
        return cls(False, 0.0)

    def __str__(self):
        return f"update({self.scale:g})" if self.update else "skip"


@dataclass
class SensorHealth:
    sensor_id: str
    params: AwareParams = field(default_factory=AwareParams)
    sigma: float = 1.0
    enabled: bool = True
    queue: deque = field(default_factory=deque)
    last_t: float = -np.inf

    def reset(self) -> None:
        self.sigma = 1.0
        self.queue.clear()

    def copy(self) -> "SensorHealth":
        return SensorHealth(self.sensor_id, self.params, self.sigma, self.enabled, deque(self.queue), self.last_t)


def aware_step(health: SensorHealth, t: float, q: float):
    """Advance one sensor's health by a measurement with quality ``q``.

    Returns ``(health, decision)``; ``health`` is updated in place and
    returned for convenience.
    """
    if t < health.last_t:
        raise NonMonotonicTime(f"{health.sensor_id}: t={t} before {health.last_t}")
    health.last_t = t
    p = health.params

    if not health.enabled:
        if q >= p.tau_rec:
            health.enabled = True
            health.reset()
        return health, Decision.skip()

    if q >= p.tau:
        return health, Decision(True, 1.0 / health.sigma**2 if p.tighten_healthy else 1.0)

    health.queue.append((t, q))
    health.sigma *= p.gamma
    while len(health.queue) > p.N:
        health.queue.popleft()
    if len(health.queue) == p.N and health.queue[-1][0] - health.queue[0][0] < p.dT:
        health.enabled = False
        health.reset()
        return health, Decision.skip()
    return health, Decision(True, health.sigma)


def quality_score_vis(inlier_ratio: float, tracked: int, target_count: int, rms_px: float,
                      u_px: float = 1.0) -> float:
    """Visual quality from the update's own statistics."""
    q = 0.4 * inlier_ratio + 0.3 * min(1.0, tracked / target_count) + 0.3 * np.exp(-rms_px / u_px)
    return float(np.clip(q, 0.0, 1.0))


def quality_score_dvl(gate_pass: bool, residual_norm: float, sigma_trace: float, valid_beams: int) -> float:
    """DVL quality from gate outcome, normalised residual and beam count."""
    scale = np.sqrt(sigma_trace) if sigma_trace > 0 else np.inf
    q = 0.5 * float(gate_pass) + 0.3 * np.exp(-residual_norm / scale) + 0.2 * valid_beams / 4.0
    return float(np.clip(q, 0.0, 1.0))
