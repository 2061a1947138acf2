"""Churn: session sampling for simulated peers and the create-based
session-length estimator.

The create-based rule counts only sessions that begin in the first half
of the observation window and right-censors sessions still alive when
the window closes, which avoids biasing the estimate toward short
sessions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

from .clock import NS_PER_S


@dataclass(frozen=True)
class SessionObservation:
    peer: object
    start: int
    end: int
    censored: bool = False

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError("session end before start")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class ChurnModel:
    """Exponential on/off process per peer (memoryless by default)."""

    mean_session: int = 3600 * NS_PER_S
    mean_gap: int = 600 * NS_PER_S
    seed: int = 0

    def sample_session(self, rng: random.Random) -> int:
        return max(1, round(rng.expovariate(1.0 / self.mean_session)))

    def sample_gap(self, rng: random.Random) -> int:
        return max(1, round(rng.expovariate(1.0 / self.mean_gap)))

    def generate_observations(self, peers: Sequence[object],
                              window: int) -> List[SessionObservation]:
        """Offline sampling of per-peer sessions over [0, window)."""
        rng = random.Random(self.seed)
        out: List[SessionObservation] = []
        for peer in peers:
            t = self.sample_gap(rng) if rng.random() < 0.5 else 0
            while t < window:
                length = self.sample_session(rng)
                end = t + length
                if end >= window:
                    out.append(SessionObservation(peer, t, window, True))
                    break
                out.append(SessionObservation(peer, t, end))
                t = end + self.sample_gap(rng)
        return out


def churn_cdf_create_based(
        observations: Sequence[SessionObservation],
        window: int) -> List[Tuple[int, float]]:
    """Empirical CDF over session lengths of sessions that started in the
    first half of the window. Returns sorted (length_ns, fraction) steps."""
    if window <= 0:
        raise ValueError("window must be positive")
    lengths = sorted(o.length for o in observations if o.start < window // 2)
    if not lengths:
        raise ValueError("no sessions start in the first half of the window")
    n = len(lengths)
    cdf: List[Tuple[int, float]] = []
    for i, length in enumerate(lengths, start=1):
        if cdf and cdf[-1][0] == length:
            cdf[-1] = (length, i / n)
        else:
            cdf.append((length, i / n))
    return cdf


def mean_session_length(cdf: List[Tuple[int, float]]) -> float:
    """Mean of the distribution underlying an empirical CDF."""
    mean = 0.0
    prev = 0.0
    for length, frac in cdf:
        mean += length * (frac - prev)
        prev = frac
    return mean


def apply_churn(clock, net, peers: Sequence[object], model: ChurnModel,
                window: int) -> List[SessionObservation]:
    """Schedule online/offline flips on the live network and return the
    planned session observations."""
    observations = model.generate_observations(peers, window)
    by_peer = {}
    for obs in observations:
        by_peer.setdefault(obs.peer, []).append(obs)
    for pid, sessions in by_peer.items():
        first = sessions[0]
        if first.start > 0:
            net.set_online(pid, False)
            clock.schedule(first.start, lambda p=pid: net.set_online(p, True))
        for obs in sessions:
            if not obs.censored:
                clock.schedule(obs.end, lambda p=pid: net.set_online(p, False))
            nxt = obs
        # re-joins are scheduled by the next session's start
        for prev, nxt in zip(sessions, sessions[1:]):
            clock.schedule(nxt.start, lambda p=pid: net.set_online(p, True))
    return observations
