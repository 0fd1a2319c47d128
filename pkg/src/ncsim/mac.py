"""Single-hop CSMA/CA channel with per-sensor FCFS queues.

Slotted backoff on a global grid of `slot_us` boundaries: while the channel
is idle every contending node decrements its counter once per boundary and
transmits when it reaches zero; counters freeze while the channel is busy
(carrier sense). Two nodes reaching zero in the same slot collide, the
channel is wasted for a full data transmission, and each collided node
backs off again with an incremented exponent until `max_retries` is
exhausted, after which the head packet is dropped.

Rather than stepping slot by slot, each contender stores the index of the
*idle* slot at which its counter reaches zero. Busy periods simply do not
advance the idle-slot counter, which reproduces the freeze semantics while
letting the engine jump straight from one transmission attempt to the next.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class MacConfig:
    slot_us: int = 320          # unit backoff period
    data_tx_us: int = 4000      # 125-byte update at 250 kbps
    ack_tx_us: int = 1000       # TL ACK on the dedicated return channel
    max_retries: int = 7
    min_be: int = 3
    max_be: int = 5

    def __post_init__(self):
        if self.slot_us <= 0 or self.data_tx_us <= 0 or self.ack_tx_us <= 0:
            raise ConfigurationError("all MAC durations must be positive")
        if not (0 <= self.min_be <= self.max_be):
            raise ConfigurationError("need 0 <= min_be <= max_be")
        if self.max_retries < 0:
            raise ConfigurationError("max_retries must be >= 0")


@dataclass
class UpdatePacket:
    loop_id: int
    seq: int
    gen_step: int
    payload: object            # sampled state (float for scalar loops)
    admit_time_us: int
    size_bytes: int = 125
    retransmit: bool = False


def draw_backoff(rng: np.random.Generator, be: int) -> int:
    """Uniform integer in [0, 2^be - 1]."""
    return int(rng.integers(0, 1 << be))


@dataclass
class MacNodeState:
    queue: deque = field(default_factory=deque)
    be: int = 3
    retry_count: int = 0
    # Idle-slot index at which the head packet attempts; None when the node
    # is not contending (empty queue or currently transmitting).
    attempt_slot: int | None = None


class CsmaMac:
    """Shared channel plus one MAC node per loop."""

    def __init__(self, cfg: MacConfig, n_loops: int, backoff_rngs):
        self.cfg = cfg
        self.nodes = [MacNodeState(be=cfg.min_be) for _ in range(n_loops)]
        self._rngs = list(backoff_rngs)
        if len(self._rngs) != n_loops:
            raise ConfigurationError("need one backoff stream per loop")
        self.busy = False
        self.busy_until_us = 0
        self._tx_loops: list[int] = []
        # Mapping between real grid indices and idle-slot indices: while the
        # channel is idle, grid (sync_grid + d) is idle slot (sync_slot + d).
        self._sync_grid = 0
        self._sync_slot = 0
        self._attempt_grid = 0      # grid index of the in-progress attempt
        self._resume_slot = 0       # idle-slot index of first post-busy boundary

    # -- grid helpers ------------------------------------------------------

    def _grid_at_or_after(self, t_us: int) -> int:
        return -((-t_us) // self.cfg.slot_us)

    def _slot_of_time(self, t_us: int) -> int:
        return self._sync_slot + (self._grid_at_or_after(t_us) - self._sync_grid)

    def _time_of_slot(self, slot: int) -> int:
        return (self._sync_grid + (slot - self._sync_slot)) * self.cfg.slot_us

    # -- public queries ----------------------------------------------------

    def next_attempt_time(self) -> int | None:
        """Time of the next transmission attempt, or None (busy / nobody)."""
        if self.busy:
            return None
        targets = [n.attempt_slot for n in self.nodes if n.attempt_slot is not None]
        if not targets:
            return None
        return self._time_of_slot(min(targets))

    def has_backlog(self) -> bool:
        return self.busy or any(n.queue for n in self.nodes)

    def queue_len(self, loop_id: int) -> int:
        return len(self.nodes[loop_id].queue)

    # -- state transitions -------------------------------------------------

    def _start_contention(self, loop_id: int, now_us: int) -> None:
        node = self.nodes[loop_id]
        node.retry_count = 0
        node.be = self.cfg.min_be
        self._set_backoff(loop_id, now_us)

    def _set_backoff(self, loop_id: int, now_us: int) -> None:
        node = self.nodes[loop_id]
        count = draw_backoff(self._rngs[loop_id], node.be)
        join = self._resume_slot if self.busy else self._slot_of_time(now_us)
        node.attempt_slot = join + count

    def enqueue(self, loop_id: int, pkt: UpdatePacket, now_us: int) -> int | None:
        """Append to the loop's FCFS queue; start channel access if it was idle.

        Returns the (possibly new) next attempt time for the engine to
        schedule, or None if no attempt is schedulable right now.
        """
        node = self.nodes[loop_id]
        node.queue.append(pkt)
        if len(node.queue) == 1 and loop_id not in self._tx_loops:
            self._start_contention(loop_id, now_us)
        return self.next_attempt_time()

    def fire_attempt(self, now_us: int):
        """Process the attempt boundary at `now_us`.

        Returns None for stale events, otherwise ("tx", [loops]) after
        marking the channel busy; a single loop means a clean transmission,
        several mean a collision. The engine schedules the matching
        completion at now + data_tx_us.
        """
        if self.busy or self.next_attempt_time() != now_us:
            return None
        slot_now = self._slot_of_time(now_us)
        attempters = sorted(
            i for i, n in enumerate(self.nodes)
            if n.attempt_slot is not None and n.attempt_slot == slot_now
        )
        if not attempters:
            return None
        for i in attempters:
            self.nodes[i].attempt_slot = None
        self.busy = True
        self.busy_until_us = now_us + self.cfg.data_tx_us
        self._tx_loops = attempters
        self._attempt_grid = self._grid_at_or_after(now_us)
        self._resume_slot = slot_now + 1
        return ("tx", attempters)

    def complete_tx(self, now_us: int):
        """Finish the transmission occupying the channel.

        Returns (delivered_packet_or_None, [dropped_packets], next_attempt_time).
        """
        self.busy = False
        self._sync_grid = max(self._grid_at_or_after(now_us), self._attempt_grid + 1)
        self._sync_slot = self._resume_slot
        tx_loops, self._tx_loops = self._tx_loops, []

        delivered = None
        dropped: list[UpdatePacket] = []
        if len(tx_loops) == 1:
            loop_id = tx_loops[0]
            node = self.nodes[loop_id]
            delivered = node.queue.popleft()
            node.retry_count = 0
            node.be = self.cfg.min_be
            if node.queue:
                self._set_backoff(loop_id, now_us)
        else:
            for loop_id in tx_loops:
                node = self.nodes[loop_id]
                if node.retry_count >= self.cfg.max_retries:
                    dropped.append(node.queue.popleft())
                    node.retry_count = 0
                    node.be = self.cfg.min_be
                    if node.queue:
                        self._set_backoff(loop_id, now_us)
                else:
                    node.retry_count += 1
                    node.be = min(node.be + 1, self.cfg.max_be)
                    self._set_backoff(loop_id, now_us)
        return delivered, dropped, self.next_attempt_time()


def ack_arrival_time(deliver_time_us: int, cfg: MacConfig) -> int:
    """TL ACK arrival on the dedicated, contention-free return channel."""
    return deliver_time_us + cfg.ack_tx_us
