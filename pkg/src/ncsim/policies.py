"""Transport-layer admission policies.

Each loop owns one policy instance. The engine asks `admit()` exactly once
per sampling step; a rejected sample is discarded forever. Policies that
use TL ACKs track their outstanding packets and react to `on_ack` /
`on_timeout`; those are the only network feedback a policy ever sees.
"""
from __future__ import annotations

from .errors import ConfigurationError

ACK_TIMEOUT_US = 100_000        # default ACK timeout for ZW / ZW-ET / AT / ACP

# TCP Tahoe retransmission timer (Jacobson estimator, Karn's rule).
TCP_RTO_MIN_US = 50_000
TCP_RTO_MAX_US = 10_000_000
TCP_RTO_INITIAL_US = 1_000_000

# Adaptive-threshold defaults: multiplicative step 1.5, decrease after 10
# consecutive timely ACKs, start at the best fixed threshold for N=12.
AT_FACTOR = 1.5
AT_STREAK_LEN = 10
AT_LAMBDA0 = 50.0
AT_LAMBDA_MIN = 0.1
AT_LAMBDA_MAX = 1e4

ACP_GAMMA = 0.25
ACP_RATE_MIN_HZ = 1.0
ACP_RATE_INIT_HZ = 50.0
ACP_EPOCH_FLOOR_US = 100_000
ACP_EPOCH_SRTT_MULT = 10

INC, DEC = 1, -1


class _Entry:
    __slots__ = ("send_time_us", "gen_time_us", "retransmitted")

    def __init__(self, send_time_us, gen_time_us, retransmitted=False):
        self.send_time_us = send_time_us
        self.gen_time_us = gen_time_us
        self.retransmitted = retransmitted


class OutstandingSet:
    """Admitted-but-unresolved packets; each entry leaves exactly once."""

    def __init__(self):
        self._entries: dict[int, _Entry] = {}

    def add(self, seq, send_time_us, gen_time_us, retransmitted=False):
        self._entries[seq] = _Entry(send_time_us, gen_time_us, retransmitted)

    def pop(self, seq) -> _Entry | None:
        return self._entries.pop(seq, None)

    def __contains__(self, seq):
        return seq in self._entries

    def __len__(self):
        return len(self._entries)


class TransportPolicy:
    """Base admission policy: what subclasses override."""

    name = "base"
    uses_ack = False

    def __init__(self):
        self.outstanding = OutstandingSet()

    @property
    def n_out(self) -> int:
        return len(self.outstanding)

    def admit(self, x_mag: float, k: int, now_us: int) -> bool:
        raise NotImplementedError

    def register_sent(self, seq: int, now_us: int, gen_time_us: int,
                      retransmitted: bool = False) -> int | None:
        """Record an outstanding packet; return its ACK deadline (or None)."""
        if not self.uses_ack:
            return None
        self.outstanding.add(seq, now_us, gen_time_us, retransmitted)
        return now_us + self.timeout_us(seq)

    def timeout_us(self, seq: int) -> int:
        return ACK_TIMEOUT_US

    def on_ack(self, seq: int, now_us: int) -> None:
        self.outstanding.pop(seq)

    def on_timeout(self, seq: int, now_us: int) -> bool:
        """Resolve an expired entry; True asks the engine to retransmit."""
        self.outstanding.pop(seq)
        return False

    def epoch_due_us(self, now_us: int) -> int | None:
        """Next periodic self-adaptation instant (rate policies only)."""
        return None


class UdpPolicy(TransportPolicy):
    """Admit every sample, no feedback, no retransmissions."""

    name = "udp"

    def admit(self, x_mag, k, now_us):
        return True


class TcpTahoePolicy(TransportPolicy):
    """Window-based admission with slow start and timeout-driven Tahoe reset.

    TL ACKs carry sequence numbers, so losses surface as timeouts and the
    Tahoe timeout path (ssthresh = cwnd/2, cwnd = 1, retransmit) is the
    whole congestion response; there is no duplicate-ACK fast retransmit.
    """

    name = "tcp"
    uses_ack = True

    def __init__(self):
        super().__init__()
        self.cwnd = 1.0
        self.ssthresh = float("inf")
        self.srtt_us = None
        self.rttvar_us = 0.0
        self.rto_us = TCP_RTO_INITIAL_US

    def admit(self, x_mag, k, now_us):
        return self.n_out < self.cwnd

    def timeout_us(self, seq):
        return int(self.rto_us)

    def on_ack(self, seq, now_us):
        entry = self.outstanding.pop(seq)
        if entry is None:
            return
        if not entry.retransmitted:
            # Karn's rule: only first-transmission ACKs sample the RTT.
            rtt = now_us - entry.send_time_us
            if self.srtt_us is None:
                self.srtt_us = float(rtt)
                self.rttvar_us = rtt / 2.0
            else:
                self.rttvar_us = 0.75 * self.rttvar_us + 0.25 * abs(self.srtt_us - rtt)
                self.srtt_us = 0.875 * self.srtt_us + 0.125 * rtt
            self.rto_us = min(max(self.srtt_us + 4.0 * self.rttvar_us, TCP_RTO_MIN_US),
                              TCP_RTO_MAX_US)
        if self.cwnd < self.ssthresh:
            self.cwnd += 1.0
        else:
            self.cwnd += 1.0 / self.cwnd

    def on_timeout(self, seq, now_us):
        if self.outstanding.pop(seq) is None:
            return False
        self.ssthresh = max(int(self.cwnd) // 2, 1)
        self.cwnd = 1.0
        self.rto_us = min(self.rto_us * 2, TCP_RTO_MAX_US)
        return True


class ZeroWaitPolicy(TransportPolicy):
    """One packet in flight at most; timeouts discard, never retransmit."""

    name = "zw"
    uses_ack = True

    def __init__(self, timeout_us=ACK_TIMEOUT_US):
        super().__init__()
        self._timeout_us = int(timeout_us)

    def admit(self, x_mag, k, now_us):
        return self.n_out == 0

    def timeout_us(self, seq):
        return self._timeout_us


class EventTriggerPolicy(TransportPolicy):
    """Admit only samples whose magnitude reaches the threshold."""

    name = "et"

    def __init__(self, lam: float):
        super().__init__()
        if lam < 0.0:
            raise ConfigurationError("ET threshold must be >= 0")
        self.lam = float(lam)

    def admit(self, x_mag, k, now_us):
        return x_mag >= self.lam


class ZwEtPolicy(ZeroWaitPolicy):
    """Threshold predicate AND no outstanding packet."""

    name = "zwet"

    def __init__(self, lam: float, timeout_us=ACK_TIMEOUT_US):
        super().__init__(timeout_us=timeout_us)
        if lam < 0.0:
            raise ConfigurationError("threshold must be >= 0")
        self.lam = float(lam)

    def admit(self, x_mag, k, now_us):
        return x_mag >= self.lam and self.n_out == 0


class AdaptiveThresholdPolicy(ZwEtPolicy):
    """ZW-ET whose threshold reacts to locally observed congestion.

    An ACK timeout multiplies the threshold by 1.5; ten consecutive timely
    ACKs divide it by 1.5. The threshold is stored as an exponent so that
    after any event sequence lam == clamp(lam0 * 1.5^(timeouts - streaks)).
    """

    name = "at"

    def __init__(self, lam0: float = AT_LAMBDA0, lam_min: float = AT_LAMBDA_MIN,
                 lam_max: float = AT_LAMBDA_MAX, timeout_us=ACK_TIMEOUT_US):
        super().__init__(lam=lam0, timeout_us=timeout_us)
        if not (0 < lam_min <= lam0 <= lam_max):
            raise ConfigurationError("need 0 < lam_min <= lam0 <= lam_max")
        self.lam0 = float(lam0)
        self.lam_min = float(lam_min)
        self.lam_max = float(lam_max)
        self.exponent = 0
        self.success_streak = 0

    @property
    def lam(self) -> float:
        raw = self.lam0 * AT_FACTOR ** self.exponent
        return min(max(raw, self.lam_min), self.lam_max)

    @lam.setter
    def lam(self, value):
        # Base-class constructor assigns the initial threshold; the live
        # value is always derived from the exponent.
        pass

    def on_ack(self, seq, now_us):
        if self.outstanding.pop(seq) is None:
            return
        self.success_streak += 1
        if self.success_streak >= AT_STREAK_LEN:
            self.exponent -= 1
            self.success_streak = 0

    def on_timeout(self, seq, now_us):
        if self.outstanding.pop(seq) is None:
            return False
        self.exponent += 1
        self.success_streak = 0
        return False


class AcpPolicy(TransportPolicy):
    """Rate-steering policy driven by the estimated age at the monitor.

    Simplified to the epoch rule: if the previous rate action coincided
    with an age decrease, repeat it, otherwise reverse it (multiplicative
    step 1+gamma). The age estimate treats ACKs as instant, holding the
    generation time of the freshest ACKed update. Reported in output as
    "acp-simplified".
    """

    name = "acp"
    uses_ack = True

    def __init__(self, rate_max_hz: float, rate_init_hz: float = ACP_RATE_INIT_HZ,
                 rate_min_hz: float = ACP_RATE_MIN_HZ, gamma: float = ACP_GAMMA,
                 timeout_us=ACK_TIMEOUT_US):
        super().__init__()
        if not (0 < rate_min_hz <= rate_init_hz <= rate_max_hz):
            raise ConfigurationError("need 0 < rate_min <= rate_init <= rate_max")
        self.rate_hz = float(rate_init_hz)
        self.rate_min_hz = float(rate_min_hz)
        self.rate_max_hz = float(rate_max_hz)
        self.gamma = float(gamma)
        self._timeout_us = int(timeout_us)
        self._next_token_us = 0.0
        self.srtt_us = None
        self.prev_action = INC
        self.prev_epoch_age_us = None
        # Piecewise-linear age integral over the running epoch.
        self._nu_time_us = 0
        self._acc_from_us = 0
        self._age_integral = 0.0
        self._acked_in_epoch = 0
        self._epoch_start_us = 0

    def admit(self, x_mag, k, now_us):
        if now_us + 1e-9 >= self._next_token_us:
            self._next_token_us = now_us + 1e6 / self.rate_hz
            return True
        return False

    def timeout_us(self, seq):
        return self._timeout_us

    def _accrue_age(self, now_us):
        if now_us > self._acc_from_us:
            lo = self._acc_from_us - self._nu_time_us
            hi = now_us - self._nu_time_us
            self._age_integral += (now_us - self._acc_from_us) * (lo + hi) / 2.0
            self._acc_from_us = now_us

    def on_ack(self, seq, now_us):
        entry = self.outstanding.pop(seq)
        if entry is None:
            return
        rtt = now_us - entry.send_time_us
        if self.srtt_us is None:
            self.srtt_us = float(rtt)
        else:
            self.srtt_us = 0.875 * self.srtt_us + 0.125 * rtt
        self._acked_in_epoch += 1
        if entry.gen_time_us > self._nu_time_us:
            self._accrue_age(now_us)
            self._nu_time_us = entry.gen_time_us

    def epoch_len_us(self) -> int:
        srtt = self.srtt_us if self.srtt_us is not None else 0.0
        return int(max(ACP_EPOCH_SRTT_MULT * srtt, ACP_EPOCH_FLOOR_US))

    def epoch_due_us(self, now_us):
        return now_us + self.epoch_len_us()

    def epoch_update(self, now_us) -> float:
        """Close the current epoch, pick INC or DEC, return the new rate."""
        self._accrue_age(now_us)
        elapsed = max(now_us - self._epoch_start_us, 1)
        mean_age = self._age_integral / elapsed
        if self._acked_in_epoch == 0:
            action = DEC
        elif self.prev_epoch_age_us is None or mean_age < self.prev_epoch_age_us:
            action = self.prev_action
        else:
            action = -self.prev_action
        if action == INC:
            self.rate_hz *= 1.0 + self.gamma
        else:
            self.rate_hz /= 1.0 + self.gamma
        self.rate_hz = min(max(self.rate_hz, self.rate_min_hz), self.rate_max_hz)
        self.prev_action = action
        self.prev_epoch_age_us = mean_age
        self._age_integral = 0.0
        self._acked_in_epoch = 0
        self._epoch_start_us = now_us
        return self.rate_hz


POLICY_NAMES = ("udp", "tcp", "zw", "acp", "et", "zwet", "at")


def make_policy(name: str, *, lam: float = 15.0, timeout_us: int = ACK_TIMEOUT_US,
                rate_max_hz: float = 100.0, rate_init_hz: float = ACP_RATE_INIT_HZ,
                acp_gamma: float = ACP_GAMMA, at_lambda0: float = AT_LAMBDA0,
                at_lambda_min: float = AT_LAMBDA_MIN,
                at_lambda_max: float = AT_LAMBDA_MAX) -> TransportPolicy:
    """Build one policy instance for one loop."""
    if name == "udp":
        return UdpPolicy()
    if name == "tcp":
        return TcpTahoePolicy()
    if name == "zw":
        return ZeroWaitPolicy(timeout_us=timeout_us)
    if name == "acp":
        return AcpPolicy(rate_max_hz=rate_max_hz, rate_init_hz=rate_init_hz,
                         gamma=acp_gamma, timeout_us=timeout_us)
    if name == "et":
        return EventTriggerPolicy(lam=lam)
    if name == "zwet":
        return ZwEtPolicy(lam=lam, timeout_us=timeout_us)
    if name == "at":
        return AdaptiveThresholdPolicy(lam0=at_lambda0, lam_min=at_lambda_min,
                                       lam_max=at_lambda_max, timeout_us=timeout_us)
    raise ConfigurationError(f"unknown policy {name!r}, expected one of {POLICY_NAMES}")
