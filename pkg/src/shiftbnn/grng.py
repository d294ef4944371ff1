"""Central-limit-theorem Gaussian generator over a reversible LFSR.

Counting the 1-bits of an n-bit register whose bits are i.i.d. fair coins
gives B(n, 0.5) ~ N(n/2, n/4); standardizing the count yields a unit
Gaussian surrogate.  Because the register supports exact reverse
shifting, every variable drawn forward can later be retrieved backward
in reverse order instead of being stored.

The count is tracked incrementally: a forward shift changes the popcount
by head_in - tail_out, a reverse shift by tail_in - head_out, so no
re-count of the register is ever needed (``popcount_state`` stays the
independent oracle in the tests).
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass

import numpy as np

from .lfsr import (
    LfsrState,
    TapSet,
    extend_backward,
    extend_forward,
    new_lfsr,
    popcount_state,
    shift_forward,
    shift_reverse,
    state_to_window,
    window_to_state,
)


class UnderflowBeforeSeed(RuntimeError):
    """More retrievals than generations since init; ledger accounting bug."""


class GrngMode(enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"
    IDLE = "idle"


@dataclass(frozen=True)
class Epsilon:
    """A standardized draw plus the raw 1s count that produced it."""

    value: float
    count: int


def counts_to_eps(counts: np.ndarray, n: int) -> np.ndarray:
    """Standardize raw 1s counts: (count - n/2) / sqrt(n/4)."""
    return (np.asarray(counts, dtype=np.float64) - n / 2.0) / np.sqrt(n / 4.0)


_MASK64 = (1 << 64) - 1


def mix64(x: int) -> int:
    """64-bit avalanche finalizer (murmur3 constants)."""
    x &= _MASK64
    x = ((x ^ (x >> 33)) * 0xFF51AFD7ED558CCD) & _MASK64
    x = ((x ^ (x >> 33)) * 0xC4CEB9FE1A85EC53) & _MASK64
    return x ^ (x >> 33)


def derive_seed(master_seed: int, stream_id: int, width: int) -> int:
    """Deterministic nonzero register seed from (master_seed, stream_id).

    Mixes ``master_seed + stream_id * golden_gamma + j`` for each 64-bit
    word j and concatenates, word 0 in the low bits.
    """
    base = (master_seed + stream_id * 0x9E3779B97F4A7C15) & _MASK64
    words = (width + 63) // 64
    seed = 0
    for j in range(words):
        seed |= mix64((base + j) & _MASK64) << (64 * j)
    seed &= (1 << width) - 1
    if seed == 0:
        seed = 1
    return seed


class GrngStream:
    """One logical stream of Gaussian draws over a reversible LFSR.

    Exclusively owned by one worker at a time; streams for different
    ensemble samples run independently.
    """

    def __init__(self, lfsr: LfsrState, p: float = 0.5):
        self.lfsr = lfsr
        self.n = lfsr.taps.width
        self.p = p
        self.running_sum = popcount_state(lfsr)
        self.mode = GrngMode.IDLE

    # -- single-draw API ----------------------------------------------------

    def _epsilon(self, count: int) -> Epsilon:
        return Epsilon(value=(count - self.n / 2.0) / np.sqrt(self.n / 4.0), count=count)

    def generate_forward(self) -> Epsilon:
        self.mode = GrngMode.FORWARD
        self.lfsr, head_in, tail_out = shift_forward(self.lfsr)
        self.running_sum += head_in - tail_out
        return self._epsilon(self.running_sum)

    def retrieve_backward(self) -> Epsilon:
        if self.lfsr.position <= 0:
            raise UnderflowBeforeSeed(
                f"retrieve at position {self.lfsr.position}: nothing left to retrieve"
            )
        self.mode = GrngMode.BACKWARD
        eps = self._epsilon(self.running_sum)
        self.lfsr, tail_in, head_out = shift_reverse(self.lfsr)
        self.running_sum += tail_in - head_out
        return eps

    def set_mode(self, mode: GrngMode) -> "GrngStream":
        self.mode = mode
        return self

    @property
    def position(self) -> int:
        return self.lfsr.position

    def reset_to(self, state: LfsrState) -> None:
        """Restore a previously captured register state (bookkeeping hook)."""
        self.lfsr = state
        self.running_sum = popcount_state(state)

    # -- block API (bit-identical to repeated single draws) ------------------

    def generate_block(self, k: int) -> np.ndarray:
        """k forward draws at once; returns the raw counts as uint16."""
        if k == 0:
            return np.zeros(0, dtype=np.uint16)
        self.mode = GrngMode.FORWARD
        window = state_to_window(self.lfsr)
        ext = extend_forward(window, k, self.lfsr.taps)
        full = np.concatenate([window, ext])
        csum = np.concatenate([[0], np.cumsum(full, dtype=np.int64)])
        counts = (csum[self.n + 1 : self.n + 1 + k] - csum[1 : 1 + k]).astype(np.uint16)
        self.lfsr = window_to_state(full[k:], self.lfsr.taps, self.lfsr.position + k)
        self.running_sum = int(counts[-1])
        return counts

    def retrieve_block(self, k: int, start_state: LfsrState | None = None) -> np.ndarray:
        """k backward retrievals at once; counts in retrieval (reverse) order.

        With ``start_state`` (a ledger checkpoint of the state k draws
        ago) the block is reproduced by re-shifting forward from the
        checkpoint, which is faster for long blocks; otherwise it runs
        the reverse recurrence directly.  Both give identical counts and
        leave the stream k positions earlier.
        """
        if k == 0:
            return np.zeros(0, dtype=np.uint16)
        if self.lfsr.position - k < 0:
            raise UnderflowBeforeSeed(
                f"retrieve {k} draws at position {self.lfsr.position}"
            )
        self.mode = GrngMode.BACKWARD
        if start_state is not None:
            if start_state.position != self.lfsr.position - k:
                raise UnderflowBeforeSeed(
                    f"checkpoint at {start_state.position}, expected "
                    f"{self.lfsr.position - k}"
                )
            window = state_to_window(start_state)
            ext = extend_forward(window, k, self.lfsr.taps)
            full = np.concatenate([window, ext])
            new_state = start_state
        else:
            window = state_to_window(self.lfsr)
            older = extend_backward(window, k, self.lfsr.taps)
            full = np.concatenate([older, window])
            new_state = window_to_state(
                full[:self.n], self.lfsr.taps, self.lfsr.position - k
            )
        csum = np.concatenate([[0], np.cumsum(full, dtype=np.int64)])
        counts = (csum[self.n + 1 : self.n + 1 + k] - csum[1 : 1 + k]).astype(np.uint16)
        self.lfsr = new_state
        self.running_sum = int(csum[self.n] - csum[0])
        return counts[::-1].copy()


def grng_init(master_seed: int, stream_id: int, taps: TapSet) -> GrngStream:
    seed = derive_seed(master_seed, stream_id, taps.width)
    return GrngStream(new_lfsr(taps.width, taps, seed))


# ---------------------------------------------------------------------------
# "EPSL" debug dump: raw counts, not floats, so cross-strategy comparisons
# are independent of float formatting.
# ---------------------------------------------------------------------------

EPSL_MAGIC = b"EPSL"


def write_epsilon_log(path, n: int, counts: np.ndarray) -> None:
    counts = np.ascontiguousarray(counts, dtype="<u2")
    with open(path, "wb") as f:
        f.write(EPSL_MAGIC)
        f.write(struct.pack("<IIQ", 1, n, counts.size))
        f.write(counts.tobytes())


def read_epsilon_log(path) -> tuple[int, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EPSL_MAGIC:
            raise ValueError(f"bad epsilon log magic: {magic!r}")
        version, n, count = struct.unpack("<IIQ", f.read(16))
        if version != 1:
            raise ValueError(f"unsupported epsilon log version {version}")
        raw = f.read(2 * count)
        if len(raw) != 2 * count:
            raise ValueError("truncated epsilon log")
        return n, np.frombuffer(raw, dtype="<u2").copy()
