"""Counter-based Gaussian noise for stochastic trajectory integration.

Every increment is a pure function of the tuple (base_seed, trajectory_id,
step, channel).  We evaluate a keyed counter bijection (Philox-2x64, 10
rounds) at an explicit counter built from that tuple; no state is carried
between calls, so any single increment can be regenerated in isolation.
That is what makes common-refinement tests, restarts, and thread-scheduled
ensembles see bit-identical noise.

Counter layout:

    key        = base_seed                    (64-bit)
    counter[0] = trajectory_id                (64-bit)
    counter[1] = (step << 32) | pair_index    (step < 2**32)

Each Philox block yields two 64-bit words, covering channels (2*pair_index,
2*pair_index + 1).  Words become uniforms on (0, 1) from their top 53 bits
and normals via the inverse normal CDF; there is no rejection loop whose
variable consumption could couple neighbouring draws.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_M0 = np.uint64(0xD2B74407B1CE6E93)  # Philox2x64 round multiplier
_W0 = np.uint64(0x9E3779B97F4A7C15)  # key schedule increment (golden ratio)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

_MAX_STEP = 1 << 32

# Counter word 0 is the trajectory id for path noise.  Auxiliary consumers
# (initial-state samplers) tag word 0 with a high domain constant so they can
# never collide with trajectory counters at realistic ensemble sizes.
SAMPLER_DOMAIN = np.uint64(0xA5) << np.uint64(56)


def _mulhilo(a, b):
    """Full 128-bit product of uint64 arrays, as (high, low) uint64 words."""
    lo = a * b
    ah = a >> _SHIFT32
    al = a & _MASK32
    bh = b >> _SHIFT32
    bl = b & _MASK32
    t = ah * bl + ((al * bl) >> _SHIFT32)
    u = al * bh + (t & _MASK32)
    hi = ah * bh + (t >> _SHIFT32) + (u >> _SHIFT32)
    return hi, lo


def philox2x64(c0, c1, key, rounds: int = 10):
    """Apply the Philox-2x64 bijection to counters (c0, c1) under ``key``.

    Arrays broadcast; returns two uint64 arrays (the output words).
    """
    x0 = np.asarray(c0, dtype=np.uint64)
    x1 = np.asarray(c1, dtype=np.uint64)
    x0, x1 = np.broadcast_arrays(x0, x1)
    shape = x0.shape
    # keep everything >= 1-d: 0-d arrays take numpy's warning-happy scalar path
    x0 = np.atleast_1d(x0).copy()
    x1 = np.atleast_1d(x1).copy()
    # precomputed key schedule; 1-d array arithmetic wraps without warnings
    keys = np.uint64(key) + _W0 * np.arange(rounds, dtype=np.uint64)
    for k in keys:
        hi, lo = _mulhilo(x0, _M0)
        x0 = hi ^ k ^ x1
        x1 = lo
    return x0.reshape(shape), x1.reshape(shape)


def bits_to_unit(words):
    """Map uint64 words to doubles in the open interval (0, 1).

    Uses the top 52 bits, offset by half a spacing: the result lies in
    [2^-53, 1 - 2^-53] with every step of the arithmetic exact, so the
    endpoints 0 and 1 are unreachable (a 53-bit mapping rounds its top
    value to 1.0, which the inverse normal CDF maps to inf).
    """
    return (words >> np.uint64(12)) * (2.0 ** -52) + 2.0 ** -53


def counter_uniforms(key, c0, c1_start, count: int):
    """``count`` uniforms on (0,1) from consecutive counters at fixed c0."""
    n_blocks = (count + 1) // 2
    c1 = np.uint64(c1_start) + np.arange(n_blocks, dtype=np.uint64)
    w0, w1 = philox2x64(np.uint64(c0), c1, key)
    words = np.empty(2 * n_blocks, dtype=np.uint64)
    words[0::2] = w0
    words[1::2] = w1
    return bits_to_unit(words[:count])


class NoiseStream:
    """Addressable standard-normal increments for one trajectory.

    ``normals(step, n_channels)`` returns the raw N(0,1) draws for the given
    step; integrators scale them by sqrt(dt) themselves.  Instances hold only
    the key material, never a stream position.
    """

    def __init__(self, base_seed: int, trajectory_id: int):
        self.base_seed = int(base_seed)
        self.trajectory_id = int(trajectory_id)
        self._key = np.uint64(self.base_seed & 0xFFFFFFFFFFFFFFFF)
        self._c0 = np.uint64(self.trajectory_id & 0xFFFFFFFFFFFFFFFF)

    def normals(self, step: int, n_channels: int) -> np.ndarray:
        """N(0,1) increments for every channel of one step, shape (K,)."""
        return self.normals_block(step, 1, n_channels)[0]

    def normals_block(self, step_start: int, n_steps: int, n_channels: int) -> np.ndarray:
        """Increments for ``n_steps`` consecutive steps, shape (S, K).

        Row s of the result is exactly ``normals(step_start + s, K)``.
        """
        if step_start < 0 or step_start + n_steps > _MAX_STEP:
            raise ValueError(f"step index out of range [0, 2**32): {step_start}+{n_steps}")
        if n_channels < 1:
            raise ValueError("n_channels must be >= 1")
        n_blocks = (n_channels + 1) // 2
        steps = np.arange(step_start, step_start + n_steps, dtype=np.uint64)
        blocks = np.arange(n_blocks, dtype=np.uint64)
        c1 = (steps[:, None] << _SHIFT32) | blocks[None, :]
        w0, w1 = philox2x64(self._c0, c1, self._key)
        words = np.empty((n_steps, 2 * n_blocks), dtype=np.uint64)
        words[:, 0::2] = w0
        words[:, 1::2] = w1
        return ndtri(bits_to_unit(words[:, :n_channels]))


class CoarsenedNoise:
    """View of a fine-grid stream as increments on a coarser grid.

    Coarse step s aggregates fine steps [factor*s, factor*(s+1)); the sum is
    rescaled by 1/sqrt(factor) so the result is again standard normal.  Used
    by refinement tests that must drive dt and dt/2 with a common Brownian
    path.
    """

    def __init__(self, fine: NoiseStream, factor: int = 2):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.fine = fine
        self.factor = int(factor)

    def normals(self, step: int, n_channels: int) -> np.ndarray:
        block = self.fine.normals_block(self.factor * step, self.factor, n_channels)
        return block.sum(axis=0) / np.sqrt(self.factor)

    def normals_block(self, step_start: int, n_steps: int, n_channels: int) -> np.ndarray:
        block = self.fine.normals_block(
            self.factor * step_start, self.factor * n_steps, n_channels
        )
        shaped = block.reshape(n_steps, self.factor, n_channels)
        return shaped.sum(axis=1) / np.sqrt(self.factor)


def sampler_uniform(seed: int, index: int = 0) -> float:
    """One uniform on (0,1) for initial-state sampling, keyed by ``seed``.

    Lives in its own counter domain so it can never replay trajectory noise.
    """
    u = counter_uniforms(
        np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
        SAMPLER_DOMAIN,
        np.uint64(index),
        1,
    )
    return float(u[0])
