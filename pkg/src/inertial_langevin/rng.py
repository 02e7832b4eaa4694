"""Counter-based normal draws keyed by (seed, chain, step, slot).

Every standard normal used by the ensemble runner is a pure function of the
master seed, the chain index, the step index and the coordinate slot, so a
chain's trajectory does not depend on how many other chains run or on how the
chains are sharded across workers.

The bit source is Philox4x32-10 (Salmon et al., "Parallel random numbers: as
easy as 1, 2, 3"), vectorised over numpy arrays.  Each 128-bit block yields
two 64-bit words which Box-Muller turns into two normals.
"""

from __future__ import annotations

import threading

import numba as nb

nb.config.THREADING_LAYER = "workqueue"
import numpy as np

# the workqueue layer aborts on concurrent launches from several Python threads
_KERNEL_LOCK = threading.Lock()

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# Stream tags, stored in the last counter word.
STREAM_STEP = 0
STREAM_INIT_POSITION = 1
STREAM_INIT_VELOCITY = 2
STREAM_AUX = 3


def philox4x32(counter, key, rounds=10):
    """Philox4x32 block function.

    ``counter`` is a sequence of four uint32-valued arrays and ``key`` a
    sequence of two; all broadcast against each other.  Returns four uint64
    arrays holding 32-bit outputs.
    """
    c0, c1, c2, c3 = (np.asarray(c, dtype=np.uint64) & _MASK for c in counter)
    k0, k1 = (np.asarray(k, dtype=np.uint64) & _MASK for k in key)
    c0, c1, c2, c3, k0, k1 = np.broadcast_arrays(c0, c1, c2, c3, k0, k1)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _S32) ^ c1 ^ k0,
            p1 & _MASK,
            (p0 >> _S32) ^ c3 ^ k1,
            p0 & _MASK,
        )
    return c0, c1, c2, c3


def _to_unit(hi, lo):
    # 53-bit uniform in the open interval (0, 1)
    bits = ((hi << _S32) | lo) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True, parallel=True)
def _normals_kernel(seed, chains, step, n_slots, stream):
    n = chains.shape[0]
    out = np.empty((n, n_slots))
    n_blocks = (n_slots + 1) // 2
    mask = np.uint64(0xFFFFFFFF)
    s32 = np.uint64(32)
    scale = 1.0 / 9007199254740992.0
    for i in nb.prange(n):
        for b in range(n_blocks):
            c0 = np.uint64(step) & mask
            c1 = (np.uint64(step) >> s32) & mask
            c2 = np.uint64(b)
            c3 = np.uint64(stream)
            k0 = np.uint64(chains[i]) & mask
            k1 = np.uint64(seed) & mask
            for r in range(10):
                if r > 0:
                    k0 = (k0 + np.uint64(0x9E3779B9)) & mask
                    k1 = (k1 + np.uint64(0xBB67AE85)) & mask
                p0 = np.uint64(0xD2511F53) * c0
                p1 = np.uint64(0xCD9E8D57) * c2
                n0 = (p1 >> s32) ^ c1 ^ k0
                n2 = (p0 >> s32) ^ c3 ^ k1
                c1 = p1 & mask
                c3 = p0 & mask
                c0 = n0
                c2 = n2
            u1 = (np.float64(((c0 << s32) | c1) >> np.uint64(11)) + 0.5) * scale
            u2 = (np.float64(((c2 << s32) | c3) >> np.uint64(11)) + 0.5) * scale
            rad = np.sqrt(-2.0 * np.log(u1))
            ang = 2.0 * np.pi * u2
            j = 2 * b
            out[i, j] = rad * np.cos(ang)
            if j + 1 < n_slots:
                out[i, j + 1] = rad * np.sin(ang)
    return out


def normals(seed, chains, step, n_slots, stream=STREAM_STEP):
    """Standard normals of shape ``(len(chains), n_slots)``.

    Slot ``j`` of chain ``c`` at ``step`` is the same number no matter which
    other chains or slots are requested alongside it.
    """
    chains = np.ascontiguousarray(chains, dtype=np.uint64).reshape(-1)
    with _KERNEL_LOCK:
        return _normals_kernel(
            np.uint64(int(seed) & 0xFFFFFFFF), chains, np.uint64(int(step)), int(n_slots),
            np.uint64(stream),
        )


def normals_reference(seed, chains, step, n_slots, stream=STREAM_STEP):
    """Pure-numpy twin of :func:`normals`, used to check the compiled kernel."""
    chains = np.asarray(chains, dtype=np.uint64).reshape(-1, 1)
    n_blocks = (n_slots + 1) // 2
    block = np.arange(n_blocks, dtype=np.uint64).reshape(1, -1)
    step = int(step)
    seed = int(seed)
    r0, r1, r2, r3 = philox4x32(
        (step & 0xFFFFFFFF, (step >> 32) & 0xFFFFFFFF, block, stream),
        (chains, seed & 0xFFFFFFFF),
    )
    u1 = _to_unit(r0, r1)
    u2 = _to_unit(r2, r3)
    rad = np.sqrt(-2.0 * np.log(u1))
    ang = 2.0 * np.pi * u2
    out = np.empty((chains.shape[0], 2 * n_blocks))
    out[:, 0::2] = rad * np.cos(ang)
    out[:, 1::2] = rad * np.sin(ang)
    return out[:, :n_slots]


class NoiseStream:
    """Per-step noise for a fixed set of chains.

    ``NoiseStream(seed, n_chains)(k, n_slots)`` gives the ``(n_chains, n_slots)``
    block of step ``k``.  A chain subset can be selected with ``chain_ids``,
    which is how sharded workers reproduce the serial run.
    """

    def __init__(self, seed, n_chains=None, chain_ids=None, stream=STREAM_STEP):
        if chain_ids is None:
            chain_ids = np.arange(n_chains)
        self.seed = int(seed)
        self.chain_ids = np.asarray(chain_ids, dtype=np.uint64)
        self.stream = stream

    def __call__(self, step, n_slots):
        return normals(self.seed, self.chain_ids, step, n_slots, self.stream)
