"""Counter-based random numbers keyed by (replica key, particle id, step, stream).

Every draw is a pure function of its key tuple, so a replica produces the same
trajectory whether it is simulated alone, inside a batch of replicas, or
resumed from a snapshot.
"""

import numba
import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

STREAM_NORMAL_A = 0
STREAM_NORMAL_B = 1
STREAM_BRANCH = 2


def splitmix64(z: int) -> int:
    z = (z + _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def replica_key(seed: int, replica: int) -> int:
    """64-bit key for replica ``replica`` of a run seeded with ``seed``."""
    return splitmix64(splitmix64(seed & _MASK) ^ splitmix64(replica & _MASK))


def replica_keys(seed: int, first: int, count: int) -> np.ndarray:
    return np.array([replica_key(seed, r) for r in range(first, first + count)],
                    dtype=np.uint64)


@numba.njit(inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


@numba.njit(inline="always")
def _hash(key, pid, step, stream):
    h = _mix(key + (np.uint64(pid) + np.uint64(1)) * np.uint64(_GOLDEN))
    h = _mix(h ^ ((np.uint64(step) * np.uint64(4) + np.uint64(stream) + np.uint64(1))
                  * np.uint64(_M2)))
    return h


@numba.njit(inline="always")
def _to_unit(h):
    # 53 random bits, shifted off zero: result lies in (0, 1)
    return (np.float64(h >> np.uint64(11)) + 0.5) * 1.1102230246251565e-16


@numba.njit(cache=True)
def keyed_uniform(keys, pids, step, stream):
    n = pids.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = _to_unit(_hash(keys[i], pids[i], step, stream))
    return out


@numba.njit(cache=True)
def keyed_normal(keys, pids, step, scale):
    """Box-Muller normals with standard deviation ``scale``."""
    n = pids.shape[0]
    out = np.empty(n)
    two_pi = 2.0 * np.pi
    for i in range(n):
        u1 = _to_unit(_hash(keys[i], pids[i], step, STREAM_NORMAL_A))
        u2 = _to_unit(_hash(keys[i], pids[i], step, STREAM_NORMAL_B))
        out[i] = scale * np.sqrt(-2.0 * np.log(u1)) * np.cos(two_pi * u2)
    return out
