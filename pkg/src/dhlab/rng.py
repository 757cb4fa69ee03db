"""Counter-based Gaussian increments.

Every Brownian increment is a pure function of ``(seed, replication, step,
stream)``: the Philox key is ``(seed, replication)`` and the 256-bit counter
block with index ``step`` yields the four 64-bit words for the streams
``dB1, dB2, dW1, dW2``.  Any path can therefore be regenerated in isolation,
and batches can be produced in any order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

#: Stream order inside one counter block.
STREAMS = ("dB1", "dB2", "dW1", "dW2")

_MASK64 = (1 << 64) - 1


def _words(seed: int, replication: int, start_step: int, n_steps: int) -> np.ndarray:
    bitgen = np.random.Philox(
        key=[int(seed) & _MASK64, int(replication) & _MASK64], counter=int(start_step)
    )
    return bitgen.random_raw(4 * n_steps).reshape(n_steps, 4)


def standard_normals(seed: int, replication: int, n_steps: int, start_step: int = 0) -> np.ndarray:
    """Array of shape ``(n_steps, 4)`` of iid N(0, 1) draws.

    Words are mapped to the open unit interval with 53-bit resolution and
    pushed through the normal quantile function, so no draw is infinite.
    """
    words = _words(seed, replication, start_step, n_steps)
    u = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def brownian_increments(
    seed: int, replication: int, n_steps: int, dt: float, start_step: int = 0
) -> np.ndarray:
    """Increments over steps of length ``dt``; columns follow :data:`STREAMS`."""
    return standard_normals(seed, replication, n_steps, start_step) * np.sqrt(dt)
