"""
Portable seeded random streams.

Every sampler draws from a PCG64 bit generator seeded through
``numpy.random.SeedSequence(seed, spawn_key=(stream,))``:

=======  ==================================
stream   use
=======  ==================================
0        synthetic trajectory noise
1        synthetic label emission
2        label shuffling in recovery checks
3        random (params, gap) draws for self-checks
=======  ==================================

Uniforms are built directly from the raw 64-bit output as
``((raw >> 11) + 0.5) * 2**-53``, which lies strictly inside (0, 1), and
Gaussians are their inverse normal CDF. Both steps are platform
independent, so fixtures can be regenerated bit-for-bit elsewhere.
"""
import numpy as np
from scipy.special import ndtri

STREAM_TRAJECTORY = 0
STREAM_LABELS = 1
STREAM_SHUFFLE = 2
STREAM_CHECKS = 3


def bit_generator(seed: int, stream: int) -> np.random.PCG64:
    return np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(stream,)))


def uniforms(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


def normals(bitgen: np.random.PCG64, n: int) -> np.ndarray:
    return ndtri(uniforms(bitgen, n))
