"""Deterministic seed derivation."""

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed, chaining splitmix64 over the parts.

    ``mix_seed(a, b)`` differs from ``mix_seed(b, a)``, and streams derived
    for different parts are statistically independent for practical purposes.
    """
    h = 0
    for p in parts:
        h = splitmix64(h ^ (int(p) & _MASK))
    return h
