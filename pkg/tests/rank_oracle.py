"""Sort-based reference for the threshold candidates."""

from fractions import Fraction


def sort_oracle(losses, method):
    """Nearest-rank on an ascending sort, using integer arithmetic for the rank."""
    xs = sorted(float(v) for v in losses)
    n = len(xs)
    if method == "max":
        return xs[-1]
    if method == "mean":
        return float(sum(map(Fraction, xs), Fraction(0)) / n)
    num, den = {"median": (1, 2), "p90": (90, 100), "p99": (99, 100),
                "p99_9": (999, 1000), "p99_99": (9999, 10000)}[method]
    rank = -(-num * n // den)  # ceil without floats
    return xs[min(max(rank, 1), n) - 1]
