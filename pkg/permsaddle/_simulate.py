from collections import namedtuple

from numpy import arange, asarray, repeat
from numpy.random import Generator

from ._random import DATA, stream_rng

__all__ = [
    "Dataset",
    "data_rng",
    "rank_scores_table1",
    "sample_ksample_exponential",
    "sample_twosample_exponential",
]

Dataset = namedtuple("Dataset", "groups values")


def _labels(prefix: str, sizes):
    names = [f"{prefix}{i + 1}" for i in range(len(sizes))]
    return asarray(repeat(names, sizes))


def data_rng(seed: int) -> Generator:
    """ Generator of the data stream (seed, 2). """
    return stream_rng(seed, DATA)


def rank_scores_table1(n_groups: int = 4, group_size: int = 5) -> Dataset:
    """
    Values 1, …, N laid out in consecutive groups ``g1``, ``g2``, … of equal size.

    With the defaults this is the 4-sample rank design with 𝑛ᵢ = 5 and N = 20.
    """
    assert n_groups >= 2 and group_size >= 1
    N = n_groups * group_size
    return Dataset(
        groups=_labels("g", [group_size] * n_groups),
        values=arange(1, N + 1, dtype=float),
    )


def sample_ksample_exponential(
    n_groups: int, group_size: int, random: Generator
) -> Dataset:
    """
    One sample of unit exponentials split into ``n_groups`` groups of equal size.
    """
    assert n_groups >= 2 and group_size >= 1
    N = n_groups * group_size
    return Dataset(
        groups=_labels("g", [group_size] * n_groups),
        values=random.standard_exponential(N),
    )


def sample_twosample_exponential(n: int, l: int, random: Generator) -> Dataset:
    """
    Two samples of size 𝑛 from the 𝓁-variate distribution with independent unit
    exponential coordinates (mean 𝟏, covariance 𝙸).
    """
    assert n >= 1 and l >= 1
    return Dataset(
        groups=_labels("s", [n, n]),
        values=random.standard_exponential((2 * n, l)),
    )
