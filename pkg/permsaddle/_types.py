from enum import Enum

__all__ = ["ModelKind", "Statistic"]


class ModelKind(Enum):
    KSAMPLE = 1
    TWOSAMPLE_MV = 2


class Statistic(Enum):
    LAMBDA = 1
    KRUSKAL_WALLIS = 2
    ANOVA_SS = 3
    QUADRATIC = 4
