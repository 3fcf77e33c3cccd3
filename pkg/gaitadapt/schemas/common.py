"""Common schemas and enums shared across the application."""

from enum import Enum


class _CaseInsensitiveEnum(str, Enum):
    """String enum that also accepts differently-cased values."""

    @classmethod
    def _missing_(cls, value: object) -> "_CaseInsensitiveEnum | None":
        if isinstance(value, str):
            lowered = value.strip().lower()
            for member in cls:
                if member.value.lower() == lowered:
                    return member
        return None


class Condition(_CaseInsensitiveEnum):
    """Walking condition of a sequence."""

    NM = "NM"  # normal walking
    BG = "BG"  # carrying a bag
    CL = "CL"  # wearing a coat
    OTHER = "OTHER"


class ProtocolTag(_CaseInsensitiveEnum):
    """Evaluation protocol a step dataset belongs to."""

    INNER = "inner"
    CROSS_INDEPENDENT = "cross-indep"
    CROSS_DEPENDENT = "cross-dep"
    UNSEEN = "unseen"


class MethodTag(_CaseInsensitiveEnum):
    """Continual learning method driving the objective."""

    SFT = "SFT"
    LWF = "LwF"
    SPD = "SPD"
    CRL = "CRL"
    GAITADAPTER = "GaitAdapter"
    BASE = "Base"
    BASE_GPAK = "Base+GPAK"
    BASE_EDSN = "Base+EDSN"


class GraphType(_CaseInsensitiveEnum):
    """Topology of the knowledge transfer graph."""

    BIPARTITE = "bipartite"
    FULL = "full"  # Fully connected, self-loops excluded


class TripletMining(_CaseInsensitiveEnum):
    """Triplet selection rule."""

    BATCH_HARD = "batch_hard"
    ALL = "all"


class Reduction(_CaseInsensitiveEnum):
    """Reduction applied to the negative-pair distillation sum."""

    SUM = "sum"
    MEAN = "mean"


class MilestoneUnit(_CaseInsensitiveEnum):
    """What learning rate milestones count."""

    STEP = "step"
    ITERATION = "iteration"
