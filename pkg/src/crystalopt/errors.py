"""Exception types raised across the package."""


class CrystalError(Exception):
    """Base class for all package errors."""


class CapacityError(CrystalError):
    """A requested point set would exceed the configured site cap."""


class UnsupportedDomainError(CrystalError):
    """Unit decomposition was requested for a domain we cannot tile."""


class SingularConfigurationError(CrystalError):
    """Two particles coincide (distance below the overlap threshold)."""


class TrustRegionError(CrystalError):
    """Deformation gradient outside the region where lattice sums are trusted."""


class TuningError(CrystalError):
    """Equilibrium tuning could not bracket or reach a root."""


class ClassificationError(CrystalError):
    """A site passes the combinatorial regularity test but matches no template."""


class EmbeddingError(CrystalError):
    """Reference-configuration growth hit incompatible local embeddings."""


class PathError(CrystalError):
    """Path enumeration request outside the supported set of distances."""


class InfeasiblePotentialError(CrystalError):
    """The canonical construction cannot meet a localization condition at this alpha."""

    def __init__(self, condition: str, margin: float):
        super().__init__(f"condition {condition} violated (margin {margin:.3e})")
        self.condition = condition
        self.margin = margin
