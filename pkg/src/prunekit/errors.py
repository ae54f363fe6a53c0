"""Exception hierarchy shared across the package."""


class PruneKitError(Exception):
    """Base class for all prunekit data and validation errors."""


class ManifestError(PruneKitError):
    """Malformed or internally inconsistent architecture manifest."""


class ContainerError(PruneKitError):
    """Malformed weight container stream or tensor/shape mismatch."""


class ConfigError(PruneKitError):
    """Invalid configuration value for a scoring or cost operation."""


class PlanError(PruneKitError):
    """Pruning plan that does not fit the graph it is applied to."""
