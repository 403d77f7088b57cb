"""Exception types shared across the pipeline."""


class ConfigError(ValueError):
    """Invalid configuration value or schema violation."""


class DatasetError(ValueError):
    """Malformed dataset file or dataset that violates a precondition."""


class AdaptationError(RuntimeError):
    """Adaptation cannot proceed (e.g. a required class is missing from the source)."""


class EmptyPseudoLabelSetError(AdaptationError):
    """No target example survived confidence filtering; retry with a lower threshold."""

    def __init__(self, tau: float):
        self.tau = tau
        super().__init__(
            f"no pseudo label reached the confidence threshold tau={tau}; "
            f"rerun with a lower tau"
        )
