"""Exception taxonomy shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration, scene description, or parameter combination."""


class BackendError(RuntimeError):
    """A denoiser/codec/inpaint backend failed or broke its contract."""


class PipelineError(RuntimeError):
    """A pipeline stage failed; message carries the stage context."""
