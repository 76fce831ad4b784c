"""Exception hierarchy; the CLI maps these onto stable exit codes."""


class GricError(Exception):
    """Base class for all codec errors."""


class ConfigError(GricError):
    """Layer/shape/parameter configuration is inconsistent."""


class InputError(GricError):
    """Input image is missing or malformed (CLI exit 2)."""


class WeightsError(GricError):
    """Weights file is missing, corrupt, or hash-mismatched (CLI exit 3)."""


class StreamError(GricError):
    """Bitstream container is corrupt, truncated, or checksum fails (CLI exit 4)."""
