from ._rsmooth import *  # noqa: F401,F403
from ._rsmooth import (
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    IoError,
    __version__,
)
