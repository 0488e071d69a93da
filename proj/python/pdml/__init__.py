"""Point-supervised scene parsing with proposal-based metric learning."""

from ._pdml import *  # noqa: F401,F403
from ._pdml import IGNORE, __doc__  # noqa: F401
