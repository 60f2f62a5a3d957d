#
# Copyright (c) 2024 rcrplan developers.
#
# This file is part of `python-rcrplan`
#

try:
    from ._version import version as __version__
except ImportError:  # pragma: no cover
    __version__ = "not-installed"

from rcrplan.errors import RcrplanError

__all__ = [
    "RcrplanError",
]
