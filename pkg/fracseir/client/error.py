# SPDX-License-Identifier: GPL-3.0+


class UsageError(RuntimeError):
    """Signify that the command line was invalid or referenced a missing file."""

    pass
