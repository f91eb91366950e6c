"""Exception hierarchy.

Two roots so the command line can map failures onto exit codes:
``InputError`` (bad files, bad config, bad shapes; exit 2) and
``NumericError`` (divergence, non-finite values; exit 3).
"""


class GgcnnError(Exception):
    pass


class InputError(GgcnnError, ValueError):
    pass


class NumericError(GgcnnError, ArithmeticError):
    pass


class ShapeMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass
