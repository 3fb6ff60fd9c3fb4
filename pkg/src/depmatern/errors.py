"""Error taxonomy shared across the package.

Every error raised by this package derives from :class:`DepMaternError` and
carries a ``category`` used by the CLI to pick an exit code and by the
service to pick an HTTP status:

* ``validation`` - bad inputs or configuration (CLI exit 2, HTTP 422)
* ``numeric``    - numerical failure after recovery attempts (CLI exit 3, HTTP 500)
* ``io``         - file and format problems (CLI exit 4)
"""

from __future__ import annotations


class DepMaternError(Exception):
    """Base class; ``category`` is one of 'validation', 'numeric', 'io'."""

    category = "validation"


class ValidationError(DepMaternError):
    category = "validation"


class NumericError(DepMaternError):
    category = "numeric"


class IOFormatError(DepMaternError):
    category = "io"


class NotPositiveDefinite(NumericError):
    """Matrix failed a Cholesky factorization even after the jitter retry."""


class FilterDivergence(NumericError):
    """Kalman recursion produced a non-finite or non-PD innovation."""


class OptimizerFailed(NumericError):
    """Every optimizer restart ended with a non-finite objective."""


class MixedSmoothness(ValidationError):
    """All series in a joint model must share one Matern order."""


class EmptyChain(ValidationError):
    """No post-burn-in draws to summarize."""


class DegenerateTruth(ValidationError):
    """Test truths have zero variance; SMSE is undefined."""


class NonMonotoneTime(IOFormatError):
    """Timestamps not in strictly increasing order."""


class DuplicateTimestamp(IOFormatError):
    """The same timestamp (or time/series pair) appears twice."""


EXIT_CODES = {"validation": 2, "numeric": 3, "io": 4}


def exit_code_for(err: BaseException) -> int:
    if isinstance(err, DepMaternError):
        return EXIT_CODES.get(err.category, 1)
    return 1
