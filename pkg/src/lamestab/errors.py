"""Structured errors shared by all modules.

Every error carries a short upper-case ``code`` naming the failure. Input
problems (bad geometry, bad config, inadmissible parameters) derive from
:class:`InputError`; failures during computation derive from
:class:`NumericalError`. The CLI maps the two families to exit codes 1 and 2.
"""


class LameError(Exception):
    """Base class; ``code`` identifies the failure, ``module`` where it arose."""

    module = "lamestab"

    def __init__(self, code, message="", **details):
        self.code = code
        self.details = details
        super().__init__(f"{code}: {message}" if message else code)


class InputError(LameError):
    pass


class NumericalError(LameError):
    pass
