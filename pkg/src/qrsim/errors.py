"""Exception hierarchy shared by all modules."""


class QrsimError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(QrsimError):
    """A definition (channel, machine, collection, document) is malformed."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class ModelError(QrsimError):
    """A run hit a hard model limit (message length, queue capacity, size)."""


class QueueOverflowError(ModelError):
    pass


class MessageLengthError(ModelError):
    pass
