"""Exception hierarchy.

Operations that model a cryptographic rejection return ``None`` (or ``False``);
exceptions are reserved for caller mistakes and malformed inputs.
"""


class MfbeError(Exception):
    """Base class for all package errors."""


class PolicyError(MfbeError):
    """A policy is inconsistent with its platform, usage or token."""


class FormatError(MfbeError):
    """A serialized blob, container or script could not be parsed."""


class EnrollmentError(MfbeError):
    """User enrollment precondition violated."""


class CipherUnavailable(MfbeError):
    """A cipher slot was selected but no implementation is registered."""


class ChallengeError(MfbeError):
    """The adversary submitted an ill-formed challenge."""


class BootHalted(MfbeError):
    """A sealed key blob failed to authenticate during boot."""


class DeviceStateError(MfbeError):
    """A lifecycle transition was requested from the wrong phase."""
