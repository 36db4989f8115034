"""Model of mobile file-based encryption: policy-bound key wrapping, per-node key
derivation, node-tree encryption, a device lifecycle simulator and a security-game harness."""

from .core import (
    AuthToken,
    BoundPolicy,
    CipherId,
    DerivedKey,
    KdfMode,
    KeyClass,
    MasterKey,
    Node,
    NodeType,
    Platform,
    Policy,
    SecurityParameter,
    Usage,
    WrappedKey,
    kgen,
)
from .errors import (
    BootHalted,
    ChallengeError,
    CipherUnavailable,
    DeviceStateError,
    EnrollmentError,
    FormatError,
    MfbeError,
    PolicyError,
)
from .keyring import KeyId, Keyring
from .rand import ConstantRandom, SeededRandom, SystemRandom
from .tee import Tee

__version__ = "0.1.0"

__all__ = [
    "AuthToken",
    "BootHalted",
    "BoundPolicy",
    "ChallengeError",
    "CipherId",
    "CipherUnavailable",
    "ConstantRandom",
    "DerivedKey",
    "DeviceStateError",
    "EnrollmentError",
    "FormatError",
    "KdfMode",
    "KeyClass",
    "KeyId",
    "Keyring",
    "MasterKey",
    "MfbeError",
    "Node",
    "NodeType",
    "Platform",
    "Policy",
    "PolicyError",
    "SecurityParameter",
    "SeededRandom",
    "SystemRandom",
    "Tee",
    "Usage",
    "WrappedKey",
    "kgen",
]
