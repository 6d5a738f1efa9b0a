"""Exception and warning types raised across the toolkit.

Every error derives from :class:`VokitError`, which the CLI maps to exit
code 2 (data error).
"""


class VokitError(ValueError):
    pass


# geometry
class ZeroQuaternion(VokitError):
    pass


class NotARotation(VokitError):
    pass


class DegenerateInput(VokitError):
    pass


# correspondence
class TooFewDescriptors(VokitError):
    pass


# epipolar
class DegenerateTranslation(VokitError):
    pass


class AllZeroConfidence(UserWarning):
    """An image had no positive confidence but nonzero epipolar error."""


# robust pose / metrics
class DegenerateConfiguration(VokitError):
    pass


class CheiralityTie(VokitError):
    pass


class InsufficientMatches(VokitError):
    pass


class NoModelFound(VokitError):
    pass


class EmptyErrors(VokitError):
    pass


class EmptyMatchSet(VokitError):
    pass


# regressor
class ConfigError(VokitError):
    pass


class SequenceTooLong(VokitError):
    pass


class EmptyMask(VokitError):
    pass


class NonFiniteLoss(VokitError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


# trajectory
class LengthMismatch(VokitError):
    pass


class DegenerateAlignment(VokitError):
    pass


class TrajectoryTooShort(VokitError):
    pass


# io
class ParseError(VokitError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class BadQuaternion(ParseError):
    pass


class SchemaError(VokitError):
    def __init__(self, message, pair_id=None, field=None):
        prefix = []
        if pair_id is not None:
            prefix.append(f"pair {pair_id!r}")
        if field is not None:
            prefix.append(f"field {field!r}")
        super().__init__(f"{', '.join(prefix)}: {message}" if prefix else message)
        self.pair_id = pair_id
        self.field = field


class UnsupportedFormat(VokitError):
    pass


class FrustumEmpty(VokitError):
    pass
