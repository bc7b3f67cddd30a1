"""Exception hierarchy.

Every error derives from :class:`CHDScreenError`. The CLI maps
:class:`DataError` to exit code 1 and :class:`ConfigError` to exit code 2.
"""


class CHDScreenError(Exception):
    pass


class DataError(CHDScreenError):
    """Problem with input data (files, signals, labels)."""


class ConfigError(CHDScreenError, ValueError):
    """Invalid parameters or inconsistent configuration."""


# audio / manifest
class UnsupportedEncoding(DataError):
    pass


class NotMono(DataError):
    pass


class SampleRateMismatch(DataError):
    pass


class CorruptHeader(DataError):
    pass


class IoFailure(DataError):
    pass


class DuplicateSiteForPatient(DataError):
    pass


class UnknownLabel(DataError):
    pass


class UnknownSite(DataError):
    pass


class MissingColumn(DataError):
    pass


class EmptyManifest(DataError):
    pass


class RatioSumInvalid(ConfigError):
    pass


# signal processing
class InvalidBand(ConfigError):
    pass


class UnstableDesign(CHDScreenError):
    pass


class EmptySignal(DataError):
    pass


class ConstantSignal(DataError):
    pass


class TooShort(DataError):
    pass


class SignalShorterThanWindow(DataError):
    pass


class BandTooNarrow(ConfigError):
    pass


# handcrafted features
class NoBeatsDetected(DataError):
    pass


class SignalTooShort(DataError):
    pass


class TooFewBeats(DataError):
    pass


class ZeroPower(DataError):
    pass


# statistics / evaluation
class EmptySample(DataError):
    pass


class SingleClassOnly(DataError):
    pass


class LengthMismatch(DataError):
    pass


class NoPositives(DataError):
    pass


class NoRecordings(DataError):
    pass


class TooFewPatients(DataError):
    pass


class EmptyGroup(ConfigError):
    pass


# network
class InvalidConfig(ConfigError):
    pass


class ShapeMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class CheckpointMismatch(ConfigError):
    pass
