"""Exception types raised across reidlab.

Everything derives from :class:`ReIDError` so callers (and the CLI) can
separate user-facing input problems from genuine bugs.
"""


class ReIDError(ValueError):
    pass


class ZeroRow(ReIDError):
    def __init__(self, index):
        self.index = int(index)
        super().__init__(f"row {self.index} has (near) zero norm")


class DimMismatch(ReIDError):
    pass


class ShapeMismatch(ReIDError):
    pass


class InsufficientIdentities(ReIDError):
    pass


class FractionOutOfRange(ReIDError):
    pass


class LabelOutOfRange(ReIDError):
    pass


class DegenerateBatch(ReIDError):
    pass


class MissingCenter(ReIDError):
    def __init__(self, label):
        self.label = label
        super().__init__(f"no center row for class {label}")


class NoPositive(ReIDError):
    def __init__(self, anchor):
        self.anchor = int(anchor)
        super().__init__(f"anchor {self.anchor} has no positive in the batch")


class NotNormalized(ReIDError):
    pass


class UnassignedSample(ReIDError):
    pass


class NoPositiveProxy(ReIDError):
    pass


class FewerThanTwoClusters(ReIDError):
    pass


class NoClusters(ReIDError):
    pass


class AlphaOutOfRange(ReIDError):
    pass


class ClusterOutOfRange(ReIDError):
    pass


class UnknownProxy(ReIDError):
    pass


class NoRelevant(ReIDError):
    pass


class NoEvaluableQueries(ReIDError):
    pass


class EmptyGallery(ReIDError):
    pass


class InsufficientSamples(ReIDError):
    pass


class EmptyClustering(ReIDError):
    pass


class FileFormatError(ReIDError):
    """Base for embedding-file decoding errors; carries the byte offset."""

    def __init__(self, message, offset):
        self.offset = int(offset)
        super().__init__(f"{message} (at byte offset {self.offset})")


class BadMagic(FileFormatError):
    pass


class VersionUnsupported(FileFormatError):
    pass


class TruncatedFile(FileFormatError):
    pass
