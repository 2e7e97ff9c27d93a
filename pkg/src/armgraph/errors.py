"""Exception hierarchy shared by every stage of the pipeline."""


class ArmGraphError(Exception):
    """Base class for all errors raised by armgraph."""


# -- ELF loading ---------------------------------------------------------------

class ElfError(ArmGraphError):
    """The input could not be parsed as a supported ELF image."""


class BadMagic(ElfError):
    pass


class UnsupportedClass(ElfError):
    pass


class UnsupportedMachine(ElfError):
    pass


class UnsupportedEndianness(ElfError):
    pass


class Truncated(ElfError):
    pass


class MalformedElf(ElfError):
    """Structurally inconsistent headers (overlapping sections, bad indices)."""


class MissingLibrary(ArmGraphError):
    def __init__(self, name, search_paths=()):
        self.name = name
        self.search_paths = list(search_paths)
        super().__init__(f"library {name!r} not found in {self.search_paths}")


# -- recovery ------------------------------------------------------------------

class NoExecutableSection(ArmGraphError):
    pass


class CoverageOutsideUniverse(ArmGraphError):
    pass


# -- graph preparation ---------------------------------------------------------

class MissingBlock(ArmGraphError):
    pass


class UnknownTag(ArmGraphError):
    pass


class EmptyClass(ArmGraphError):
    pass


class ManifestError(ArmGraphError):
    pass


class DigestMismatch(ManifestError):
    pass


# -- dataset text format -------------------------------------------------------

class InvalidGraph(ArmGraphError):
    pass


class DatasetFormatError(ArmGraphError):
    """Base for read failures; ``line`` is the 1-based line number."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(DatasetFormatError):
    pass


class ConsistencyError(DatasetFormatError):
    pass


class IndexOutOfRange(DatasetFormatError):
    pass


# -- model ---------------------------------------------------------------------

class TagOutOfRange(ArmGraphError, ValueError):
    pass


class ShapeMismatch(ArmGraphError, ValueError):
    pass


class NonFiniteLoss(ArmGraphError, FloatingPointError):
    pass


class EmptyDataset(ArmGraphError, ValueError):
    pass


class CheckpointError(ArmGraphError):
    pass


class FeatureMismatch(ArmGraphError, ValueError):
    """Dataset tags or labels fall outside what a trained model was built for."""


# -- evaluation ----------------------------------------------------------------

class LengthMismatch(ArmGraphError, ValueError):
    pass


class EmptyMatrix(ArmGraphError, ValueError):
    pass
