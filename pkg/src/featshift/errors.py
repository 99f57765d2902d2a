"""Exception hierarchy shared across the package."""


class FeatshiftError(Exception):
    """Base class for every error raised on bad data or bad usage."""


class FormatError(FeatshiftError):
    """A file does not follow its expected binary or text layout."""


class MagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class SizeError(FormatError):
    pass


class UnsupportedEncodingError(FeatshiftError):
    """Audio is readable but not 16-bit mono PCM."""


class DuplicateIdError(FeatshiftError):
    pass


class TooShortError(FeatshiftError):
    pass


class NoVoicingError(FeatshiftError):
    """No voiced frames were found where at least one is required."""


class ShapeError(FeatshiftError, ValueError):
    pass


class ConfigMismatchError(FeatshiftError):
    pass
