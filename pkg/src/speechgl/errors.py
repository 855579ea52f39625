"""Exception hierarchy shared across the package."""


class SpeechGLError(Exception):
    """Base class for all package errors."""


class ShapeError(SpeechGLError, ValueError):
    """Array shapes or lengths do not line up."""


class EmptySignalError(SpeechGLError, ValueError):
    """Signal too short to produce a single analysis frame."""


class InvalidConfigError(SpeechGLError, ValueError):
    pass


class WavFormatError(SpeechGLError):
    """File is not a readable RIFF/WAVE container."""


class UnsupportedWavError(WavFormatError):
    """Valid WAV, but not 16-bit PCM mono."""


class AudioIOError(SpeechGLError, OSError):
    pass


class SingularParameterError(SpeechGLError, ValueError):
    """Closed-form gain undefined for the requested exponent."""


class DegenerateSignalError(SpeechGLError, ValueError):
    pass


class NoSpeechError(SpeechGLError, ValueError):
    """No speech-active frames to measure over."""


class DatasetError(SpeechGLError):
    pass
