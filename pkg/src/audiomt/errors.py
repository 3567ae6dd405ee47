"""Exception types shared across the package."""


class AudiomtError(Exception):
    """Base class for all errors raised by this package."""


# --- audio frontend ---

class EmptyAudio(AudiomtError):
    pass


class AudioTooShort(AudiomtError):
    pass


class SampleRateMismatch(AudiomtError):
    pass


class InvalidIndex(AudiomtError):
    pass


class ChannelCountUnsupported(AudiomtError):
    pass


class SampleFormatUnsupported(AudiomtError):
    pass


# --- tag grammar ---

class InvalidHeader(AudiomtError):
    """A TaskHeader violates one of its invariants; carries the violated rules."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid header: " + ", ".join(v.rule for v in self.violations))


class MalformedHeader(AudiomtError):
    """Token stream does not parse as a header."""

    def __init__(self, position, expected):
        self.position = position
        self.expected = expected
        super().__init__(f"malformed header at position {position}: expected {expected}")


class DuplicateLanguage(AudiomtError):
    pass


class UnknownToken(AudiomtError):
    pass


# --- SRWT codec ---

class TimeOutOfRange(AudiomtError):
    pass


class MalformedSRWT(AudiomtError):
    def __init__(self, position, reason):
        self.position = position
        self.reason = reason
        super().__init__(f"malformed timed sequence at position {position}: {reason}")


class ScoreUndefined(AudiomtError):
    pass


# --- corpus ---

class ManifestError(AudiomtError):
    def __init__(self, line, reason):
        self.line = line
        self.reason = reason
        super().__init__(f"manifest line {line}: {reason}")


class UnknownDataset(AudiomtError):
    pass


class ClipTooLong(AudiomtError):
    pass


# --- model ---

class AudioTooLong(AudiomtError):
    pass


class VocabMismatch(AudiomtError):
    pass


class DivergenceDetected(AudiomtError):
    pass


class CheckpointNotFound(AudiomtError):
    pass


class CheckpointCorrupt(AudiomtError):
    pass


# --- chat format ---

class InvalidDialogue(AudiomtError):
    pass


class MalformedDialogue(AudiomtError):
    def __init__(self, position, reason=""):
        self.position = position
        self.reason = reason
        super().__init__(f"malformed dialogue at position {position}" + (f": {reason}" if reason else ""))


class AudioNotFound(AudiomtError):
    def __init__(self, audio_id, path):
        self.audio_id = audio_id
        self.path = path
        super().__init__(f"audio {audio_id} not found: {path}")


# --- metrics ---

class UndefinedMetric(AudiomtError):
    pass


class InputMismatch(AudiomtError):
    pass


# --- harness ---

class RunLocked(AudiomtError):
    pass


class ConfigError(AudiomtError):
    pass
