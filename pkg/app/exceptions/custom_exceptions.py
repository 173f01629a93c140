import logging

logger = logging.getLogger(__name__)


class CGNetError(Exception):
    """Base class for errors raised by the model and tensor code"""

    def __init__(self, message):
        super().__init__(message)
        logger.error(f"[{type(self).__name__}] - {message}")


class ShapeError(CGNetError):
    """Custom exception for shape, broadcast and divisibility violations"""


class ConfigError(CGNetError):
    """Custom exception for invalid configuration values"""


class InputError(CGNetError):
    """Custom exception for invalid data values (labels, masks, probabilities)"""


class UsageError(CGNetError):
    """Custom exception for API misuse"""


class ManifestValidationError(Exception):
    """Custom exception for invalid dataset manifest records"""

    def __init__(self, record_id, message):
        self.record_id = record_id
        super().__init__(f"record '{record_id}': {message}")
        logger.error(f"[{type(self).__name__}] - record '{record_id}': {message}")


class MissingMaskError(ManifestValidationError):
    """A listed class label has no mask file"""


class NonBinaryMaskError(ManifestValidationError):
    """A mask contains values other than 0 and 255"""


class SizeMismatchError(ManifestValidationError):
    """Image, mask and edge map sizes disagree"""


class CheckpointError(Exception):
    """Custom exception for checkpoint read/write errors"""

    def __init__(self, message):
        super().__init__(message)
        logger.error(f"[CheckpointError] - {message}")


class VerificationError(Exception):
    """Custom exception for failed gradient checks and acceptance runs"""

    def __init__(self, message):
        super().__init__(message)
        logger.error(f"[VerificationError] - {message}")
