from typing import Optional


class HetfedError(Exception):
    """Base class for every error raised by the simulator"""


class DimensionError(HetfedError, ValueError):
    """Tensor shapes do not fit the operation"""


class ArgumentError(HetfedError, ValueError):
    """An argument is outside the range the operation accepts"""


class AggregationCompatibilityError(HetfedError, ValueError):
    """Two parameter sets do not share a manifest"""


class CodecError(HetfedError, ValueError):
    """A parameter payload cannot be decoded"""


class PartitionError(HetfedError, ValueError):
    """A dataset cannot be partitioned as requested"""


class IngestionError(HetfedError):
    """A dataset file is missing, truncated or malformed"""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{self.path}: {message}")


class TrainingError(HetfedError):
    """Local training produced a non-finite loss or parameter update"""

    def __init__(self, message: str, round_index: Optional[int] = None,
                 client: Optional[int] = None, batch: Optional[int] = None):
        self.round_index = round_index
        self.client = client
        self.batch = batch
        super().__init__(f"{message} (round={round_index}, client={client}, batch={batch})")


class ConfigError(HetfedError):
    """An experiment configuration key is unknown or out of range"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")
