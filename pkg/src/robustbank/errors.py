"""Exception types shared across the toolkit."""


class RobustBankError(Exception):
    """Base class for all toolkit errors."""


class BadMagic(RobustBankError):
    def __init__(self, found: bytes, offset: int = 0):
        super().__init__(f"bad magic {found!r} at offset {offset}")
        self.found = found
        self.offset = offset


class UnsupportedVersion(RobustBankError):
    def __init__(self, version: int, offset: int = 4):
        super().__init__(f"unsupported version {version} at offset {offset}")
        self.version = version
        self.offset = offset


class Truncated(RobustBankError):
    def __init__(self, needed: int, available: int, offset: int):
        super().__init__(
            f"truncated file: needed {needed} bytes at offset {offset}, "
            f"only {available} available"
        )
        self.needed = needed
        self.available = available
        self.offset = offset


class NonFiniteFeature(RobustBankError):
    def __init__(self, record_index: int, offset: int):
        super().__init__(
            f"non-finite feature value in record {record_index} (byte offset {offset})"
        )
        self.record_index = record_index
        self.offset = offset


class EmptySplit(RobustBankError):
    pass


class DimensionMismatch(RobustBankError):
    pass


class UnlabeledInput(RobustBankError):
    pass


class LabeledInputRejected(RobustBankError):
    pass


class MixedLabels(RobustBankError):
    pass


class TrainBatchTooSmall(RobustBankError):
    pass


class NonFiniteLoss(RobustBankError):
    def __init__(self, epoch: int, batch: int):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class MissingManifestEntry(RobustBankError):
    pass
