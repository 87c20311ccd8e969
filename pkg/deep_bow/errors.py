"""Error hierarchy shared by every stage.

Each family maps onto a CLI exit code: configuration problems exit 2, data
problems exit 3 and numeric failures exit 4.
"""
from __future__ import annotations

from typing import Optional


class DeepBowError(Exception):
    exit_code = 1

    def __init__(self, message: str, stage: Optional[str] = None):
        super().__init__(message)
        self.stage = stage

    def with_stage(self, stage: str) -> "DeepBowError":
        if self.stage is None:
            self.stage = stage
        return self


class ConfigError(DeepBowError):
    exit_code = 2


class DataError(DeepBowError):
    exit_code = 3


class NumericError(DeepBowError):
    exit_code = 4


# dataio
class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFinite(DataError):
    pass


class EmptyMask(DataError):
    pass


class VolumeIOError(DataError):
    pass


class SchemaError(DataError):
    pass


class MissingVolume(DataError):
    pass


class MetricMismatch(DataError):
    pass


class InvalidSpec(ConfigError):
    pass


# patchex
class PatchGeometryError(ConfigError):
    pass


class EmptyResult(DataError):
    pass


class OriginMismatch(DataError):
    pass


class DegenerateChannel(NumericError):
    pass


# cae
class InvalidArch(ConfigError):
    pass


class ShapeMismatch(NumericError):
    pass


class EmptyPatchSet(DataError):
    pass


# vocab
class TooFewVectors(DataError):
    pass


class DimMismatch(NumericError):
    pass


class EmptyRegion(DataError):
    pass


# features
class ScopeMismatch(DataError):
    pass


class MissingArtifact(ConfigError):
    pass


# learn
class SingleClass(DataError):
    pass


class NoConvergence(NumericError):
    pass


class EmptyGrid(ConfigError):
    pass


class BudgetExceedsFeatures(ConfigError):
    pass


# eval
class LengthMismatch(DataError):
    pass


class TooFewSamples(DataError):
    pass


class LeakageError(DataError):
    pass


# cli
class UnreadableReport(DataError):
    pass
