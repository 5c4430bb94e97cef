"""Exception hierarchy.

Every error carries the process exit code the CLI maps it to:
2 for configuration problems, 3 for data/dimension problems and
4 for solver failures.
"""


class BenthoscanError(Exception):
    exit_code = 1


class ConfigError(BenthoscanError):
    exit_code = 2


class DataError(BenthoscanError):
    exit_code = 3


class SolverError(BenthoscanError):
    exit_code = 4


# ingest
class MalformedRow(DataError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line
        self.reason = reason


class UnknownImageReference(DataError):
    pass


class DuplicateImageId(DataError):
    pass


class EmptySite(DataError):
    pass


class YearNotCovered(DataError):
    pass


# taxonomy
class TaxonomyError(DataError):
    pass


class CycleDetected(TaxonomyError):
    pass


class DuplicateCode(TaxonomyError):
    pass


class OrphanNode(TaxonomyError):
    pass


class UnknownNode(TaxonomyError):
    pass


class RootHasNoSiblings(TaxonomyError):
    pass


# preprocess / features
class PointOutOfBounds(DataError):
    pass


class BackendUnavailable(ConfigError):
    pass


class InferenceFailure(DataError):
    pass


class CacheCorrupt(DataError):
    pass


# svm / hierclass
class DimensionMismatch(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class SingleClassInput(SolverError):
    pass


class InsufficientSamplesForFolds(SolverError):
    pass


class UnsupportedStrategy(ConfigError):
    pass


class NoPositives(DataError):
    pass


class NoNegatives(DataError):
    pass


# metrics / coverage
class LengthMismatch(DataError):
    pass


class EmptyTestSet(DataError):
    pass


class NoLabeledPoints(DataError):
    pass


class DegenerateX(DataError):
    pass
