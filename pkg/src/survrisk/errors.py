"""Exception hierarchy.

Errors split in two families so the CLI can map them onto exit codes:
``UserError`` (bad input or configuration, exit 2) and ``ModelError``
(numerical or fitting failure, exit 3).
"""


class SurvRiskError(Exception):
    pass


class UserError(SurvRiskError):
    pass


class ModelError(SurvRiskError):
    pass


class SchemaError(UserError):
    pass


class ParseError(UserError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column


class ConfigError(UserError):
    pass


class DegenerateColumnError(UserError):
    def __init__(self, column):
        super().__init__(f"column {column!r} has zero variance after exclusion")
        self.column = column


class EmptyCohortError(UserError):
    pass


class StratificationError(UserError):
    pass


class ShapeError(UserError):
    pass


class ExtrapolationError(UserError):
    pass


class NoEventsError(ModelError):
    pass


class NumericError(ModelError):
    pass


class SingularityError(ModelError):
    pass


class InferenceError(ModelError):
    pass


class EmptyScreenError(ModelError):
    pass


class DivergenceError(ModelError):
    def __init__(self, message, last_finite_epoch):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class LREstimationError(ModelError):
    pass


class FoldError(UserError):
    pass


class SearchError(ModelError):
    def __init__(self, message, trials=()):
        super().__init__(message)
        self.trials = list(trials)


class UndefinedConcordanceError(ModelError):
    pass


class BootstrapError(ModelError):
    pass
