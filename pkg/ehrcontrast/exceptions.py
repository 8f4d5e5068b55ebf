# -*- coding: utf-8 -*-
"""
Exceptions raised by ehrcontrast.

Errors caused by bad input subclass ``ValueError``, so callers that only
care about "the arguments were wrong" can keep catching ``ValueError``.
"""


class EhrContrastError(Exception):
    """ Base class for all ehrcontrast errors. """


class ShapeError(EhrContrastError, ValueError):
    """ Tensor or array shapes don't agree. """


class ContractError(EhrContrastError, ValueError):
    """ A precondition of an operation is not met. """


class CohortParseError(ContractError):
    """ A cohort file line can't be parsed. """
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = "line %d: %s" % (lineno, message)
        super(CohortParseError, self).__init__(message)
        self.lineno = lineno


class CohortValidationError(ContractError):
    """ A patient record breaks a record invariant. """
    def __init__(self, message, patient_id=None, lineno=None):
        prefix = []
        if lineno is not None:
            prefix.append("line %d" % lineno)
        if patient_id is not None:
            prefix.append("patient %r" % patient_id)
        if prefix:
            message = "%s: %s" % (", ".join(prefix), message)
        super(CohortValidationError, self).__init__(message)
        self.patient_id = patient_id
        self.lineno = lineno


class UndefinedMetricError(EhrContrastError, ValueError):
    """ A metric is undefined for the given labels (e.g. a single class). """


class UnsupportedModelError(EhrContrastError, ValueError):
    """ An operation was asked for a model kind it can't handle. """


class TrainingDivergedError(EhrContrastError, RuntimeError):
    """ Training produced a non-finite loss. """
    def __init__(self, epoch, batch, value):
        super(TrainingDivergedError, self).__init__(
            "non-finite loss %r at epoch %d, batch %d" % (value, epoch, batch)
        )
        self.epoch = epoch
        self.batch = batch


class FoldFailedError(EhrContrastError, RuntimeError):
    """ A cross-validation fold failed; the cause is chained. """
    def __init__(self, fold, cause):
        super(FoldFailedError, self).__init__(
            "fold %d failed: %s: %s" % (fold, type(cause).__name__, cause)
        )
        self.fold = fold


class ConfigError(ContractError):
    """ An experiment config file has unknown keys or bad values. """
