from __future__ import absolute_import
import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from ehrcontrast.metrics import auroc


class BaseOutcomeClassifier(BaseEstimator, ClassifierMixin):

    classes_ = np.array([0, 1])

    def predict_proba(self, X):
        p = self.predict_positive(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_positive(X) >= 0.5).astype(np.int64)

    def score(self, X, y):
        """
        Area under the ROC curve of predicted positive-outcome
        probabilities for sequences ``X`` against 0/1 labels ``y``.
        """
        return auroc(self.predict_positive(X), y)
