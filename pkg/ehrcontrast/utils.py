# -*- coding: utf-8 -*-
from __future__ import absolute_import
import os
from functools import partial

from tqdm import tqdm


epochs_progress = partial(tqdm, unit=' epochs', smoothing=False, leave=False)
folds_progress = partial(tqdm, unit=' folds', smoothing=False, leave=True)


def ensure_dir(path):
    """ Create directory ``path`` (and parents) if it doesn't exist; return it. """
    os.makedirs(path, exist_ok=True)
    return path


def batches(items, size):
    """
    Split a sequence into consecutive chunks of at most ``size`` items.

    >>> list(batches([1, 2, 3, 4, 5], 2))
    [[1, 2], [3, 4], [5]]
    """
    for start in range(0, len(items), size):
        yield items[start:start + size]
