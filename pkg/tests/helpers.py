"""Small constructors shared by the test modules."""

import numpy as np

from framu.core import DataPoint, ParamVector


def make_point(pid, features, target=0.0, modality=0, **kw):
    return DataPoint(id=pid, modality=modality, features=np.asarray(features, float), target=target, **kw)


def pv(rows):
    return ParamVector.from_matrix(np.atleast_2d(np.asarray(rows, float)))
