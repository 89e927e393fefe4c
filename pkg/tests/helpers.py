"""
Builders for hand-made subjects
"""

import numpy as np

from wasscause.models import QuantileCurve, Subject


def make_subject(subject_id, treatment, covariates, values, grid, bounds=(0.0, 1.0)):
    return Subject(str(subject_id), treatment, np.atleast_1d(np.asarray(covariates, dtype=float)),
                   QuantileCurve(grid, values, *bounds))


def noiseless_subjects(grid, n=40, effect=None, seed=0):
    """Subjects with Z_i(u) = u + A_i * effect(u); the covariate is pure noise"""
    rng = np.random.default_rng(seed)
    effect = np.sin(np.pi * grid.levels) / 8.0 if effect is None else np.asarray(effect, dtype=float)
    subjects = []
    for i in range(n):
        a = i % 2
        x = rng.uniform(-1.0, 1.0)
        subjects.append(make_subject(f"s{i}", a, [x], grid.levels + a * effect, grid))
    return subjects


def linear_subjects(grid, n=30, seed=0):
    """Z_i(u) = (1 + 2 A_i + 3 X_i) u, exactly linear in (1, A, X) at every level"""
    rng = np.random.default_rng(seed)
    subjects = []
    for i in range(n):
        a = i % 2
        x = rng.uniform(0.0, 1.0)
        subjects.append(make_subject(f"s{i}", a, [x], (1 + 2 * a + 3 * x) * grid.levels, grid, (0.0, 10.0)))
    return subjects
