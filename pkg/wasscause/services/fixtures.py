"""
Synthetic accelerometer-style fixture: per-minute intensity samples with a binary exposure
"""

import logging
from typing import Tuple

import numpy as np
import pandas as pd
from scipy.special import expit

logger = logging.getLogger(__name__)

VALUE_BOUNDS = (1.0, 1000.0)
SHORT_RANGE = (20, 99)


def fixture_nhanes_like(n: int, seed: int = 0, shift: float = 20.0,
                        obs_range: Tuple[int, int] = (100, 5000), n_short: int = 0) -> pd.DataFrame:
    """
    Long-format frame (subject_id, treatment, age, gender, value).

    Intensity is 1 + scale * Beta(1.5, 6) + shift * A, where the subject scale
    grows with age and is lower for gender 1. Exposure is more likely for older
    subjects, so covariates confound the raw comparison. The exposure moves every
    quantile by exactly `shift`. n_short extra subjects carry 20..99 samples.
    """
    rng = np.random.default_rng(seed)
    total = n + n_short
    age = rng.uniform(18.0, 80.0, total)
    gender = rng.binomial(1, 0.52, total)
    treatment = rng.binomial(1, expit(-0.5 + 0.03 * (age - 49.0) + 0.3 * gender))
    scale = 300.0 + 3.0 * (age - 18.0) - 40.0 * gender + rng.uniform(-50.0, 50.0, total)
    counts = np.concatenate([
        rng.integers(obs_range[0], obs_range[1] + 1, n),
        rng.integers(SHORT_RANGE[0], SHORT_RANGE[1] + 1, n_short),
    ])

    frames = []
    for i in range(total):
        values = 1.0 + scale[i] * rng.beta(1.5, 6.0, counts[i]) + shift * treatment[i]
        frames.append(pd.DataFrame({
            'subject_id': f"P{i + 1:05d}",
            'treatment': int(treatment[i]),
            'age': round(float(age[i]), 1),
            'gender': int(gender[i]),
            'value': np.clip(values, *VALUE_BOUNDS),
        }))
    logger.debug(f"Generated fixture with {total} subjects ({n_short} short)")
    return pd.concat(frames, ignore_index=True)
