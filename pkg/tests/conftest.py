import numpy as np
import pytest

from survrisk.cohort import FeatureMatrix, SurvivalOutcome, SynthConfig, generate_synthetic, preprocess, stratified_split


def brute_concordance(scores, duration, event):
    """O(n^2) pair enumeration, kept independent of the production sweep."""
    conc = disc = tied = 0
    n = len(scores)
    for i in range(n):
        if not event[i]:
            continue
        for j in range(n):
            if duration[i] < duration[j]:
                if scores[i] > scores[j]:
                    conc += 1
                elif scores[i] < scores[j]:
                    disc += 1
                else:
                    tied += 1
    return conc, disc, tied


def matrix(values, names=None):
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    names = names or [f"f{j}" for j in range(values.shape[1])]
    return FeatureMatrix(values, names, {c: (0.0, 1.0) for c in names})


def outcome(duration, event):
    return SurvivalOutcome(np.asarray(duration, dtype=float), np.asarray(event, dtype=bool))


def random_instance(rng, n=30, d=4, ties=False, event_rate=0.7):
    X = rng.standard_normal((n, d))
    if ties:
        t = rng.integers(1, max(2, n // 4), n).astype(float)
    else:
        t = rng.exponential(1.0, n) + 1e-3
    e = rng.random(n) < event_rate
    e[0] = True
    return X, outcome(t, e)


def synth_split(seed=0, **kw):
    cfg = SynthConfig(seed=seed, **kw)
    table, truth = generate_synthetic(cfg)
    X, y, _ = preprocess(table)
    sp = stratified_split(y, seed=seed)
    parts = {k: (X.subset(getattr(sp, k)), y.subset(getattr(sp, k))) for k in ("train", "validation", "test")}
    return X, y, sp, parts, truth


def nonlinear_cohort(n, seed):
    """Cohort whose log hazard has an interaction, a square and a linear term,
    so network depth, width and dropout all change the achievable C-index."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 6))
    eta = 1.2 * np.tanh(2 * X[:, 0] * X[:, 1]) + 0.8 * X[:, 2] ** 2 - 0.8 + 0.5 * X[:, 3]
    T = (rng.standard_exponential(n) / np.exp(eta)) ** (1 / 1.5)
    C = rng.uniform(0.5, 2.0, n) * np.quantile(T, 0.5)
    return X, outcome(np.minimum(T, C), T <= C)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
