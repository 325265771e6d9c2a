import numpy as np
import pytest

from raydiss import exprcore as xc

# Expression corpus shared by the AD tests and the acceptance gate.
# Contexts are sampled with strictly positive q, v (see random_contexts) so
# every expression is smooth and domain-valid at the sampled points.
CORPUS_PARAMS = {"c": 0.5, "A": 1.3, "k": 2.0, "mu": 0.7}
CORPUS = [
    "2*q1 + v1^2",
    "0.5*k*q1^2",
    "c*abs(v1)^3",
    "A*(v1^2+v2^2)^1.5",
    "sin(q1)*cos(q2) + tanh(v1*v2)",
    "exp(-q1)*v2^2 + ln(q2+1)",
    "sqrt(v1^2 + v2^2 + 0.01)",
    "q1*q2/(1+v1^2)",
    "sign(v1)*v1^2",
    "pow(q1, 2) + pow(v2, 3)",
    "-v1^2 + (-q1)^2",
    "(q1+v1)^q2",
    "mu*abs(v1 - v2)",
    "v1^2.5 + q2^0.5",
]


def random_contexts(n, seed=7, dof=2):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        q = tuple(rng.uniform(0.4, 1.6, dof))
        v = tuple(rng.uniform(0.4, 1.6, dof))
        out.append(xc.EvalContext(q, v, CORPUS_PARAMS))
    return out


@pytest.fixture(scope="session")
def corpus_asts():
    return [(src, xc.parse(src)) for src in CORPUS]
