"""Two-state pendulum-like system with one attack input, for observer tests."""

import numpy as np

from smsp.interval import IntervalVector
from smsp.mixed_monotone import JacobianBounds
from smsp.observer import ModeHypothesis
from smsp.policy import PolicyEnvelope, PolicySample, push_sample

N, P = 2, 1
L = 0.8
NOISE_W = IntervalVector.symmetric(np.full(2, 0.01))
NOISE_V = IntervalVector.symmetric(np.full(2, 0.05))


def policy(x):
    x = np.atleast_2d(x)
    return L * np.sin(x[:, :1])


def make_f(gain=0.1):
    def f(Z):
        Z = np.atleast_2d(Z)
        x0, x1, d, w0, w1 = Z.T
        return np.stack([x0 + 0.1 * x1 + w0, x1 - gain * np.sin(x0) + 0.1 * d + w1], axis=1)

    jb = JacobianBounds(
        np.array([[1.0, 0.1, 0.0, 1.0, 0.0], [-gain, 1.0, 0.1, 0.0, 1.0]]),
        np.array([[1.0, 0.1, 0.0, 1.0, 0.0], [gain, 1.0, 0.1, 0.0, 1.0]]),
    )
    return f, jb


def g(Z):
    Z = np.atleast_2d(Z)
    x0, x1, d, v0, v1 = Z.T
    return np.stack([x0 + v0, x1 + d + v1], axis=1)


G_JB = JacobianBounds(
    np.array([[1.0, 0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0, 1.0]]),
    np.array([[1.0, 0.0, 0.0, 1.0, 0.0], [0.0, 1.0, 1.0, 0.0, 1.0]]),
)


def hypothesis(mode_id=1, gain=0.1):
    f, fjb = make_f(gain)
    return ModeHypothesis(mode_id, N, P, f, g, fjb, G_JB, [L], policy_features=[[0]])


def warm_envelope(lo=-2.0, hi=2.0, count=41):
    env = PolicyEnvelope(N, [L], features=[[0]])
    for a in np.linspace(lo, hi, count):
        x = np.array([a, 0.0])
        d = policy(x)[0]
        env = push_sample(env, PolicySample(x, d, d, [0.0]))
    return env


def simulate(steps, seed, gain=0.1, x0=(0.3, -0.2)):
    """Truth ``(steps+1, 3)`` rows of ``[x, d]`` and outputs ``(steps+1, 2)``."""
    rng = np.random.default_rng(seed)
    f, _ = make_f(gain)
    x = np.array(x0, dtype=float)
    Z, Y = [], []
    for k in range(steps + 1):
        d = policy(x)[0]
        v = rng.uniform(NOISE_V.lo, NOISE_V.hi)
        Z.append(np.concatenate([x, d]))
        Y.append(g(np.concatenate([x, d, v]))[0])
        w = rng.uniform(NOISE_W.lo, NOISE_W.hi)
        x = f(np.concatenate([x, d, w]))[0]
    return np.array(Z), np.array(Y)
