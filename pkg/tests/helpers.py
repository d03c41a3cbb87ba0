"""Small builders shared across test modules."""

import numpy as np

from cono import PromptSpec


def emb(bg, amp, sx, sy, vx, vy, radius):
    """Embedding vector: background id, blob amplitude, start, velocity, radius."""
    return np.array([bg, amp, sx, sy, vx, vy, radius, 0.0], dtype=np.float64)


def prompt(pid, **kw):
    fields = dict(bg=2, amp=3.0, sx=4.0, sy=4.0, vx=1.0, vy=0.0, radius=1.5)
    fields.update(kw)
    return PromptSpec(pid, emb(**fields))
