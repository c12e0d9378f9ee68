from __future__ import annotations

import functools

from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from unistack.irgen import GeneratorConfig, generate_program

settings.register_profile(
    "default",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

seeds = st.integers(min_value=0, max_value=2**32 - 1)


@functools.lru_cache(maxsize=None)
def generated(seed: int, **kw):
    return generate_program(GeneratorConfig(seed=seed, **kw))


def corpus(count: int, start: int = 0):
    return [generated(s) for s in range(start, start + count)]
