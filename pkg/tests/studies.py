"""Replication studies shared between test modules (each one runs once per session)."""

from functools import lru_cache

from astpa import aggregate, config_for, get_benchmark, run_replications

MASTER_SEED = 1

# criterion number -> "PASS/FAIL ..." line, printed in the terminal summary
CRITERIA_LINES: dict = {}


@lru_cache(maxsize=None)
def study(name: str, reps: int, **params):
    spec = get_benchmark(name, **params)
    ests = run_replications(name, config_for(spec), reps, MASTER_SEED, params=params)
    return spec, ests


def summary(name: str, reps: int, first: int | None = None, **params):
    """Aggregate over the first ``first`` replications of a cached study."""
    spec, ests = study(name, reps, **params)
    return spec, aggregate(ests[: first or reps]), ests[: first or reps]


def record(number: int, ok: bool, text: str) -> None:
    CRITERIA_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {text}"
    print(CRITERIA_LINES[number])


@lru_cache(maxsize=None)
def quadrature(name: str):
    from astpa import quadrature_reference_2d

    return quadrature_reference_2d(get_benchmark(name).limit_state(), full_output=True)
