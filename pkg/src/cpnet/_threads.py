"""Thread-cap plumbing that must run before numpy is first imported.

CPNET_THREADS caps intra-op (BLAS) parallelism by seeding the usual
environment knobs.  BLAS libraries read these once at load time, which is
why the package __init__ calls this before anything touches numpy.
"""

import os

_KNOBS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def apply_thread_cap() -> None:
    cap = os.environ.get("CPNET_THREADS")
    if not cap:
        return
    for knob in _KNOBS:
        os.environ[knob] = cap
