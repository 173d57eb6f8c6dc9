import os

import pytest

from fermat import kernels


@pytest.fixture(scope="session", autouse=True)
def _session_cache(tmp_path_factory):
    """Point the disk cache at a per-session directory and precompile kernels.

    Compilation happens here so acceptance tests measure solver time, not
    jit time; numba's on-disk cache makes repeat sessions cheap.
    """
    cache = tmp_path_factory.mktemp("fermat_cache")
    old = os.environ.get("FERMAT_CACHE_DIR")
    os.environ["FERMAT_CACHE_DIR"] = str(cache)
    kernels.warm_up()
    yield
    if old is None:
        os.environ.pop("FERMAT_CACHE_DIR", None)
    else:
        os.environ["FERMAT_CACHE_DIR"] = old
