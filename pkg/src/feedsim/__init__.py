"""Deterministic agent-based market simulator with a social-feed channel.

A TD3 trading agent and a sentiment-driven trading agent share a limit
order book reconstructed from LOBSTER-format order flow, plus a simulated
social media feed the TD3 agent can learn to manipulate.
"""

import os

# Keep BLAS single-threaded: the arrays are tiny, trials parallelize at the
# process level, and reproducibility must not depend on thread scheduling.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

__version__ = "0.1.0"
