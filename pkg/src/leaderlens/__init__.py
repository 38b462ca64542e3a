"""Re-analysis toolkit for LLM benchmark leaderboard snapshots.

Grouped significance testing (one-way ANOVA with Tukey HSD), additive
mixed-model fits of score vs. model size, correlation structure across
benchmarks, and a deterministic 2-D embedding of the score table, wrapped in
a reproducible report pipeline and a small CLI.
"""

from ._backend import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
