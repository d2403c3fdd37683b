"""Deterministic replication simulator and trace checker."""

from trellis._core import __version__, check_trace, make_plan, run_sim

__all__ = ["run_sim", "check_trace", "make_plan", "__version__"]
