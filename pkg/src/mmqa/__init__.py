"""Engine for turning text-only scientific QA pairs into multi-modal ones,
scoring the results, refining them in a closed loop, and benchmarking
automated judges against human annotation."""

__version__ = "0.1.0"
