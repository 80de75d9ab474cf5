"""Data-driven analysis and co-design of delayed, dynamically event-triggered sampled-data loops."""

__version__ = "0.1.0"
