"""Verification and debugging engine for Web-application navigation models.

Model-checks temporal properties over a rewrite-theory semantics of browsers,
server and messages, and backward-slices refutation traces against filtering
patterns for interactive debugging.
"""

__version__ = "0.1.0"
