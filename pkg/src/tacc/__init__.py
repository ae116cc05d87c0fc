"""Desk-scale ML task orchestration.

Four layers wired into one pipeline: ``schema`` (task descriptions),
``bundle`` (content-addressed execution bundles), ``sched`` (the decision
engine) and ``exec`` (runtime backends), plus the ``controld`` controller
service and the ``tcloud`` command-line client.
"""

__version__ = "0.1.0"
