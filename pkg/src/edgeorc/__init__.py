"""Three-tier edge orchestration: cloud master, edge gateways, edge
devices, glued by a resource-offer protocol and failure-recovery state
machines, runnable against a deterministic simulated network or real
processes.

Importing the package populates the canonical-encoding registry, so
decode works for every domain type regardless of which module you use.
"""

from . import (  # noqa: F401  (registration side effects)
    codec,
    config,
    domain,
    executor,
    gateway,
    master,
    messages,
    persistence,
    scheduler,
    simnet,
)

__version__ = "0.1.0"
