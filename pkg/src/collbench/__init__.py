"""collbench: cluster-free benchmarking of collective communication algorithms.

The package is organised around one central structure, the per-rank Schedule:

* ``model``        -- collectives, datatypes, reduce ops, naive reference semantics
* ``algorithms``   -- schedule generators for the reference algorithms + cost terms
* ``fabric``       -- in-process execution of schedules with real payloads and timers
* ``netsim``       -- deterministic virtual-time alpha-beta-gamma cost simulator
* ``tracer``       -- topology-aware classification of scheduled traffic
* ``orchestrator`` -- descriptor parsing, run-matrix expansion, results tree, replay
* ``analysis``     -- aggregation, gain matrices, tuning tables, figure emission
* ``wizard``/``cli`` -- interactive and flag-based front ends
"""

__version__ = "0.1.0"
