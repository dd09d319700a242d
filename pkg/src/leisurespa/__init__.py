"""Space-time accessibility to leisure opportunities.

Modules: ``ingest`` (input parsing), ``spatial`` (hex cells), ``router``
(car and transit travel times), ``access`` (feasible sets), ``behavior``
(selectivity, diversity, weighted statistics), ``pathmodel`` (recursive
path models), ``synth`` (synthetic data and reference oracles),
``pipeline`` and ``cli``.
"""

__version__ = "0.1.0"
