"""Multi-robot task allocation with learned bigraph incentives.

Submodules: ``scenario`` (problem instances), ``sim`` (event-driven
simulator), ``graphs`` (state graphs), ``matching`` (bigraph matching and
baseline allocators), ``expert`` (hand-crafted incentive), ``policy``
(learned incentive network), ``trainer`` (evolution strategy), ``analysis``
(benchmarks and statistics) and ``cli``.
"""

__version__ = "0.1.0"
