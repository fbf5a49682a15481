"""Learning observer models of legible robot motion.

Modules: ``geom`` (paths, resampling, projection), ``envgen`` (random
scenes and trajectories), ``oracles`` (hand-crafted legibility scores),
``nn`` (a small dense network with its optimizers), ``slotv`` and ``trex``
(the two learning frameworks), ``config`` and ``cli`` (experiments).
"""

__version__ = "0.1.0"
