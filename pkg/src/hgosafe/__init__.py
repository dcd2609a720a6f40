"""Output-feedback safety verification for feedback-linearizable systems.

Bounds the gap between state-feedback and high-gain-observer output-feedback
trajectories and uses that gap to shrink the safe set before a level-set
backward reachability computation.
"""

__version__ = "0.1.0"
