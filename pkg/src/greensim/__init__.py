"""greensim: a deterministic greenhouse teleoperation sandbox.

A fixed-timestep greenhouse/rover simulator exposed through a topic-based
pub/sub broker and a safety-enforcing gateway, so a remote operator (CLI or
browser console) can drive a skid-steer rover with a 6-DOF arm, pluck
tomatoes, and exercise the whole remote-access stack: safety filtering,
e-stop, access slots, and shaped WAN latency.
"""

__version__ = "0.1.0"
