"""Occlusion-aware trajectory optimization around a tracked human.

The package is organised bottom-up: ``geom`` (primitives and penetration
queries), ``robot`` (kinematics), ``human`` (skeletons and capsule bodies),
``occlusion`` (camera visibility), ``predict`` (Kalman predictor), ``traj``
(Hermite waypoint trajectories), ``cost`` (objective terms), ``plan``
(optimizer and replanning loop), ``augment`` (dataset annotation) and
``cli`` (scenarios, commands and reports).
"""

__version__ = "0.1.0"
