"""
Visual-inertial odometry estimation: on-manifold IMU preintegration,
structureless vision factors and batch Gauss-Newton smoothing.
"""

__version__ = '1.0.0'
