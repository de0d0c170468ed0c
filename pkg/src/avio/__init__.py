"""Acoustic-visual-inertial odometry: filter, simulator and evaluation tools."""

__version__ = "0.1.0"
