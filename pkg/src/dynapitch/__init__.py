"""Hardware-free robot-soccer stack built around a Dynamixel-style servo bus."""

__version__ = "0.1.0"
