"""terrascout: instant out-of-core exploration of massive LIDAR scans."""

__version__ = "0.1.0"
