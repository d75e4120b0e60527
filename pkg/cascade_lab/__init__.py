"""Simulation and analysis toolkit for b-adic independent cascade functions"""

__version__ = "0.1.0"
