"""
stitlab package - Simulation of STIT tessellations in bounded windows by
three equivalent constructions, with an independent oracle for the cell
count law and a statistical test kit to cross-validate them
"""

__version__ = "0.1.0"
