"""
A package for multi-feature implicit fields: geometric oracles, a four-branch
implicit model, shape reconstruction, pose transfer and grasp learning.
"""

__version__ = "0.1.0"
