"""
TutorNet curriculum

Error-driven curriculum training for density-map regression: a tutoring
network emits per-pixel weights that re-weight the main network's loss, and
ground-truth density maps are multiplied by a scale factor.
"""

__version__ = "1.0.0"
