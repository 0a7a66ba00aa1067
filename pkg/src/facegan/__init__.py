"""FACEGAN-style face reenactment toolkit.

Three-block pipeline: a landmark transformer moves source landmarks according
to driving action units, a heatmap-conditioned generator renders the reenacted
face with a segmentation head, and a background mixer blends the face back
into the source background through a learned mask.
"""

__version__ = "0.1.0"
