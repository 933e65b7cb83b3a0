"""camprompt: weakly supervised segmentation via CAM point prompts.

Trains a multi-label image classifier from image-level labels only, turns
its class activation maps into point prompts for a pluggable promptable
segmentation backend, and evaluates or exports the resulting masks.
"""

__version__ = "0.1.0"
