"""Semi-supervised action recognition with super images and two temporal pathways."""

__version__ = "0.1.0"

UNLABELED = -1
