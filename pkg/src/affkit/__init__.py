"""affkit: affordance mining, segmentation training, and grasp selection."""

__version__ = "0.1.0"
