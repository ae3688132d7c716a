"""Feature-extraction client: cleans captions, resizes images, runs the
CLIP image/text encoders and writes MMF1 feature files for the trainer."""

__version__ = "0.1.0"
