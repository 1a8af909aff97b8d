"""Multi-subject adversarial domain adaptation for few-shot seizure detection."""

__version__ = "0.1.0"
