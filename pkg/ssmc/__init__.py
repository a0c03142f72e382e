"""SSM-based active vibration control: model reduction + extended LQR."""

__version__ = "1.0.0"
