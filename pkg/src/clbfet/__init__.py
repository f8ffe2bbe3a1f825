"""Safe trajectory tracking for a quadrotor with an event-triggered GP disturbance model."""

__version__ = "0.1.0"
