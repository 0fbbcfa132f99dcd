"""Smart parking facility controller, embedded MQTT broker, and simulator."""

__version__ = "0.1.0"
