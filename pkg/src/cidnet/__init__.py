"""Content-addressed storage, DHT routing, block exchange, and a
deterministic network simulator."""

__version__ = "0.1.0"
