"""layoutkit: Manhattan room-layout estimation toolkit for equirectangular panoramas."""

__version__ = "0.1.0"
