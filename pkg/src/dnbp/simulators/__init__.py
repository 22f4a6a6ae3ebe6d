"""Seedable double-pendulum and spider environments with clutter and rendering."""
