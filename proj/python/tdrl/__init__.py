"""Desk-scale lab for Trojan data-poisoning attacks on actor-critic agents."""

from ._tdrl import *  # noqa: F401,F403
from ._tdrl import __version__  # noqa: F401
