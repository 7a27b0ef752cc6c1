"""Quickest change detection by Q-learning.

Configuration trees are plain dicts with the same layout as the YAML files
accepted by the ``qcdq`` command line tool.
"""

import json

from . import _qcdq
from ._qcdq import NumericalError, ValidationError

__all__ = [
    "NumericalError",
    "ValidationError",
    "config_hash",
    "default_config",
    "recipe_config",
    "recipe_names",
    "resolve_config",
    "run",
    "stream_seed",
    "summarize",
]


def default_config():
    return json.loads(_qcdq.default_config())


def recipe_names():
    return list(_qcdq.recipe_names())


def recipe_config(name):
    """User-level config of a named recipe, before defaults are merged."""
    return json.loads(_qcdq.recipe_config(name))


def resolve_config(user, overrides=None):
    """Defaults overlaid with ``user``, then dotted overrides such as
    ``{"train.n_regens": "2e4"}``. Unknown keys raise ValidationError."""
    overrides = {k: str(v) for k, v in (overrides or {}).items()}
    return json.loads(_qcdq.resolve_config(json.dumps(user), overrides))


def config_hash(config):
    return _qcdq.config_hash(json.dumps(config))


def run(subcommand, config, recipe="", threads=1):
    """Runs a subcommand on a resolved config, writes its artifacts under
    ``config["output_dir"]`` and returns the summary."""
    return json.loads(_qcdq.run(subcommand, json.dumps(config), recipe, threads))


def summarize(config, component=0):
    """Asymptotic summary (means, roots, optimal shift) of one SIS component."""
    return json.loads(_qcdq.summarize(json.dumps(config), component))


def stream_seed(master, tag, index):
    return _qcdq.stream_seed(master, tag, index)
