"""Graph-based traffic signal control: simulator, GCN agents and experiment harness."""

import json

from . import _core
from ._core import (
    PreconditionError,
    RoadNetwork,
    Simulation,
    ensemble,
    grid_network,
    normalize_value,
    random_network,
)

__all__ = [
    "PreconditionError",
    "RoadNetwork",
    "Simulation",
    "config_hash",
    "default_config",
    "ensemble",
    "evaluate",
    "grid_network",
    "normalize_value",
    "random_network",
    "run_episode",
    "state_graph",
    "train",
]


def _dump(obj):
    if obj is None:
        return ""
    return obj if isinstance(obj, str) else json.dumps(obj)


def default_config():
    return json.loads(_core.default_config())


def config_hash(config=None):
    return _core.config_hash(_dump(config))


def state_graph(sim, standard_features=True):
    return json.loads(sim.state_graph(standard_features))


def train(config, agent, on_episode=None):
    """Returns the checkpoint document as a dict."""
    return json.loads(_core.train(_dump(config), agent, on_episode))


def evaluate(config, methods, igrl=None, dgrl=None, seeds=0):
    """Summary CSV text for the configured (or default) scenarios."""
    return _core.evaluate(_dump(config), list(methods), _dump(igrl), _dump(dgrl), seeds)


def run_episode(config, method, igrl=None, dgrl=None, **kw):
    return _core.run_episode(_dump(config), method, igrl=_dump(igrl), dgrl=_dump(dgrl), **kw)
