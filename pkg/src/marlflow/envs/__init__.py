"""Built-in environments and the name registry."""
from ..errors import RegistryError
from .matrix import MatrixGame, MatrixGameConfig, masked_action_set
from .spread_grid import SpreadGrid, SpreadGridConfig, spread_grid_reward
from .turn_game import TurnGame, TurnGameConfig

REGISTRY = {
    "matrix": MatrixGame,
    "spread_grid": SpreadGrid,
    "turn_game": TurnGame,
}


def make_env(name: str, config: dict | None = None):
    """Build a registered environment from a plain config mapping."""
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise RegistryError(f"unknown environment {name!r}; valid names: {sorted(REGISTRY)}") from None
    return cls(config)


__all__ = [
    "REGISTRY", "make_env", "MatrixGame", "MatrixGameConfig", "masked_action_set",
    "SpreadGrid", "SpreadGridConfig", "spread_grid_reward", "TurnGame", "TurnGameConfig",
]
