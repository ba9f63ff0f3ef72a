"""Named random streams derived from one root seed."""

import logging
import os
import zlib
from typing import List, Optional

import numpy as np

from .constants import DEFAULT_SEED, SEED_ENV_VAR
from .errors import ConfigError


class RngStreams:
    """Derives independent generators from (root, purpose, example_id, restart).

    Streams with different purposes never share state, so the defender's
    noise stays independent of the adversary's however work is scheduled.
    """

    def __init__(self, root: int) -> None:
        if root < 0:
            raise ValueError(f"root seed must be >= 0, got {root}")
        self.root = root

    def generator(
        self, purpose: str, example_id: int = 0, restart: int = 0
    ) -> np.random.Generator:
        """Generator for one purpose/example/restart triple.

        Args:
            purpose: Stream name, e.g. "defender" or "adversary"
            example_id: Index of the example, >= 0
            restart: Restart index, >= 0

        Returns:
            Fresh generator; the same triple always yields the same stream
        """
        tag = zlib.crc32(purpose.encode("utf-8"))
        seq = np.random.SeedSequence([self.root, tag, example_id, restart])
        return np.random.default_rng(seq)

    def seed(self, purpose: str) -> int:
        """Integer seed for components that take a plain seed."""
        return int(self.generator(purpose).integers(2**31))


def resolve_seed(configured: Optional[int]) -> int:
    """Root seed: the environment variable wins over the configured value."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is not None and raw.strip():
        try:
            value = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV_VAR}={raw!r} is not an integer") from exc
        if value < 0:
            raise ConfigError(f"{SEED_ENV_VAR} must be >= 0, got {value}")
        logging.getLogger(__name__).info("Root seed %d taken from %s", value, SEED_ENV_VAR)
        return value
    return DEFAULT_SEED if configured is None else configured


def restart_generators(rng: np.random.Generator, restarts: int) -> List[np.random.Generator]:
    """Generators for restarts 0..restarts-1 of one attack.

    Restart 0 is rng itself. Later restarts are children spawned from rng's
    seed sequence, so restart r depends only on its index and the parent
    stream, never on what earlier restarts consumed.
    """
    if restarts < 1:
        raise ValueError(f"restarts must be >= 1, got {restarts}")
    return [rng, *rng.spawn(restarts - 1)]
