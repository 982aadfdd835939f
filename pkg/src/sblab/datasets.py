"""Seeded boundary samplers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

KINDS = ("shifted_gaussian", "gaussian_mixture", "checkerboard", "two_moons")


@dataclass
class Sampler:
    """An i.i.d. sampler for one boundary distribution.

    ``params`` by kind:

    * ``shifted_gaussian``: ``a`` (scalar or length-d vector; N(a, I))
    * ``gaussian_mixture``: ``centers`` (m x d), ``sigma``
    * ``checkerboard``: ``cells`` (per axis), ``scale`` (half-width)
    * ``two_moons``: ``noise``
    """

    kind: str
    d: int
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown sampler kind {self.kind!r}")
        if self.d < 1:
            raise InvalidArgument("d must be >= 1")
        if self.kind in ("checkerboard", "two_moons") and self.d != 2:
            raise InvalidArgument(f"{self.kind} is only defined for d=2")
        if self.kind == "gaussian_mixture":
            centers = np.atleast_2d(np.asarray(self.params.get("centers"), dtype=np.float64))
            if centers.shape[1] != self.d:
                raise InvalidArgument("mixture centers must have d columns")

    def rng(self, stream: int = 0) -> np.random.Generator:
        """Independent generator for ``stream``, derived from the sampler seed."""
        return np.random.default_rng(np.random.SeedSequence([int(self.seed), int(stream)]))

    @property
    def shift(self) -> np.ndarray:
        a = self.params.get("a", 1.0)
        return np.broadcast_to(np.asarray(a, dtype=np.float64), (self.d,)).copy()

    def draw(self, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
        return draw(self, n, rng)

    def to_config(self) -> dict:
        params = {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()}
        return {"kind": self.kind, "d": self.d, "params": params, "seed": self.seed}

    @classmethod
    def from_config(cls, cfg: dict) -> "Sampler":
        return cls(cfg["kind"], int(cfg["d"]), dict(cfg.get("params", {})), int(cfg.get("seed", 0)))


def draw(sampler: Sampler, n: int, rng: np.random.Generator | None = None) -> np.ndarray:
    """``n`` i.i.d. draws as an (n, d) float64 array."""
    if n < 1:
        raise InvalidArgument("n must be >= 1")
    if rng is None:
        rng = sampler.rng()
    p = sampler.params
    d = sampler.d
    if sampler.kind == "shifted_gaussian":
        return sampler.shift + rng.standard_normal((n, d))
    if sampler.kind == "gaussian_mixture":
        centers = np.atleast_2d(np.asarray(p["centers"], dtype=np.float64))
        sigma = float(p.get("sigma", 1.0))
        idx = rng.integers(0, centers.shape[0], n)
        return centers[idx] + sigma * rng.standard_normal((n, d))
    if sampler.kind == "checkerboard":
        return _checkerboard(n, int(p.get("cells", 4)), float(p.get("scale", 2.0)), rng)
    return _two_moons(n, float(p.get("noise", 0.05)), rng)


def _checkerboard(n, cells, scale, rng):
    # pick a black cell (i + j even) uniformly, then a uniform point inside it
    ij = np.array([(i, j) for i in range(cells) for j in range(cells) if (i + j) % 2 == 0])
    pick = ij[rng.integers(0, len(ij), n)]
    width = 2.0 * scale / cells
    return -scale + (pick + rng.uniform(0.0, 1.0, (n, 2))) * width


def checkerboard_is_black(x, cells=4, scale=2.0) -> np.ndarray:
    width = 2.0 * scale / cells
    ij = np.floor((np.asarray(x) + scale) / width).astype(int)
    inside = np.all((ij >= 0) & (ij < cells), axis=1)
    return inside & (ij.sum(axis=1) % 2 == 0)


def _two_moons(n, noise, rng):
    upper = rng.random(n) < 0.5
    theta = rng.uniform(0.0, np.pi, n)
    x = np.where(upper, np.cos(theta), 1.0 - np.cos(theta))
    y = np.where(upper, np.sin(theta), 0.5 - np.sin(theta))
    return np.stack([x, y], axis=1) + noise * rng.standard_normal((n, 2))


def gaussian_pair(d: int, a=1.0, seed: int = 0):
    """(data, prior) samplers for N(a, I) and N(-a, I)."""
    a_vec = np.broadcast_to(np.asarray(a, dtype=np.float64), (d,)).copy()
    data = Sampler("shifted_gaussian", d, {"a": a_vec}, seed)
    prior = Sampler("shifted_gaussian", d, {"a": -a_vec}, seed + 1)
    return data, prior
