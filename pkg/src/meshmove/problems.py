"""Problem instances: mixed-Gaussian Poisson data, Gaussian-bump Burgers data, and input states."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgument
from .fem import PointLocator, VectorField
from .mesh import DomainSpec


def stream(seed: int, *names) -> np.random.Generator:
    """Independent generator for a named sub-stream of ``seed``."""
    keys = [int(seed)]
    for name in names:
        if isinstance(name, (int, np.integer)):
            keys.append(int(name))
        else:
            keys.append(int.from_bytes(hashlib.sha256(str(name).encode()).digest()[:4], "little"))
    return np.random.default_rng(np.random.SeedSequence(keys))


@dataclass(frozen=True)
class GaussianMixture:
    """``u = sum_k a_k exp(-|x - c_k|^2 / w_k^2)``."""

    centers: tuple
    widths: tuple
    amplitudes: tuple

    def __post_init__(self):
        if any(w <= 0 for w in self.widths):
            raise InvalidArgument("Gaussian widths must be positive")
        if not (len(self.centers) == len(self.widths) == len(self.amplitudes)):
            raise InvalidArgument("centers, widths and amplitudes must have equal length")

    def _terms(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        for (cx, cy), w, a in zip(self.centers, self.widths, self.amplitudes):
            r2 = (x - cx) ** 2 + (y - cy) ** 2
            yield a * np.exp(-r2 / w**2), r2, w

    def u(self, x, y):
        return sum(g for g, _, _ in self._terms(x, y)) + 0.0 * np.asarray(x, dtype=float)

    def f(self, x, y):
        """Source ``-lap u`` in closed form."""
        return sum(g * (4.0 / w**2 - 4.0 * r2 / w**4) for g, r2, w in self._terms(x, y)) + 0.0 * np.asarray(x, dtype=float)

    def to_dict(self) -> dict:
        return {
            "centers": [list(map(float, c)) for c in self.centers],
            "widths": [float(w) for w in self.widths],
            "amplitudes": [float(a) for a in self.amplitudes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianMixture":
        return cls(tuple(tuple(c) for c in d["centers"]), tuple(d["widths"]), tuple(d["amplitudes"]))


def random_mixture(rng: np.random.Generator, domain: DomainSpec,
                   n_range=(1, 3), width_range=(0.05, 0.25), amp_range=(0.5, 1.5), core=0.2) -> GaussianMixture:
    """Draw 1-3 Gaussians with centres in the domain core (``core`` shrinks the bounding box)."""
    k = int(rng.integers(n_range[0], n_range[1] + 1))
    lo, hi = domain.bounding_box
    span = hi - lo
    centers = []
    while len(centers) < k:
        c = lo + span * (core + (1 - 2 * core) * rng.random(2))
        if domain.contains(c[None, :])[0] and domain.distance_to_boundary(c[None, :])[0] >= 0.1 * span.min():
            centers.append((float(c[0]), float(c[1])))
    widths = tuple(float(w) for w in rng.uniform(*width_range, size=k))
    amps = tuple(float(a) for a in rng.uniform(*amp_range, size=k))
    return GaussianMixture(tuple(centers), widths, amps)


@dataclass(frozen=True)
class BurgersSpec:
    """Gaussian-bump initial velocity ``amplitude * exp(-|x - c|^2 / w^2) * direction``."""

    center: tuple
    width: float
    amplitude: float
    direction: tuple
    nu: float
    dt: float
    steps: int

    def __post_init__(self):
        if self.width <= 0 or self.nu <= 0 or self.dt <= 0 or self.steps < 1:
            raise InvalidArgument("Burgers spec needs positive width, nu, dt and steps >= 1")

    def u0(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = self.amplitude * np.exp(-((x - self.center[0]) ** 2 + (y - self.center[1]) ** 2) / self.width**2)
        return np.stack([g * self.direction[0], g * self.direction[1]], axis=-1)

    def to_dict(self) -> dict:
        return {
            "center": list(map(float, self.center)), "width": float(self.width),
            "amplitude": float(self.amplitude), "direction": list(map(float, self.direction)),
            "nu": float(self.nu), "dt": float(self.dt), "steps": int(self.steps),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BurgersSpec":
        return cls(tuple(d["center"]), d["width"], d["amplitude"], tuple(d["direction"]), d["nu"], d["dt"], d["steps"])


def random_burgers(rng: np.random.Generator, nu_range, dt: float, steps: int) -> BurgersSpec:
    center = tuple(float(c) for c in rng.uniform(0.3, 0.7, size=2))
    angle = float(rng.uniform(0, 2 * np.pi))
    return BurgersSpec(
        center=center,
        width=float(rng.uniform(0.1, 0.2)),
        amplitude=float(rng.uniform(0.8, 1.2)),
        direction=(float(np.cos(angle)), float(np.sin(angle))),
        nu=float(rng.uniform(*nu_range)),
        dt=float(dt),
        steps=int(steps),
    )


@dataclass(eq=False)
class InputState:
    """
    What a deformer sees of a problem.

    ``sampler`` maps points of shape (P, 2) to values of shape (P, C) and is
    zero outside ``domain``; ``params`` is the physical parameter vector.
    """

    kind: str
    sampler: Callable
    domain: DomainSpec
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.kind not in ("poisson_source", "burgers_velocity"):
            raise InvalidArgument(f"unknown input-state kind {self.kind!r}")
        self.params = np.atleast_1d(np.asarray(self.params, dtype=float))

    @property
    def channels(self) -> int:
        return 1 if self.kind == "poisson_source" else 2

    def sample(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        vals = np.asarray(self.sampler(points), dtype=float).reshape(len(points), -1)
        inside = self.domain.contains(points, tol=1e-12)
        vals[~inside] = 0.0
        return vals


def poisson_state(mixture: GaussianMixture, domain: DomainSpec, density: float) -> InputState:
    return InputState("poisson_source", lambda p: mixture.f(p[:, 0], p[:, 1]), domain, [density])


def burgers_state(velocity: VectorField, nu: float, density: float) -> InputState:
    locator = PointLocator(velocity.mesh)
    values = velocity.values

    def sampler(points):
        return locator.interpolate(values, points)[0]

    return InputState("burgers_velocity", sampler, velocity.mesh.domain, [nu, density])
