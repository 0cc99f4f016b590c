"""Bounded pair potentials V in C_0(R^d).

A Potential is a frozen, hashable value so that bond matrices built from it
can be cached. Radial kinds act on |x|; ``tabulated`` is one-dimensional and
linearly interpolated, zero outside its nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("zero", "gaussian", "bump", "tabulated")


@dataclass(frozen=True)
class Potential:
    kind: str = "zero"
    g: float = 0.0
    sigma: float = 1.0
    nodes: tuple = field(default=(), repr=False)
    values: tuple = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kind == "tabulated":
            x = np.asarray(self.nodes, float)
            if x.ndim != 1 or len(x) < 2 or len(x) != len(self.values):
                raise ValueError("tabulated potential needs matching 1-d nodes and values")
            if np.any(np.diff(x) <= 0):
                raise ValueError("tabulated nodes must increase")
            if self.values[0] != 0 or self.values[-1] != 0:
                raise ValueError("tabulated values must vanish at both ends (C_0 class)")

    @classmethod
    def gaussian(cls, g, sigma=1.0):
        return cls("gaussian", float(g), float(sigma))

    @classmethod
    def bump(cls, g, sigma=1.0):
        return cls("bump", float(g), float(sigma))

    @classmethod
    def tabulated(cls, nodes, values):
        return cls("tabulated", 0.0, 1.0, tuple(map(float, nodes)), tuple(map(float, values)))

    @classmethod
    def zero(cls):
        return cls()

    @property
    def sup_norm(self):
        if self.kind == "zero":
            return 0.0
        if self.kind == "tabulated":
            return float(np.max(np.abs(self.values)))
        return abs(self.g)

    @property
    def even(self):
        if self.kind != "tabulated":
            return True
        x, v = np.asarray(self.nodes), np.asarray(self.values)
        return bool(np.allclose(x, -x[::-1]) and np.allclose(v, v[::-1]))

    @property
    def is_zero(self):
        return self.sup_norm == 0.0

    def __call__(self, x):
        """Evaluate at points x; the last axis holds the d components when d > 1."""
        x = np.asarray(x, float)
        if self.kind == "zero":
            return np.zeros(x.shape[:-1] if x.ndim > 1 else x.shape)
        if self.kind == "tabulated":
            if x.ndim > 1:
                if x.shape[-1] != 1:
                    raise ValueError("tabulated potentials are one-dimensional")
                x = x[..., 0]
            return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)
        r2 = np.sum(x**2, axis=-1) if x.ndim > 1 else x**2
        r2 = r2 / self.sigma**2
        if self.kind == "gaussian":
            return self.g * np.exp(-r2)
        out = np.zeros_like(r2)
        inside = r2 < 1
        # normalised so that the value at the origin is g
        out[inside] = self.g * np.exp(1.0 - 1.0 / (1.0 - r2[inside]))
        return out

    def to_dict(self):
        d = {"kind": self.kind, "g": self.g, "sigma": self.sigma}
        if self.kind == "tabulated":
            d["nodes"] = list(self.nodes)
            d["values"] = list(self.values)
        return d
