"""Group penalties rho_lambda and their derivatives."""

from __future__ import annotations

from dataclasses import dataclass, replace

FAMILIES = ("lasso", "scad")


@dataclass(frozen=True)
class Penalty:
    """A penalty family with level ``lam`` (and SCAD shape ``a``)."""

    family: str = "lasso"
    lam: float = 0.0
    a: float = 3.7

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if not self.lam >= 0:
            raise ValueError("lambda must be nonnegative")
        if not self.a > 2:
            raise ValueError("SCAD shape parameter must exceed 2")

    def with_lambda(self, lam: float) -> "Penalty":
        return replace(self, lam=float(lam))

    def rho(self, t: float) -> float:
        if t < 0:
            raise ValueError("penalty argument must be nonnegative")
        lam, a = self.lam, self.a
        if self.family == "lasso" or t <= lam:
            return lam * t
        if t <= a * lam:
            return (2 * a * lam * t - t * t - lam * lam) / (2 * (a - 1))
        return (a + 1) * lam * lam / 2

    def rho_prime(self, t: float) -> float:
        if t < 0:
            raise ValueError("penalty argument must be nonnegative")
        lam, a = self.lam, self.a
        if self.family == "lasso" or t <= lam:
            return lam
        if t <= a * lam:
            return (a * lam - t) / (a - 1)
        return 0.0

    def to_string(self) -> str:
        if self.family == "scad":
            return f"scad:a={self.a!r}"
        return "lasso"


def parse_penalty(text: str, lam: float = 0.0) -> Penalty:
    """Parse ``lasso``, ``scad`` or ``scad:a=3.7``."""
    family, _, opts = text.strip().lower().partition(":")
    kwargs = {}
    if opts:
        for item in opts.split(","):
            key, sep, value = item.partition("=")
            if not sep or key.strip() != "a":
                raise ValueError(f"bad penalty option {item!r}")
            kwargs["a"] = float(value)
        if family != "scad":
            raise ValueError("only the SCAD penalty takes options")
    return Penalty(family, float(lam), **kwargs)
