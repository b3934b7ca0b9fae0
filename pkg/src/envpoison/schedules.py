"""Iteration-indexed step sizes and penalty coefficients."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass(frozen=True)
class Decay:
    """``scale / (1 + k / horizon) ** power``."""

    scale: float
    horizon: float = 1000.0
    power: float = 1.0

    def __call__(self, k: int) -> float:
        return self.scale / (1.0 + k / self.horizon) ** self.power


@dataclass(frozen=True)
class Ramp:
    """``min(cap, start * (1 + k / horizon))``; non-decreasing in ``k``."""

    start: float
    horizon: float = 500.0
    cap: float = 50.0

    def __call__(self, k: int) -> float:
        return min(self.cap, self.start * (1.0 + k / self.horizon))


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, k: int) -> float:
        return self.value


_KINDS = {"decay": Decay, "ramp": Ramp, "constant": Constant}


def schedule_from_dict(spec) -> object:
    if isinstance(spec, (int, float)):
        return Constant(float(spec))
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _KINDS:
        raise ValueError(f"schedule kind must be one of {sorted(_KINDS)}, got {kind!r}")
    return _KINDS[kind](**{k: float(v) for k, v in spec.items()})


def schedule_to_dict(sched) -> dict:
    kind = {v: k for k, v in _KINDS.items()}[type(sched)]
    return {"kind": kind, **asdict(sched)}


@dataclass(frozen=True)
class Schedules:
    """Attacker step sizes (reward, Q-value, intensity), the growing gap
    penalty and the fixed intensity weight and value gap."""

    alpha: object = field(default_factory=lambda: Decay(1.0, 1000.0, 1.0))
    beta: object = field(default_factory=lambda: Decay(0.1, 200.0, 1.0))
    lam: object = field(default_factory=lambda: Decay(0.05, 1000.0, 1.0))
    rho_phi: object = field(default_factory=lambda: Ramp(0.1, 10.0, 50.0))
    rho_delta: float = 2.0
    epsilon_gap: float = 1.0

    def __post_init__(self):
        if self.rho_delta <= 0:
            raise ValueError("rho_delta must be positive")
        if self.epsilon_gap <= 0:
            raise ValueError("epsilon_gap must be positive")
        if isinstance(self.rho_phi, Decay) and self.rho_phi.power > 0:
            raise ValueError("rho_phi must be non-decreasing")

    def at(self, k: int) -> tuple:
        return self.alpha(k), self.beta(k), self.lam(k), self.rho_phi(k)

    def frozen(self) -> "Schedules":
        """Same penalties, all step sizes zero: the attacker never moves."""
        zero = Constant(0.0)
        return Schedules(zero, zero, zero, self.rho_phi, self.rho_delta, self.epsilon_gap)

    def to_dict(self) -> dict:
        return {
            "alpha": schedule_to_dict(self.alpha),
            "beta": schedule_to_dict(self.beta),
            "lambda": schedule_to_dict(self.lam),
            "rho_phi": schedule_to_dict(self.rho_phi),
            "rho_delta": self.rho_delta,
            "epsilon_gap": self.epsilon_gap,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedules":
        d = dict(d or {})
        base = cls()
        kw = {}
        for key, attr in (("alpha", "alpha"), ("beta", "beta"), ("lambda", "lam"), ("rho_phi", "rho_phi")):
            if key in d:
                kw[attr] = schedule_from_dict(d.pop(key))
        for key in ("rho_delta", "epsilon_gap"):
            if key in d:
                kw[key] = float(d.pop(key))
        if d:
            raise ValueError(f"unknown schedule keys: {sorted(d)}")
        return cls(**{**base.__dict__, **kw})
