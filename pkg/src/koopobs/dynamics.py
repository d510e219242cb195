"""Nonlinear systems ``x' = f(x), y = h(x)`` and fixed-step RK4 trajectories."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .exprlang import EvaluationError, ExprVector, compile_exprs

DEFAULT_DT = 1e-3
DEFAULT_BOX = (-2.0, 2.0)


class IntegrationError(RuntimeError):
    """Integration aborted; carries the time and state of the failure."""

    def __init__(self, message: str, time: float, state: np.ndarray):
        state = np.asarray(state, dtype=float)
        super().__init__(f"{message} at t={time:.6g}, x={np.array2string(state, precision=6)}")
        self.time = time
        self.state = state


@dataclass(frozen=True, eq=False)
class NonlinearSystem:
    """Autonomous system with vector field ``f`` and measurement ``h``.

    ``guard`` lists 1-based coordinates that must stay at or above
    ``guard_floor`` during integration (amplitudes that appear in
    denominators, for instance).
    """

    f: ExprVector
    h: ExprVector
    domain_box: tuple[tuple[float, float], ...] | None = None
    name: str = "system"
    guard: tuple[int, ...] = ()
    guard_floor: float = 1e-6
    _f_math: object = field(init=False, repr=False)
    _h_math: object = field(init=False, repr=False)
    _f_np: object = field(init=False, repr=False)
    _h_np: object = field(init=False, repr=False)

    def __post_init__(self):
        n = self.f.dim
        if len(self.f) != n:
            raise ValueError(f"vector field has {len(self.f)} components for dimension {n}")
        if self.h.dim != n:
            raise ValueError("measurement and vector field disagree on the state dimension")
        if len(self.h) < 1:
            raise ValueError("at least one measurement is required")
        box = self.domain_box or tuple(DEFAULT_BOX for _ in range(n))
        box = tuple((float(lo), float(hi)) for lo, hi in box)
        if len(box) != n or any(lo > hi for lo, hi in box):
            raise ValueError("domain box must give one [lo, hi] interval per coordinate")
        object.__setattr__(self, "domain_box", box)
        object.__setattr__(self, "guard", tuple(int(g) for g in self.guard))
        if any(not 1 <= g <= n for g in self.guard):
            raise ValueError("guarded coordinates must be within the state dimension")
        object.__setattr__(self, "_f_math", compile_exprs(self.f.components, "math"))
        object.__setattr__(self, "_h_math", compile_exprs(self.h.components, "math"))
        object.__setattr__(self, "_f_np", compile_exprs(self.f.components, "numpy"))
        object.__setattr__(self, "_h_np", compile_exprs(self.h.components, "numpy"))

    @property
    def n(self) -> int:
        return self.f.dim

    @property
    def q(self) -> int:
        return len(self.h)

    def vector_field(self, x: Sequence[float]) -> np.ndarray:
        return np.array(self._f_math(list(map(float, x))))

    def measure(self, x: Sequence[float]) -> np.ndarray:
        return np.array(self._h_math(list(map(float, x))))

    def vector_field_many(self, X: np.ndarray) -> np.ndarray:
        return self._f_np(X)

    def measure_many(self, X: np.ndarray) -> np.ndarray:
        return self._h_np(X)

    def with_measurement(self, h: ExprVector, name: str | None = None) -> "NonlinearSystem":
        return replace(self, h=h, name=name or self.name)

    def check_domain(self, samples: int = 100, seed: int = 0) -> None:
        """Evaluate ``f`` and ``h`` on random points of the domain box."""
        X = sample_box(self.domain_box, samples, np.random.default_rng(seed))
        self.vector_field_many(X)
        self.measure_many(X)

    def describe(self) -> dict:
        return {
            "name": self.name, "n": self.n, "q": self.q,
            "f": self.f.texts(), "h": self.h.texts(),
            "domain": [list(b) for b in self.domain_box],
        }


def sample_box(box: Sequence[tuple[float, float]], m: int, rng: np.random.Generator) -> np.ndarray:
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo + (hi - lo) * rng.random((m, len(box)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    measurements: np.ndarray

    def __post_init__(self):
        m = len(self.times)
        if self.states.shape[0] != m or self.measurements.shape[0] != m:
            raise ValueError("times, states and measurements must have equal lengths")
        if m > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def q(self) -> int:
        return self.measurements.shape[1]

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def header(self) -> list[str]:
        return ["t"] + [f"x{i}" for i in range(1, self.n + 1)] + [f"y{j}" for j in range(1, self.q + 1)]

    def to_csv(self, path: str | Path | None = None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for t, x, y in zip(self.times, self.states, self.measurements):
            writer.writerow([format(float(v), ".17g") for v in (t, *x, *y)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        return cls.parse_csv(Path(path).read_text())

    @classmethod
    def parse_csv(cls, text: str) -> "Trajectory":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        if not header or header[0] != "t":
            raise ValueError("trajectory CSV must start with a 't' column")
        n = sum(1 for h in header if h.startswith("x"))
        data = np.array([[float(v) for v in row] for row in body], dtype=float).reshape(len(body), len(header))
        return cls(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:])


def _time_grid(t_final: float, dt: float) -> np.ndarray:
    if t_final == 0.0:
        return np.zeros(1)
    steps = int(math.floor(t_final / dt + 1e-9))
    grid = np.arange(steps + 1) * dt
    if t_final - grid[-1] > 1e-9 * max(1.0, t_final):
        grid = np.append(grid, t_final)
    else:
        grid[-1] = t_final
    return grid


def flow(sys: NonlinearSystem, x0: Sequence[float], t_final: float, dt: float = DEFAULT_DT,
         stride: int = 1) -> Trajectory:
    """Integrate with classical fixed-step RK4 and record every ``stride``-th step.

    The final step is always stored. Raises :class:`IntegrationError` on an
    evaluation fault, a non-finite state, or a guarded coordinate falling
    below the floor.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be non-negative")
    if stride < 1:
        raise ValueError("stride must be at least 1")
    x = np.array(x0, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"initial state must have {sys.n} coordinates")
    F = sys._f_math
    H = sys._h_math
    guard = [g - 1 for g in sys.guard]
    grid = _time_grid(float(t_final), float(dt))

    def check(t, state):
        if not np.all(np.isfinite(state)):
            raise IntegrationError("state became non-finite", t, state)
        for g in guard:
            if state[g] < sys.guard_floor:
                raise IntegrationError(f"guarded coordinate x{g + 1} fell below {sys.guard_floor:g}", t, state)

    def rhs(t, state):
        try:
            return np.array(F(state.tolist()))
        except (EvaluationError, ZeroDivisionError, ValueError, OverflowError) as exc:
            raise IntegrationError(f"vector field evaluation failed ({exc})", t, state) from exc

    def measure(t, state):
        try:
            return H(state.tolist())
        except (EvaluationError, ZeroDivisionError, ValueError, OverflowError) as exc:
            raise IntegrationError(f"measurement evaluation failed ({exc})", t, state) from exc

    check(0.0, x)
    keep_t, keep_x, keep_y = [grid[0]], [x.copy()], [measure(grid[0], x)]
    last = len(grid) - 1
    for k in range(last):
        t, h = grid[k], grid[k + 1] - grid[k]
        k1 = rhs(t, x)
        k2 = rhs(t, x + 0.5 * h * k1)
        k3 = rhs(t, x + 0.5 * h * k2)
        k4 = rhs(t, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        check(grid[k + 1], x)
        if (k + 1) % stride == 0 or k + 1 == last:
            keep_t.append(grid[k + 1])
            keep_x.append(x.copy())
            keep_y.append(measure(grid[k + 1], x))
    return Trajectory(np.array(keep_t), np.array(keep_x), np.array(keep_y, dtype=float).reshape(len(keep_t), sys.q))


def measurement_distance(t1: Trajectory, t2: Trajectory) -> float:
    """Largest infinity-norm gap between the two measurement histories."""
    if t1.times.shape != t2.times.shape or not np.array_equal(t1.times, t2.times):
        raise ValueError("trajectories are sampled on different time grids")
    if t1.q != t2.q:
        raise ValueError("trajectories carry different numbers of measurements")
    return float(np.max(np.abs(t1.measurements - t2.measurements))) if t1.times.size else 0.0

