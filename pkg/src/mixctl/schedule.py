"""Update schedules: at which steps the mixture is re-solved, and with what
probing budget.

Geometric schedules share the doubling tail {64, 128, 256, 512, 1024} and an
update at step 0, differing only in how densely they front-load early updates:

    none   {0} + tail                          (6 updates at T=2048)
    light  {0, 8, 16, 32} + tail               (9 updates)
    dense  {0, 2, 4, 8, 16, 32} + tail         (11 updates)

``fixed:H`` updates every H steps with the probe spanning the whole interval
(c_t = H, uncapped); geometric and explicit schedules cap the probe at
c_max = 128 via c_t = min(H_t, c_max).
"""

from __future__ import annotations

from dataclasses import dataclass

GEOMETRIC_TAIL = (64, 128, 256, 512, 1024)
GEOMETRIC_WARMUPS = {
    "none": (),
    "light": (8, 16, 32),
    "dense": (2, 4, 8, 16, 32),
}
DEFAULT_C_MAX = 128


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    update_steps: tuple[int, ...]
    kind: str
    t_total: int
    c_max: int = DEFAULT_C_MAX
    # fixed-interval schedules probe across the full interval, uncapped
    cap_probe: bool = True

    def __post_init__(self):
        if not self.update_steps:
            return
        steps = self.update_steps
        if list(steps) != sorted(set(steps)):
            raise ScheduleError("update steps must be strictly increasing")
        if steps[0] < 0 or steps[-1] >= self.t_total:
            raise ScheduleError("update steps must lie in [0, t_total)")

    @property
    def n_updates(self) -> int:
        return len(self.update_steps)

    def horizon(self, t: int) -> int:
        """H_t: steps until the next update, or until t_total for the last."""
        steps = self.update_steps
        if t not in steps:
            raise ScheduleError(f"step {t} is not an update step")
        i = steps.index(t)
        nxt = steps[i + 1] if i + 1 < len(steps) else self.t_total
        return nxt - t

    def probe_budget(self, t: int) -> int:
        """c_t = min(H_t, c_max), or H_t uncapped for fixed-interval schedules."""
        h = self.horizon(t)
        return min(h, self.c_max) if self.cap_probe else h


def build_schedule(kind: str, t_total: int, c_max: int = DEFAULT_C_MAX) -> Schedule:
    """Construct a schedule from its CLI spelling.

    kind: "none" | "light" | "dense" | "fixed:H" | "explicit:a,b,c"
    """
    if t_total < 2:
        raise ScheduleError("t_total must be >= 2")
    if kind in GEOMETRIC_WARMUPS:
        steps = sorted({0, *GEOMETRIC_WARMUPS[kind], *GEOMETRIC_TAIL})
        steps = [s for s in steps if s < t_total]
        return Schedule(tuple(steps), kind=kind, t_total=t_total, c_max=c_max)
    if kind.startswith("fixed:"):
        try:
            h = int(kind.split(":", 1)[1])
        except ValueError as exc:
            raise ScheduleError(f"bad fixed interval in {kind!r}") from exc
        if h <= 0 or h >= t_total:
            raise ScheduleError(f"fixed interval must lie in (0, t_total), got {h}")
        return Schedule(tuple(range(0, t_total, h)), kind=kind, t_total=t_total,
                        c_max=c_max, cap_probe=False)
    if kind.startswith("explicit:"):
        try:
            steps = sorted({int(s) for s in kind.split(":", 1)[1].split(",") if s.strip()})
        except ValueError as exc:
            raise ScheduleError(f"bad explicit step list in {kind!r}") from exc
        if not steps:
            raise ScheduleError("explicit schedule needs at least one step")
        if steps[0] < 0 or steps[-1] >= t_total:
            raise ScheduleError("explicit steps must lie in [0, t_total)")
        return Schedule(tuple(steps), kind=kind, t_total=t_total, c_max=c_max)
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def probe_budget(schedule: Schedule, t: int) -> int:
    return schedule.probe_budget(t)
