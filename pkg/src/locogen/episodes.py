"""Episode containers shared by the generation loop and the dataset format."""

from __future__ import annotations

from dataclasses import dataclass, field

from locogen.executor import Action, Observation, TrackingError, WorldState, observe

# Segment kinds, in provenance order of appearance.
SEG_LOCOMOTION = "locomotion"
SEG_TRANSIT = "transit-manipulation"
SEG_SKILL = "skill-replay"
SEGMENT_KINDS = (SEG_LOCOMOTION, SEG_TRANSIT, SEG_SKILL)

# Failure-stage labels for the stats report.
STAGE_INIT = "init-infeasible"
STAGE_IK = "ik-exhausted"
STAGE_LOCO_PLAN = "locomotion-plan"
STAGE_LOCO_EXEC = "locomotion-execute"
STAGE_MANIP_PLAN = "manipulation-plan"
STAGE_SKILL_IK = "skill-ik"
STAGE_PREDICATE = "predicate"
ALL_STAGES = (
    STAGE_INIT,
    STAGE_IK,
    STAGE_LOCO_PLAN,
    STAGE_LOCO_EXEC,
    STAGE_MANIP_PLAN,
    STAGE_SKILL_IK,
    STAGE_PREDICATE,
)


@dataclass(frozen=True)
class EpisodeStep:
    """One control step: the pre-action state, its observation, the stored
    (label) action, and the action actually executed (stored + noise)."""

    state: WorldState
    observation: Observation
    stored: Action
    executed: Action


@dataclass(frozen=True)
class Segment:
    kind: str
    start: int  # step index range [start, end)
    end: int
    skill_ids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Provenance:
    source_demo: str
    segments: tuple[Segment, ...]


@dataclass(frozen=True)
class Episode:
    steps: tuple[EpisodeStep, ...]
    final_state: WorldState
    success: bool
    seed: int
    tracking: TrackingError
    provenance: Provenance


class EpisodeRecorder:
    """Accumulates steps and provenance segments during generation."""

    def __init__(self, source_demo: str):
        self.steps: list[EpisodeStep] = []
        self.segments: list[Segment] = []
        self.source_demo = source_demo
        self._seg_start = 0
        self._seg_kind: str | None = None
        self._seg_skills: tuple[str, ...] = ()

    def begin_segment(self, kind: str, skill_ids=()) -> None:
        self.end_segment()
        self._seg_kind = kind
        self._seg_skills = tuple(skill_ids)
        self._seg_start = len(self.steps)

    def end_segment(self) -> None:
        if self._seg_kind is not None and len(self.steps) > self._seg_start:
            self.segments.append(
                Segment(self._seg_kind, self._seg_start, len(self.steps), self._seg_skills)
            )
        self._seg_kind = None

    def __call__(self, state: WorldState, stored: Action, executed: Action) -> None:
        self.steps.append(EpisodeStep(state, observe(state), stored, executed))

    def finish(self, final_state: WorldState, success: bool, seed: int, tracking) -> Episode:
        self.end_segment()
        return Episode(
            tuple(self.steps),
            final_state,
            success,
            seed,
            tracking,
            Provenance(self.source_demo, tuple(self.segments)),
        )


@dataclass
class GenStats:
    """Aggregate generation statistics (wall time lives outside the dataset
    file so identical seeds produce identical bytes)."""

    attempts: int = 0
    successes: int = 0
    failure_stages: dict = field(default_factory=dict)

    def record_failure(self, stage: str) -> None:
        self.failure_stages[stage] = self.failure_stages.get(stage, 0) + 1

    def to_dict(self) -> dict:
        return {
            "attempts": self.attempts,
            "successes": self.successes,
            "failure_stages": dict(sorted(self.failure_stages.items())),
        }

    @staticmethod
    def from_dict(d: dict) -> "GenStats":
        return GenStats(d["attempts"], d["successes"], dict(d["failure_stages"]))
