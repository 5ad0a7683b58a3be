"""Pipeline configuration with file loading and CLI overrides."""

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline. Defaults documented in the README."""

    # grounding
    epsilon: float = 0.01            # contact threshold between clouds, meters
    gamma: float = 0.05              # minimum hand path per contact window, meters
    debounce_frames: int = 3         # contact windows shorter than this are noise
    motion_threshold: float = 0.012  # object displacement that opens the manipulation phase, meters
    max_waypoints: int = 100         # trajectory downsample cap

    # learner
    demos_per_skill: int = 5
    max_keypoints: int = 10
    region_margin: float = 0.02          # normalized inflation of grasp region bounds
    orientation_margin_deg: float = 10.0  # cone inflation beyond observed spread
    residual_warning: float = 0.02       # meters; fits worse than this get flagged

    # adapter
    adapter_iterations: int = 4   # comparison-loop cap
    grid_m: int = 10
    grid_n: int = 10
    region_samples: int = 5       # selections sampled per perspective per query
    convergence_tol: float = 1e-3
    failure_rounds: int = 2

    # executor
    grasp_candidates: int = 32
    grasp_position_tol: float = 0.01
    grasp_angle_tol_deg: float = 15.0
    deviation_tol: float = 0.02   # held-object constraint-projection slack, meters
    fault_rate: float = 0.0       # injected grasp-miss probability

    # misc
    seed: int = 0
    hand_to_gripper: list | None = None  # [x,y,z,qw,qx,qy,qz] rigid offset, None = identity

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_file(self, path):
        Path(path).write_text(json.dumps(dataclasses.asdict(self), indent=2) + "\n")

    def replace(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **kw)
