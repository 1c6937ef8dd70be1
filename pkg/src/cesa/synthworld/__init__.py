"""Procedural rooms, template commands and oracle motions with dataset I/O."""

from .dataset import (Corpus, DatasetError, generate_corpus, motion_from_json, motion_to_json,
                      read_dataset, scene_from_json, scene_to_json, write_dataset)
from .language import (PAD, VOCAB, CommandSpec, GrammarError, detokenize, generate_command,
                       parse_text, render_text, tokenize)
from .motion import MotionSample, interaction_point, synthesize_oracle_motion
from .planning import OccupancyGrid, PlanningError, plan_oracle_path
from .scene import (ACTIONS, CATEGORIES, RELATIONS, GenerationError, ObjectInstance, SceneConfig,
                    SceneSpec, box_distance, box_penetration, generate_scene, max_penetration,
                    resolve_targets, sample_point_cloud, spatial_relation)
from .skeleton import (Skeleton, desk_skeleton, forward_kinematics, paper_skeleton,
                       rot6d_to_matrix, skeleton_for)

__all__ = [
    "ACTIONS", "CATEGORIES", "PAD", "RELATIONS", "VOCAB", "CommandSpec", "Corpus", "DatasetError",
    "GenerationError", "GrammarError", "MotionSample", "ObjectInstance", "OccupancyGrid",
    "PlanningError", "SceneConfig", "SceneSpec", "Skeleton", "box_distance", "box_penetration",
    "desk_skeleton", "detokenize", "forward_kinematics", "generate_command", "generate_corpus",
    "generate_scene", "interaction_point", "max_penetration", "motion_from_json", "motion_to_json",
    "paper_skeleton", "parse_text", "plan_oracle_path", "read_dataset", "render_text",
    "resolve_targets", "rot6d_to_matrix", "sample_point_cloud", "scene_from_json", "scene_to_json",
    "skeleton_for", "spatial_relation", "synthesize_oracle_motion", "tokenize", "write_dataset",
]
