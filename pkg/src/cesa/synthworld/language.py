"""Template commands: <ACTION> the <OBJECT> [<RELATION> the <ANCHOR>]."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .scene import (ACTIONS, CATEGORIES, RELATIONS, GenerationError, SceneSpec,
                    action_targets, resolve_targets)

PAD = "[PAD]"
_WORDS = sorted({w for phrase in ACTIONS + RELATIONS for w in phrase.split()} | {"the"})
VOCAB = (PAD,) + tuple(_WORDS) + CATEGORIES
TOKEN_ID = {w: i for i, w in enumerate(VOCAB)}


class GrammarError(ValueError):
    """Text does not follow the command template."""


@dataclass(frozen=True)
class CommandSpec:
    action: str
    object_category: str
    relation: str | None = None
    anchor_category: str | None = None
    target_ids: tuple[int, ...] = ()

    @property
    def action_index(self) -> int:
        return ACTIONS.index(self.action)

    @property
    def category_index(self) -> int:
        return CATEGORIES.index(self.object_category)

    @property
    def ambiguous(self) -> bool:
        return len(self.target_ids) > 1

    def to_dict(self) -> dict:
        return {"action": self.action, "object_category": self.object_category,
                "relation": self.relation, "anchor_category": self.anchor_category,
                "target_ids": list(self.target_ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "CommandSpec":
        return cls(d["action"], d["object_category"], d.get("relation"),
                   d.get("anchor_category"), tuple(int(i) for i in d.get("target_ids", ())))


def render_words(command: CommandSpec) -> list[str]:
    words = command.action.split() + ["the", command.object_category]
    if command.relation is not None:
        words += command.relation.split() + ["the", command.anchor_category]
    return words


def render_text(command: CommandSpec) -> str:
    return " ".join(render_words(command))


def tokenize(text: str, length: int | None = None) -> np.ndarray:
    """Token ids, right-padded with [PAD] to ``length`` when given."""
    words = text.split()
    unknown = [w for w in words if w not in TOKEN_ID or w == PAD]
    if unknown:
        raise GrammarError(f"unknown words {unknown} in {text!r}")
    ids = [TOKEN_ID[w] for w in words]
    if length is not None:
        if len(ids) > length:
            raise GrammarError(f"{len(ids)} tokens exceed capacity {length}")
        ids += [TOKEN_ID[PAD]] * (length - len(ids))
    return np.array(ids, dtype=np.int64)


def detokenize(ids) -> str:
    return " ".join(VOCAB[int(i)] for i in ids if int(i) != TOKEN_ID[PAD])


def _match_phrase(words, pos, phrases):
    for phrase in sorted(phrases, key=lambda p: -len(p.split())):
        parts = phrase.split()
        if words[pos:pos + len(parts)] == parts:
            return phrase, pos + len(parts)
    return None, pos


def parse_text(text: str) -> CommandSpec:
    """Inverse of :func:`render_text` (target ids are left empty)."""
    words = text.split()
    action, pos = _match_phrase(words, 0, ACTIONS)
    if action is None:
        raise GrammarError(f"no action at the start of {text!r}")
    if words[pos:pos + 1] != ["the"] or pos + 1 >= len(words) or words[pos + 1] not in CATEGORIES:
        raise GrammarError(f"expected 'the <object>' after {action!r} in {text!r}")
    category = words[pos + 1]
    pos += 2
    if pos == len(words):
        return CommandSpec(action, category)
    relation, pos = _match_phrase(words, pos, RELATIONS)
    if relation is None:
        raise GrammarError(f"expected a relation at word {pos} of {text!r}")
    if words[pos:pos + 1] != ["the"] or len(words) != pos + 2 or words[pos + 1] not in CATEGORIES:
        raise GrammarError(f"expected 'the <anchor>' to end {text!r}")
    return CommandSpec(action, category, relation, words[pos + 1])


def _candidates(scene: SceneSpec, tau_near: float):
    present = sorted({o.category for o in scene.objects}, key=CATEGORIES.index)
    for action in ACTIONS:
        for cat in present:
            if cat not in action_targets(action):
                continue
            yield action, cat, None, None
            for rel, anchor in itertools.product(RELATIONS, present):
                if anchor != cat:
                    yield action, cat, rel, anchor


def generate_command(scene: SceneSpec, rng: np.random.Generator, ambiguity_allowed: bool = True,
                     relation_prob: float = 0.6, tau_near: float = 1.5,
                     max_tries: int = 50) -> CommandSpec:
    """Draw a command whose description resolves to at least one object.

    With ``ambiguity_allowed=False`` draws are repeated until exactly one
    object fits; after ``max_tries`` the valid commands are enumerated and one
    is picked uniformly.
    """
    present = sorted({o.category for o in scene.objects}, key=CATEGORIES.index)
    actions = [a for a in ACTIONS if action_targets(a) & set(present)]
    if not actions:
        raise GenerationError(f"scene {scene.id} has no object compatible with any action")

    def ok(ids):
        return len(ids) == 1 if not ambiguity_allowed else len(ids) >= 1

    for _ in range(max_tries):
        action = actions[int(rng.integers(len(actions)))]
        cats = [c for c in present if c in action_targets(action)]
        cat = cats[int(rng.integers(len(cats)))]
        anchors = [c for c in present if c != cat]
        relation = anchor = None
        if anchors and rng.random() < relation_prob:
            relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
            anchor = anchors[int(rng.integers(len(anchors)))]
        ids = resolve_targets(scene, cat, relation, anchor, tau_near)
        if ok(ids):
            return CommandSpec(action, cat, relation, anchor, ids)
    pool = []
    for action, cat, rel, anchor in _candidates(scene, tau_near):
        ids = resolve_targets(scene, cat, rel, anchor, tau_near)
        if ok(ids):
            pool.append(CommandSpec(action, cat, rel, anchor, ids))
    if not pool:
        raise GenerationError(f"scene {scene.id}: no command resolves to exactly one object")
    return pool[int(rng.integers(len(pool)))]
