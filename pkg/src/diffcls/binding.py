"""Two-object attribute-binding tasks posed as binary prompt choices.

A scene holds two objects. A task turns a scene into a positive prompt that
describes it truthfully and a negative prompt that differs in one attribute
slot (control and binding tasks) or in one attribute swapped between the
objects (pair tasks). Any classifier over the two prompts can then be scored.

Task strings
------------
``Shape``            control: the attribute against a value absent from the scene
``Color|Shape``      binding: target attribute given another attribute
``Shape,Size``       pair: both objects described with two attributes
"""
from __future__ import annotations

import json
import re
import zlib
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .diffusion import COSINE, Condition, NoiseSchedule, ScoreModel, _posterior_coeffs

SHAPES = ("cube", "sphere", "cylinder")
COLORS = ("blue", "cyan", "brown", "gray", "green", "purple", "red", "yellow")
SIZES = ("small", "large")
POSITIONS = ("left", "right")
VOCAB = {"shape": SHAPES, "color": COLORS, "size": SIZES, "position": POSITIONS}
ATTRIBUTES = ("position", "shape", "color", "size")  # also the pair ordering priority


class SkipExample(Exception):
    """The scene admits no valid negative for the task; draw another scene."""


@dataclass(frozen=True)
class ObjectSpec:
    shape: str
    color: str
    size: str
    position: str

    def __post_init__(self):
        for attr, vocab in VOCAB.items():
            if getattr(self, attr) not in vocab:
                raise ValueError(f"{attr} must be one of {vocab}, got {getattr(self, attr)!r}")

    def get(self, attr: str) -> str:
        return getattr(self, attr)

    def with_(self, attr: str, value: str) -> "ObjectSpec":
        d = asdict(self)
        d[attr] = value
        return ObjectSpec(**d)


@dataclass(frozen=True)
class Scene:
    objects: tuple[ObjectSpec, ObjectSpec]

    def __post_init__(self):
        a, b = self.objects
        if a.shape == b.shape:
            raise ValueError("the two objects must have different shapes")
        if a.color == b.color:
            raise ValueError("the two objects must have different colors")
        if {a.position, b.position} != set(POSITIONS):
            raise ValueError("one object must be on the left and one on the right")

    @property
    def leftmost(self) -> ObjectSpec:
        return self.objects[0] if self.objects[0].position == "left" else self.objects[1]

    def other(self, obj: ObjectSpec) -> ObjectSpec:
        return self.objects[1] if obj == self.objects[0] else self.objects[0]

    def values(self, attr: str) -> set[str]:
        return {o.get(attr) for o in self.objects}

    def to_dict(self) -> dict:
        return {"objects": [asdict(o) for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scene":
        return cls(tuple(ObjectSpec(**o) for o in d["objects"]))


@dataclass(frozen=True)
class BindingTaskKind:
    kind: str                  # "control" | "binding" | "pair"
    attrs: tuple[str, ...]     # (attr,) | (target, given) | (a, b)

    def __post_init__(self):
        if self.kind not in ("control", "binding", "pair"):
            raise ValueError(f"unknown task kind {self.kind!r}")
        need = 1 if self.kind == "control" else 2
        if len(self.attrs) != need:
            raise ValueError(f"{self.kind} task takes {need} attribute(s)")
        for a in self.attrs:
            if a not in ATTRIBUTES:
                raise ValueError(f"unknown attribute {a!r}; expected one of {ATTRIBUTES}")
        if len(set(self.attrs)) != len(self.attrs):
            raise ValueError("task attributes must differ")
        if self.kind == "control" and self.attrs[0] == "position":
            raise ValueError("position control has no distractor: both positions are always present")

    @classmethod
    def parse(cls, text: str) -> "BindingTaskKind":
        s = text.strip().lower()
        if "|" in s:
            return cls("binding", tuple(p.strip() for p in s.split("|")))
        if "," in s:
            return cls("pair", tuple(p.strip() for p in s.split(",")))
        return cls("control", (s,))

    @property
    def include(self) -> frozenset[str]:
        return frozenset(self.attrs)

    @property
    def needs_distinct_sizes(self) -> bool:
        return "size" in self.attrs and self.kind != "control"

    def __str__(self) -> str:
        names = [a.capitalize() for a in self.attrs]
        sep = {"control": "", "binding": "|", "pair": ","}[self.kind]
        return sep.join(names)


@dataclass(frozen=True)
class BinaryExample:
    scene: Scene
    positive: str
    negative: str
    task: BindingTaskKind

    def __post_init__(self):
        if self.positive == self.negative:
            raise ValueError("positive and negative prompts must differ")

    def to_json(self) -> str:
        return json.dumps({"scene": self.scene.to_dict(), "positive": self.positive,
                           "negative": self.negative, "task": str(self.task)}, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "BinaryExample":
        d = json.loads(line)
        return cls(Scene.from_dict(d["scene"]), d["positive"], d["negative"], BindingTaskKind.parse(d["task"]))


# ---------------------------------------------------------------------------
# Prompt text
# ---------------------------------------------------------------------------

def describe(obj: ObjectSpec, include: Iterable[str]) -> str:
    include = frozenset(include)
    if not include:
        raise ValueError("include at least one attribute")
    bad = include - set(ATTRIBUTES)
    if bad:
        raise ValueError(f"unknown attributes {sorted(bad)}")
    text = f"On the {obj.position} is a " if "position" in include else "A "
    if "size" in include:
        text += f"{obj.size} "
    if "color" in include:
        text += f"{obj.color} "
    text += f"{obj.shape}." if "shape" in include else "object."
    return text


def join_descriptions(first: str, second: str) -> str:
    return f"{first[:-1]} and {second[0].lower()}{second[1:]}"


def _pair_order(a: ObjectSpec, b: ObjectSpec, task: BindingTaskKind, left: ObjectSpec):
    # the description carrying the leftmost object's value of the
    # highest-priority described attribute goes first
    for attr in ATTRIBUTES:
        if attr in task.attrs:
            if b.get(attr) == left.get(attr) and a.get(attr) != left.get(attr):
                return b, a
            return a, b
    return a, b


def _pick(rng, select):
    if select is None:
        return int(rng.integers(2))
    if select not in (0, 1):
        raise ValueError("select must be 0 or 1")
    return select


def make_binary_example(scene: Scene, task: BindingTaskKind, rng: np.random.Generator,
                        select: int | None = None) -> BinaryExample:
    """Positive and negative prompt for ``scene`` under ``task``.

    Control and binding tasks describe one object, drawn from ``rng`` unless
    ``select`` (0 or 1) fixes it. Raises :class:`SkipExample` when a control
    task finds every value of its attribute already in the scene.
    """
    if task.needs_distinct_sizes and scene.objects[0].size == scene.objects[1].size:
        raise ValueError("size tasks need objects of different sizes")
    inc = task.include
    if task.kind == "control":
        attr = task.attrs[0]
        obj = scene.objects[_pick(rng, select)]
        free = [v for v in VOCAB[attr] if v not in scene.values(attr)]
        if not free:
            raise SkipExample(f"every {attr} value is present in the scene")
        neg = obj.with_(attr, free[int(rng.integers(len(free)))])
        return BinaryExample(scene, describe(obj, inc), describe(neg, inc), task)
    if task.kind == "binding":
        target, _ = task.attrs
        obj = scene.objects[_pick(rng, select)]
        neg = obj.with_(target, scene.other(obj).get(target))
        return BinaryExample(scene, describe(obj, inc), describe(neg, inc), task)
    a_attr = task.attrs[0]
    left = scene.leftmost
    right = scene.other(left)
    p1, p2 = _pair_order(left, right, task, left)
    n1, n2 = _pair_order(left.with_(a_attr, right.get(a_attr)), right.with_(a_attr, left.get(a_attr)), task, left)
    return BinaryExample(scene, join_descriptions(describe(p1, inc), describe(p2, inc)),
                         join_descriptions(describe(n1, inc), describe(n2, inc)), task)


def random_scene(rng: np.random.Generator, task: BindingTaskKind | None = None) -> Scene:
    while True:
        shapes = rng.choice(len(SHAPES), size=2, replace=False)
        colors = rng.choice(len(COLORS), size=2, replace=False)
        sizes = rng.integers(len(SIZES), size=2)
        first_left = bool(rng.integers(2))
        pos = ("left", "right") if first_left else ("right", "left")
        objs = tuple(ObjectSpec(SHAPES[shapes[i]], COLORS[colors[i]], SIZES[sizes[i]], pos[i]) for i in range(2))
        if task is not None and task.needs_distinct_sizes and objs[0].size == objs[1].size:
            continue
        return Scene(objs)


def generate_examples(task: BindingTaskKind, n: int, seed: int, max_skips: int = 10_000) -> list[BinaryExample]:
    """``n`` examples from a seeded stream; scenes without a valid negative are redrawn.

    Raises ``RuntimeError`` after ``max_skips`` consecutive redraws.
    """
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(zlib.crc32(str(task).encode()),)))
    out = []
    skips = 0
    while len(out) < n:
        scene = random_scene(rng, task)
        try:
            out.append(make_binary_example(scene, task, rng))
            skips = 0
        except SkipExample:
            skips += 1
            if skips > max_skips:
                raise RuntimeError(f"task {task} kept producing scenes without a valid negative") from None
    return out


# ---------------------------------------------------------------------------
# Parsing prompts back into attribute slots
# ---------------------------------------------------------------------------

_DESC = re.compile(
    r"^(?:On the (?P<position>left|right) is a |A )"
    r"(?:(?P<size>small|large) )?"
    r"(?:(?P<color>" + "|".join(COLORS) + r") )?"
    r"(?:(?P<shape>" + "|".join(SHAPES) + r")|object)\.$")


def parse_description(text: str) -> dict[str, str]:
    """Attribute slots of one object description; raises on text outside the grammar."""
    m = _DESC.match(text)
    if not m:
        raise ValueError(f"not a valid object description: {text!r}")
    return {k: v for k, v in m.groupdict().items() if v is not None}


def parse_prompt(text: str) -> list[dict[str, str]]:
    """One slot dict per described object (one for single, two for pair prompts)."""
    parts = text.split(" and ")
    if len(parts) == 1:
        return [parse_description(text)]
    if len(parts) != 2:
        raise ValueError(f"expected at most two descriptions: {text!r}")
    first, second = parts
    return [parse_description(first + "."), parse_description(second[0].upper() + second[1:])]


def _matches(slots: dict[str, str], obj: ObjectSpec) -> bool:
    return all(obj.get(a) == v for a, v in slots.items())


def is_truthful(prompt: str, scene: Scene, task: BindingTaskKind) -> bool:
    """True if the prompt follows the task template and holds for the scene."""
    try:
        descs = parse_prompt(prompt)
    except ValueError:
        return False
    if any(set(d) != set(task.attrs) for d in descs):
        return False
    if task.kind == "pair":
        if len(descs) != 2:
            return False
        a, b = scene.objects
        return (_matches(descs[0], a) and _matches(descs[1], b)) or (_matches(descs[0], b) and _matches(descs[1], a))
    return len(descs) == 1 and any(_matches(descs[0], o) for o in scene.objects)


def differs_by_one(example: BinaryExample) -> bool:
    """Negative differs from positive in one slot, or by one attribute swapped across the pair."""
    pos = parse_prompt(example.positive)
    neg = parse_prompt(example.negative)
    task = example.task
    if task.kind != "pair":
        if len(pos) != 1 or len(neg) != 1 or set(pos[0]) != set(neg[0]):
            return False
        return sum(pos[0][a] != neg[0][a] for a in pos[0]) == 1
    if len(pos) != 2 or len(neg) != 2:
        return False
    a = task.attrs[0]
    swapped = [dict(pos[0], **{a: pos[1][a]}), dict(pos[1], **{a: pos[0][a]})]
    key = lambda d: tuple(sorted(d.items()))
    return sorted(map(key, swapped)) == sorted(map(key, neg)) and sorted(map(key, pos)) != sorted(map(key, neg))


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinaryReport:
    n: int
    correct: int
    accuracy: float
    p_value: float

    def to_dict(self) -> dict:
        return asdict(self)


def binomial_report(correct: int, n: int) -> BinaryReport:
    """Accuracy with the exact two-sided binomial p-value against chance."""
    from scipy.stats import binomtest

    if n < 1:
        raise ValueError("need at least one example")
    return BinaryReport(n, int(correct), correct / n, float(binomtest(int(correct), n, 0.5).pvalue))


def evaluate_binary(examples: Sequence[BinaryExample],
                    choose: Callable[[int, BinaryExample], str]) -> BinaryReport:
    """Score ``choose(i, example) -> chosen prompt`` over the examples."""
    if len(examples) == 0:
        raise ValueError("need at least one example")
    correct = 0
    for i, ex in enumerate(examples):
        pick = choose(i, ex)
        if pick not in (ex.positive, ex.negative):
            raise ValueError(f"scorer returned a prompt outside the pair: {pick!r}")
        correct += pick == ex.positive
    return binomial_report(correct, len(examples))


# ---------------------------------------------------------------------------
# A feature-space scorer for the harness
# ---------------------------------------------------------------------------

class PromptFeatureModel(ScoreModel):
    """Denoiser over a random-feature encoding of scenes and prompts.

    A scene is encoded as the sum of one feature vector per (attribute, value)
    of each object plus ``bind`` times a feature per attribute pair bound to
    the same object, plus Gaussian noise of scale ``std``. A prompt is encoded
    the same way from the slots it mentions. The denoiser is the Gaussian
    posterior mean toward the prompt's encoding. With ``bind = 0`` the encoding
    loses which attribute belongs to which object, so binding tasks fall to
    chance while control tasks stay solvable.
    """

    def __init__(self, dim: int = 64, std: float = 0.5, bind: float = 1.0, seed: int = 0,
                 schedule: NoiseSchedule = COSINE):
        if dim < 1 or std <= 0 or bind < 0:
            raise ValueError("need dim >= 1, std > 0, bind >= 0")
        self.dim = dim
        self.std = std
        self.bind = bind
        self.seed = seed
        self.schedule = schedule
        self._cache: dict[str, np.ndarray] = {}

    def feature(self, key: str) -> np.ndarray:
        f = self._cache.get(key)
        if f is None:
            rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(zlib.crc32(key.encode()),)))
            f = rng.standard_normal(self.dim) / np.sqrt(self.dim)
            self._cache[key] = f
        return f

    def encode_slots(self, objects: Iterable[dict[str, str]]) -> np.ndarray:
        out = np.zeros(self.dim)
        for slots in objects:
            items = sorted(slots.items())
            for a, v in items:
                out += self.feature(f"{a}={v}")
            if self.bind:
                for i in range(len(items)):
                    for j in range(i + 1, len(items)):
                        out += self.bind * self.feature(f"{items[i][0]}={items[i][1]}&{items[j][0]}={items[j][1]}")
        return out

    def encode_prompt(self, prompt: str) -> np.ndarray:
        return self.encode_slots(parse_prompt(prompt))

    def embed_scene(self, scene: Scene, rng: np.random.Generator) -> np.ndarray:
        mean = self.encode_slots(asdict(o) for o in scene.objects)
        return mean + self.std * rng.standard_normal(self.dim)

    def denoise(self, x_t, t, condition: Condition):
        alpha = float(self.schedule.alpha(t))
        sigma = float(self.schedule.sigma(t))
        a, b = _posterior_coeffs(self.std, alpha, sigma)
        return a * np.asarray(x_t, dtype=np.float64) + b * self.encode_prompt(condition.prompt)
