"""Survey questions, negative sampling, and triplet assembly.

A survey question pairs one placement context in scene A (person X and the
other party's avatar Y') with user-preferred avatar placements in scene B
given person Y.  Negatives are rejection-sampled over scene B's free space,
plus deliberately confusable hard negatives perturbed off the positives.
The triplet set is the full positives x negatives cross product sharing one
anchor per question.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import features as ft
from . import geometry as geo
from . import scene as sc
from .errors import GenerationError, InvariantError, ParseError, SamplingExhausted, UnknownScene
from .seeding import stable_rng

TRIPLET_MAGIC = b"SEMPLACE-TRIPLETS 1\n"


@dataclass
class NegativeSamplingConfig:
    random_count: int = 100
    hard_count: int = 10
    min_distance: float = 1.0
    min_angle_deg: float = 36.0
    min_pose_delta: float = 0.10
    max_attempts: int = 100_000

    def __post_init__(self):
        thresholds = (
            self.random_count, self.hard_count, self.min_distance,
            self.min_angle_deg, self.min_pose_delta, self.max_attempts,
        )
        if any(v <= 0 for v in thresholds):
            raise InvariantError("negative sampling thresholds must be positive")


@dataclass(eq=False)
class SurveyQuestion:
    id: str
    scene_a: sc.Scene
    scene_b: sc.Scene
    p_x: sc.Placement
    p_y_prime: sc.Placement
    p_y: sc.Placement
    positives: list[sc.Placement]

    def __post_init__(self):
        if not self.positives:
            raise InvariantError(f"question {self.id!r}: positives must be non-empty")
        for place, scn, label in (
            (self.p_x, self.scene_a, "p_x"),
            (self.p_y_prime, self.scene_a, "p_y_prime"),
            (self.p_y, self.scene_b, "p_y"),
            *(((p, self.scene_b, f"positives[{i}]")) for i, p in enumerate(self.positives)),
        ):
            if not geo.point_in_polygon(place.position, scn.floor):
                raise InvariantError(
                    f"question {self.id!r}: {label} lies outside the floor of {scn.id!r}"
                )

    @property
    def pair_id(self) -> str:
        return f"{self.scene_a.id}|{self.scene_b.id}"


@dataclass(eq=False)
class TripletSample:
    anchor: np.ndarray
    positive: np.ndarray
    negative: np.ndarray
    question_id: str = ""
    pair_id: str = ""

    def __post_init__(self):
        for name in ("anchor", "positive", "negative"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (ft.TOTAL_DIM,) or not np.all(np.isfinite(arr)):
                raise InvariantError(f"triplet {name} must be a finite {ft.TOTAL_DIM}-dim vector")
            setattr(self, name, arr)


# ---------------------------------------------------------------------------
# Negative sampling
# ---------------------------------------------------------------------------

def too_close(
    candidate: sc.Placement,
    positive: sc.Placement,
    scn: sc.Scene,
    cfg: NegativeSamplingConfig,
    feature_cfg: ft.FeatureConfig | None = None,
    candidate_pose: np.ndarray | None = None,
    positive_pose: np.ndarray | None = None,
) -> bool:
    """All three of position, heading, and pose are within their thresholds.

    Pose vectors are compared with the max-norm over the normalized
    17-element height probe; they are computed on demand unless provided.
    """
    delta = candidate.position - positive.position
    if np.hypot(delta[0], delta[1]) >= cfg.min_distance:
        return False
    if geo.angle_difference(candidate.heading, positive.heading) >= np.radians(cfg.min_angle_deg):
        return False
    feature_cfg = feature_cfg or ft.FeatureConfig()
    if candidate_pose is None:
        candidate_pose = ft.pose_accommodation(candidate, scn, feature_cfg)
    if positive_pose is None:
        positive_pose = ft.pose_accommodation(positive, scn, feature_cfg)
    return bool(np.max(np.abs(candidate_pose - positive_pose)) < cfg.min_pose_delta)


def _too_close_to_any(candidate, question, cfg, feature_cfg, positive_poses):
    pose = None
    for positive, ppose in zip(question.positives, positive_poses):
        delta = candidate.position - positive.position
        if np.hypot(delta[0], delta[1]) >= cfg.min_distance:
            continue
        if geo.angle_difference(candidate.heading, positive.heading) >= np.radians(
            cfg.min_angle_deg
        ):
            continue
        if pose is None:
            pose = ft.pose_accommodation(candidate, question.scene_b, feature_cfg)
        if np.max(np.abs(pose - ppose)) < cfg.min_pose_delta:
            return True
    return False


def sample_negatives(
    question: SurveyQuestion,
    cfg: NegativeSamplingConfig,
    seed: int,
    feature_cfg: ft.FeatureConfig | None = None,
    clearance: float = 0.30,
) -> list[sc.Placement]:
    """random_count free placements over the whole scene plus hard_count
    perturbed off the positives; none too close to any positive."""
    feature_cfg = feature_cfg or ft.FeatureConfig()
    rng = np.random.default_rng(seed)
    scn = question.scene_b
    xmin, ymin, xmax, ymax = scn.bounds()
    positive_poses = [
        ft.pose_accommodation(p, scn, feature_cfg) for p in question.positives
    ]
    attempts = 0
    negatives: list[sc.Placement] = []

    while len(negatives) < cfg.random_count:
        if attempts >= cfg.max_attempts:
            raise SamplingExhausted(
                f"question {question.id!r}: {attempts} attempts, "
                f"{len(negatives)}/{cfg.random_count} random negatives"
            )
        attempts += 1
        pos = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        heading = rng.uniform(0.0, 2.0 * np.pi)
        if not sc.is_free(scn, pos, clearance):
            continue
        candidate = sc.Placement(pos, heading)
        if _too_close_to_any(candidate, question, cfg, feature_cfg, positive_poses):
            continue
        negatives.append(candidate)

    min_rad = np.radians(cfg.min_angle_deg)
    max_rad = 2.0 * min_rad
    hard: list[sc.Placement] = []
    while len(hard) < cfg.hard_count:
        if attempts >= cfg.max_attempts:
            raise SamplingExhausted(
                f"question {question.id!r}: {attempts} attempts, "
                f"{len(hard)}/{cfg.hard_count} hard negatives"
            )
        attempts += 1
        base = question.positives[rng.integers(0, len(question.positives))]
        radius = rng.uniform(cfg.min_distance, 1.5 * cfg.min_distance)
        direction = rng.uniform(0.0, 2.0 * np.pi)
        pos = base.position + radius * np.array([np.cos(direction), np.sin(direction)])
        if not sc.is_free(scn, pos, clearance):
            continue
        heading = base.heading + rng.choice([-1.0, 1.0]) * rng.uniform(min_rad, max_rad)
        candidate = sc.Placement(pos, heading)
        if _too_close_to_any(candidate, question, cfg, feature_cfg, positive_poses):
            continue
        hard.append(candidate)
    return negatives + hard


def build_triplets(
    question: SurveyQuestion,
    negatives: list[sc.Placement],
    feature_cfg: ft.FeatureConfig | None = None,
) -> list[TripletSample]:
    """Full positives x negatives cross product with one shared anchor."""
    if not negatives:
        raise InvariantError("negatives must be non-empty")
    feature_cfg = feature_cfg or ft.FeatureConfig()
    anchor = ft.extract(question.p_x, question.p_y_prime, question.scene_a, feature_cfg)
    pos_vectors = [
        ft.extract(p, question.p_y, question.scene_b, feature_cfg) for p in question.positives
    ]
    neg_vectors = [
        ft.extract(p, question.p_y, question.scene_b, feature_cfg) for p in negatives
    ]
    out = []
    for pv in pos_vectors:
        for nv in neg_vectors:
            out.append(
                TripletSample(
                    anchor=anchor,
                    positive=pv,
                    negative=nv,
                    question_id=question.id,
                    pair_id=question.pair_id,
                )
            )
    return out


# ---------------------------------------------------------------------------
# Survey files
# ---------------------------------------------------------------------------

def _placement_to_dict(p: sc.Placement) -> dict:
    return {"pos": [float(p.position[0]), float(p.position[1])], "heading": float(p.heading)}


def _placement_from_dict(raw) -> sc.Placement:
    try:
        return sc.Placement(np.asarray(raw["pos"], dtype=np.float64), float(raw["heading"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad placement entry: {exc}") from exc


def save_survey(questions: list[SurveyQuestion]) -> bytes:
    doc = {
        "questions": [
            {
                "id": q.id,
                "scene_a": q.scene_a.id,
                "scene_b": q.scene_b.id,
                "p_x": _placement_to_dict(q.p_x),
                "p_y_prime": _placement_to_dict(q.p_y_prime),
                "p_y": _placement_to_dict(q.p_y),
                "positives": [_placement_to_dict(p) for p in q.positives],
            }
            for q in questions
        ]
    }
    return json.dumps(doc, indent=1).encode("utf-8")


def load_survey(document: bytes | str, scenes: dict[str, sc.Scene]) -> list[SurveyQuestion]:
    """Parse and validate a survey file against a scene registry."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"survey file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("questions"), list):
        raise ParseError("survey file must be a JSON object with a 'questions' list")
    questions = []
    for i, raw in enumerate(doc["questions"]):
        qid = str(raw.get("id", i))
        for key in ("scene_a", "scene_b"):
            if raw.get(key) not in scenes:
                raise UnknownScene(f"question {qid!r} references unknown scene {raw.get(key)!r}")
        try:
            positives = [_placement_from_dict(p) for p in raw["positives"]]
            question = SurveyQuestion(
                id=qid,
                scene_a=scenes[raw["scene_a"]],
                scene_b=scenes[raw["scene_b"]],
                p_x=_placement_from_dict(raw["p_x"]),
                p_y_prime=_placement_from_dict(raw["p_y_prime"]),
                p_y=_placement_from_dict(raw["p_y"]),
                positives=positives,
            )
        except KeyError as exc:
            raise ParseError(f"question {qid!r} missing field: {exc}") from exc
        questions.append(question)
    return questions


# ---------------------------------------------------------------------------
# Synthetic survey (oracle-labeled stand-in for human responses)
# ---------------------------------------------------------------------------

# Per-subvector oracle weights.  The profile is picked from the anchor
# context, so the relative importance of subfeatures is context-dependent:
# no single global quadratic metric over feature differences reproduces the
# resulting ranking, while a network that sees the anchor can.
# The interpersonal block keeps a small but nonzero weight in every profile
# so the preferred placement is unique even on bare floor (heading committed
# through the facing angles); the 40x contrast between contexts is what a
# single global metric cannot reproduce.
ORACLE_PROFILES = {
    "interaction": {"ip": 40.0, "va": 1.0, "pa": 0.1, "ss": 0.1, "sp": 0.05},
    "pose": {"ip": 1.0, "va": 0.2, "pa": 20.0, "ss": 40.0, "sp": 0.5},
    "ambient": {"ip": 1.0, "va": 10.0, "pa": 0.5, "ss": 0.5, "sp": 20.0},
}
ORACLE_INTERACTION_RADIUS = 0.35  # anchor ip[0] below this -> interaction context


def oracle_context(anchor: np.ndarray) -> str:
    if anchor[0] < ORACLE_INTERACTION_RADIUS:
        return "interaction"
    if anchor[ft.SS_SLICE][0] > 0.5:
        return "pose"
    return "ambient"


def oracle_weights(anchor: np.ndarray) -> np.ndarray:
    profile = ORACLE_PROFILES[oracle_context(anchor)]
    w = np.empty(ft.TOTAL_DIM)
    w[ft.IP_SLICE] = profile["ip"]
    w[ft.VA_SLICE] = profile["va"]
    w[ft.PA_SLICE] = profile["pa"]
    w[ft.SS_SLICE] = profile["ss"]
    w[ft.SP_SLICE] = profile["sp"]
    return w


def oracle_distance(anchor: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Weighted squared distance of candidate feature rows to the anchor."""
    w = oracle_weights(anchor)
    diff = np.asarray(candidates) - anchor
    return (diff * diff * w).sum(axis=-1)


def _random_free_placement(
    rng, scn, clearance=0.30, max_attempts=10_000, away_from=None, min_distance=0.0
) -> sc.Placement:
    xmin, ymin, xmax, ymax = scn.bounds()
    for _ in range(max_attempts):
        pos = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
        if not sc.is_free(scn, pos, clearance):
            continue
        if away_from is not None and np.hypot(*(pos - away_from)) < min_distance:
            continue
        return sc.Placement(pos, rng.uniform(0.0, 2.0 * np.pi))
    raise GenerationError(f"no free placement found in scene {scn.id!r}")


# Interaction questions put the person within arm's-reach of the partner;
# everything else keeps a clear gap so the realized context is unambiguous.
# Intents cycle deterministically over questions so every corpus carries a
# balanced mix: that balance is what makes the ranking context-dependent
# (no single global metric serves all three intents at once).
INTERACTION_RANGE = (0.8, 1.5)
INDEPENDENT_MIN_DISTANCE = 2.0
INTENTS = ("interaction", "pose", "ambient")


def _facing_heading(rng, scn, pos, max_distance=4.0, noise_deg=15.0) -> float:
    """Heading toward a randomly chosen nearby object's attention point.

    Mirrors how survey scenarios anchor a person's gaze (watching the TV,
    looking at a shelf): committing the heading to a visible target is what
    makes the preferred orientation recoverable.  Falls back to a uniform
    heading when nothing is in range.
    """
    candidates = []
    for obj in scn.objects:
        delta = obj.attention_point - pos
        dist = np.hypot(delta[0], delta[1])
        if 1e-9 < dist < max_distance:
            candidates.append(np.arctan2(delta[1], delta[0]))
    if not candidates:
        return rng.uniform(0.0, 2.0 * np.pi)
    heading = candidates[rng.integers(0, len(candidates))]
    return heading + rng.uniform(-np.radians(noise_deg), np.radians(noise_deg))


def _person_for_intent(rng, scn, intent: str, max_attempts: int = 100):
    """(partner placement, person placement) realizing the intent, or None.

    The partner position is resampled together with the person so intents
    stay realizable in cluttered scenes.
    """
    for _ in range(max_attempts):
        partner = _random_free_placement(rng, scn)
        if intent == "interaction":
            for _ in range(20):
                direction = rng.uniform(0.0, 2.0 * np.pi)
                radius = rng.uniform(*INTERACTION_RANGE)
                pos = partner.position + radius * np.array(
                    [np.cos(direction), np.sin(direction)]
                )
                if sc.is_free(scn, pos, 0.30):
                    delta = partner.position - pos
                    return partner, sc.Placement(pos, np.arctan2(delta[1], delta[0]))
        elif intent == "pose":
            sittable = [o for o in scn.objects if o.sittable]
            if not sittable:
                return None
            obj = sittable[rng.integers(0, len(sittable))]
            xmin, ymin, xmax, ymax = geo.polygon_bounds(obj.footprint)
            for _ in range(20):
                pos = np.array([rng.uniform(xmin, xmax), rng.uniform(ymin, ymax)])
                if np.hypot(*(pos - partner.position)) < INDEPENDENT_MIN_DISTANCE:
                    continue
                if geo.point_in_polygon(pos, obj.footprint) and sc.is_free(scn, pos, 0.30):
                    return partner, sc.Placement(pos, rng.uniform(0.0, 2.0 * np.pi))
        else:
            try:
                person = _random_free_placement(
                    rng, scn, max_attempts=200,
                    away_from=partner.position, min_distance=INDEPENDENT_MIN_DISTANCE,
                )
            except GenerationError:
                continue
            return partner, person
    return None


def _contextual_pair(rng, scn, intent: str):
    """Realize the intent, falling back to an independent pairing if the
    scene cannot support it (e.g. no sittable furniture)."""
    drawn = _person_for_intent(rng, scn, intent)
    if drawn is None and intent != "ambient":
        drawn = _person_for_intent(rng, scn, "ambient")
    if drawn is None:
        raise GenerationError(f"scene {scn.id!r} cannot realize intent {intent!r}")
    return drawn


def synthesize_survey(
    scene_pairs: list[tuple[sc.Scene, sc.Scene]],
    per_pair: int,
    seed: int,
    feature_cfg: ft.FeatureConfig | None = None,
    positives_per_question: int = 10,
    grid_cell: float = 0.25,
    orientations: int = 24,
    clearance: float = 0.30,
    jitter_position: float = 0.10,
    jitter_heading_deg: float = 5.0,
) -> list[SurveyQuestion]:
    """Questions whose positives come from a transparent heuristic oracle.

    For each question the best placement in scene B is the feasible grid
    sample minimizing the context-weighted squared feature distance to the
    anchor; the positives are that optimum plus small jitter.  Deterministic
    per seed, with per-question substreams so question order is irrelevant.
    """
    if per_pair < 1:
        raise GenerationError("per_pair must be >= 1")
    feature_cfg = feature_cfg or ft.FeatureConfig()
    headings = np.arange(orientations) * (2.0 * np.pi / orientations)
    # va/pa/sp grids depend only on the scene, so share them across questions
    tables: dict[str, tuple] = {}
    questions = []
    for pair_idx, (scene_a, scene_b) in enumerate(scene_pairs):
        if scene_b.id not in tables:
            centers, _, _, _, _ = sc.free_grid_cells(scene_b, grid_cell, clearance)
            if centers.shape[0] == 0:
                raise GenerationError(f"scene {scene_b.id!r} has no free grid cells")
            tables[scene_b.id] = (
                centers,
                ft.precompute_placement_features(scene_b, centers, headings, feature_cfg),
            )
        centers, table = tables[scene_b.id]
        for k in range(per_pair):
            rng = stable_rng(seed, "survey", pair_idx, k)
            p_y = _random_free_placement(rng, scene_b, clearance)
            p_y_prime, p_x = _contextual_pair(rng, scene_a, INTENTS[k % len(INTENTS)])
            anchor = ft.extract(p_x, p_y_prime, scene_a, feature_cfg)
            candidates = table.assemble(p_y)
            dist = oracle_distance(anchor, candidates.reshape(-1, ft.TOTAL_DIM))
            best_flat = int(np.argmin(dist))
            ci, oi = divmod(best_flat, orientations)
            best = sc.Placement(centers[ci], headings[oi])
            positives = []
            for _ in range(positives_per_question):
                for _attempt in range(1000):
                    direction = rng.uniform(0.0, 2.0 * np.pi)
                    radius = rng.uniform(0.0, jitter_position)
                    pos = best.position + radius * np.array(
                        [np.cos(direction), np.sin(direction)]
                    )
                    if sc.is_free(scene_b, pos, clearance):
                        break
                else:
                    raise GenerationError(
                        f"could not jitter positive near {best.position} in {scene_b.id!r}"
                    )
                heading = best.heading + rng.uniform(
                    -np.radians(jitter_heading_deg), np.radians(jitter_heading_deg)
                )
                positives.append(sc.Placement(pos, heading))
            questions.append(
                SurveyQuestion(
                    id=f"{pair_idx}-{k}",
                    scene_a=scene_a,
                    scene_b=scene_b,
                    p_x=p_x,
                    p_y_prime=p_y_prime,
                    p_y=p_y,
                    positives=positives,
                )
            )
    return questions


# ---------------------------------------------------------------------------
# Triplet files
# ---------------------------------------------------------------------------

def save_triplets(triplets: list[TripletSample], feature_cfg: ft.FeatureConfig) -> bytes:
    """Binary triplet file: magic, JSON header line, indices, float64 data."""
    questions: list[tuple[str, str]] = []
    q_index: dict[tuple[str, str], int] = {}
    idx = np.empty(len(triplets), dtype="<i4")
    for i, t in enumerate(triplets):
        key = (t.question_id, t.pair_id)
        if key not in q_index:
            q_index[key] = len(questions)
            questions.append(key)
        idx[i] = q_index[key]
    data = np.empty((len(triplets), 3, ft.TOTAL_DIM), dtype="<f8")
    for i, t in enumerate(triplets):
        data[i, 0] = t.anchor
        data[i, 1] = t.positive
        data[i, 2] = t.negative
    header = json.dumps(
        {
            "feature_config": asdict(feature_cfg),
            "n": len(triplets),
            "dim": ft.TOTAL_DIM,
            "questions": [{"id": q, "pair_id": p} for q, p in questions],
        }
    ).encode("utf-8")
    return TRIPLET_MAGIC + header + b"\n" + idx.tobytes() + data.tobytes()


def load_triplets(document: bytes) -> tuple[list[TripletSample], ft.FeatureConfig]:
    if not document.startswith(TRIPLET_MAGIC):
        raise ParseError("not a semplace triplet file")
    body = document[len(TRIPLET_MAGIC):]
    newline = body.find(b"\n")
    if newline < 0:
        raise ParseError("triplet file truncated in header")
    try:
        header = json.loads(body[:newline].decode("utf-8"))
        n = int(header["n"])
        dim = int(header["dim"])
        questions = [(q["id"], q["pair_id"]) for q in header["questions"]]
        feature_cfg = ft.FeatureConfig(**header["feature_config"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad triplet file header: {exc}") from exc
    blob = body[newline + 1:]
    idx_bytes = n * 4
    data_bytes = n * 3 * dim * 8
    if len(blob) != idx_bytes + data_bytes:
        raise ParseError(
            f"triplet file truncated: expected {idx_bytes + data_bytes} payload bytes, "
            f"got {len(blob)}"
        )
    idx = np.frombuffer(blob[:idx_bytes], dtype="<i4")
    data = np.frombuffer(blob[idx_bytes:], dtype="<f8").reshape(n, 3, dim)
    triplets = []
    for i in range(n):
        qid, pair_id = questions[idx[i]]
        triplets.append(
            TripletSample(
                anchor=data[i, 0].copy(),
                positive=data[i, 1].copy(),
                negative=data[i, 2].copy(),
                question_id=qid,
                pair_id=pair_id,
            )
        )
    return triplets, feature_cfg
