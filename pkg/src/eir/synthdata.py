"""Deterministic synthetic chest-study world.

Every sample carries a per-topic disease state (positive, negative,
uncertain, unmentioned) and three aligned renderings of it:

* multi-view images: a 2x2 bright blob in a topic-specific grid cell for
  each positive topic, over low-amplitude noise;
* a clinical-history line: a symptom word per mentioned topic, prefixed by
  ``denies`` / ``query`` for negative / uncertain topics;
* a findings report built from fixed per-state sentence templates, which
  :func:`eir.metrics.label_report` inverts exactly.

Sample randomness comes from ``(world seed, sample id)`` only, so samples
can be generated in any order or in parallel.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

STATES = ("positive", "negative", "uncertain", "unmentioned")
POSITIVE, NEGATIVE, UNCERTAIN, UNMENTIONED = range(4)
STATE_PROBS = (0.5, 0.2, 0.1, 0.2)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIAL_TOKENS = (PAD, BOS, EOS, UNK)
# template vocabulary; none of these may double as a clinical term
TEMPLATE_WORDS = (".", "no", "possible", "shows", "indication", "denies", "query")
NEGATION = "no"
HEDGE = "possible"
LOCATES = "shows"
HISTORY_PREFIX = "indication"
HISTORY_NEGATION = "denies"
HISTORY_HEDGE = "query"

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Schema:
    """Fixed entity layout: one global node, organs, diseases (one per topic)."""

    organs: tuple[str, ...]
    diseases: tuple[str, ...]
    disease_organ: tuple[int, ...]
    symptoms: tuple[str, ...]

    def __post_init__(self):
        if not (len(self.diseases) == len(self.disease_organ) == len(self.symptoms)):
            raise ConfigError("schema: diseases, disease_organ and symptoms differ in length")
        if any(not 0 <= o < len(self.organs) for o in self.disease_organ):
            raise ConfigError("schema: disease mapped to an unknown organ")
        terms = list(self.organs) + list(self.diseases) + list(self.symptoms)
        reserved = set(TEMPLATE_WORDS) | set(SPECIAL_TOKENS)
        clash = sorted({t for t in terms if t in reserved})
        if clash:
            raise ConfigError(f"vocabulary collision with template words: {clash}")
        if len(set(terms)) != len(terms):
            dupes = sorted({t for t in terms if terms.count(t) > 1})
            raise ConfigError(f"vocabulary collision between clinical terms: {dupes}")

    @property
    def n_topics(self) -> int:
        return len(self.diseases)

    @property
    def node_names(self) -> tuple[str, ...]:
        return ("[CLS]",) + self.organs + self.diseases

    @property
    def node_roles(self) -> tuple[str, ...]:
        return ("global",) + ("organ",) * len(self.organs) + ("disease",) * len(self.diseases)

    @property
    def n_nodes(self) -> int:
        return 1 + len(self.organs) + len(self.diseases)

    def organ_node(self, organ: int) -> int:
        return 1 + organ

    def disease_node(self, topic: int) -> int:
        return 1 + len(self.organs) + topic

    @property
    def disease_nodes(self) -> list[int]:
        return [self.disease_node(t) for t in range(self.n_topics)]

    def to_json(self) -> dict:
        base = [[0, i, "global"] for i in range(1, self.n_nodes)]
        base += [
            [self.disease_node(t), self.organ_node(o), "located_at"]
            for t, o in enumerate(self.disease_organ)
        ]
        return {
            "nodes": [{"name": n, "role": r} for n, r in zip(self.node_names, self.node_roles)],
            "organs": list(self.organs),
            "diseases": list(self.diseases),
            "disease_organ": list(self.disease_organ),
            "symptoms": list(self.symptoms),
            "base_edges": base,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        return cls(
            tuple(obj["organs"]),
            tuple(obj["diseases"]),
            tuple(obj["disease_organ"]),
            tuple(obj["symptoms"]),
        )


DESK_SCHEMA = Schema(
    organs=("lung", "heart", "pleura"),
    diseases=(
        "pneumonia", "edema", "atelectasis", "nodule",
        "cardiomegaly", "effusion", "pneumothorax", "thickening",
    ),
    disease_organ=(0, 0, 0, 0, 1, 2, 2, 2),
    symptoms=(
        "fever", "orthopnea", "immobility", "smoking",
        "palpitations", "dyspnea", "trauma", "asbestos",
    ),
)

# 1 global + 7 organs + 20 diseases = 28 nodes
PRODUCTION_SCHEMA = Schema(
    organs=("lung", "heart", "pleura", "mediastinum", "bone", "diaphragm", "airway"),
    diseases=(
        "pneumonia", "edema", "atelectasis", "nodule", "consolidation", "emphysema",
        "fibrosis", "mass", "cardiomegaly", "hypertrophy", "effusion", "pneumothorax",
        "thickening", "widening", "lymphadenopathy", "fracture", "osteopenia",
        "elevation", "hernia", "bronchiectasis",
    ),
    disease_organ=(0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 2, 2, 2, 3, 3, 4, 4, 5, 5, 6),
    symptoms=(
        "fever", "orthopnea", "immobility", "smoking", "cough", "wheezing", "crackles",
        "weightloss", "palpitations", "hypertension", "dyspnea", "trauma", "asbestos",
        "hoarseness", "sweats", "fall", "steroids", "hiccups", "reflux", "sputum",
    ),
)

SCHEMAS = {"desk": DESK_SCHEMA, "production": PRODUCTION_SCHEMA}


@dataclass(frozen=True)
class WorldConfig:
    schema: str = "desk"
    views: int = 2
    image_size: int = 16
    cell: int = 4
    noise: float = 0.1
    corpus_size: int = 500
    split: tuple[int, int, int] = (80, 10, 10)
    eta: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.schema not in SCHEMAS:
            raise ConfigError(f"world.schema must be one of {sorted(SCHEMAS)}, got {self.schema!r}")
        if self.views < 1:
            raise ConfigError("world.views must be >= 1")
        if self.cell < 3 or self.image_size % self.cell:
            raise ConfigError("world.image_size must be a multiple of world.cell (cell >= 3)")
        cells = (self.image_size // self.cell) ** 2
        if cells < self.topic_schema.n_topics:
            raise ConfigError(
                f"{cells} image cells cannot host {self.topic_schema.n_topics} topics; "
                "raise world.image_size"
            )
        if not 0 <= self.noise < 0.5:
            raise ConfigError("world.noise must be in [0, 0.5)")
        if len(self.split) != 3 or sum(self.split) != 100 or min(self.split) < 0:
            raise ConfigError("world.split must be three non-negative percentages summing to 100")
        if self.corpus_size < 1 or self.eta < 1:
            raise ConfigError("world.corpus_size and world.eta must be positive")

    @property
    def topic_schema(self) -> Schema:
        return SCHEMAS[self.schema]

    def split_counts(self) -> dict[str, int]:
        n_train = self.corpus_size * self.split[0] // 100
        n_val = self.corpus_size * self.split[1] // 100
        return {"train": n_train, "val": n_val, "test": self.corpus_size - n_train - n_val}

    def topic_cell(self, topic: int) -> tuple[int, int]:
        per_side = self.image_size // self.cell
        idx = topic * per_side * per_side // self.topic_schema.n_topics
        return divmod(idx, per_side)


@dataclass
class SyntheticSample:
    id: int
    y: np.ndarray  # (n, k) one-hot ints
    views: np.ndarray  # (m, H, W)
    history: list[str]
    report: list[str]

    @property
    def states(self) -> np.ndarray:
        return self.y.argmax(axis=1)


def build_vocabulary(schema: Schema) -> list[str]:
    return list(SPECIAL_TOKENS) + list(TEMPLATE_WORDS) + list(schema.organs) + list(
        schema.diseases
    ) + list(schema.symptoms)


def vocabulary_hash(vocab: list[str]) -> str:
    return hashlib.sha256("\n".join(vocab).encode("utf-8")).hexdigest()[:16]


def one_hot(states: np.ndarray, k: int = len(STATES)) -> np.ndarray:
    y = np.zeros((len(states), k), dtype=np.int64)
    y[np.arange(len(states)), states] = 1
    return y


def findings_tokens(states, schema: Schema) -> list[str]:
    """Render per-topic states as report sentences, in topic order."""
    words: list[str] = []
    for topic, state in enumerate(states):
        disease = schema.diseases[topic]
        if state == POSITIVE:
            words += [schema.organs[schema.disease_organ[topic]], LOCATES, disease, "."]
        elif state == NEGATIVE:
            words += [NEGATION, disease, "."]
        elif state == UNCERTAIN:
            words += [HEDGE, disease, "."]
    return words


def history_tokens(states, schema: Schema, rng: np.random.Generator) -> list[str]:
    phrases = []
    for topic, state in enumerate(states):
        symptom = schema.symptoms[topic]
        if state == POSITIVE:
            phrases.append([symptom])
        elif state == NEGATIVE:
            phrases.append([HISTORY_NEGATION, symptom])
        elif state == UNCERTAIN:
            phrases.append([HISTORY_HEDGE, symptom])
    order = rng.permutation(len(phrases))
    return [HISTORY_PREFIX] + [w for i in order for w in phrases[i]]


def render_views(states, cfg: WorldConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.image_size
    base = rng.uniform(0.0, cfg.noise, size=(size, size))
    for topic, state in enumerate(states):
        if state == POSITIVE:
            r, c = cfg.topic_cell(topic)
            r0, c0 = r * cfg.cell + 1, c * cfg.cell + 1
            base[r0 : r0 + 2, c0 : c0 + 2] = 1.0
    gains = 1.0 - 0.15 * np.arange(cfg.views)
    return np.round(base[None] * gains[:, None, None], 4)


def image_positive_oracle(views: np.ndarray, cfg: WorldConfig) -> np.ndarray:
    """Positive topics read off the first view by mean cell brightness."""
    n = cfg.topic_schema.n_topics
    out = np.zeros(n, dtype=bool)
    threshold = (4.0 / cfg.cell**2 + cfg.noise) / 2
    for topic in range(n):
        r, c = cfg.topic_cell(topic)
        patch = views[0, r * cfg.cell : (r + 1) * cfg.cell, c * cfg.cell : (c + 1) * cfg.cell]
        out[topic] = patch.mean() > threshold
    return out


def history_positive_oracle(history: list[str], schema: Schema) -> np.ndarray:
    out = np.zeros(schema.n_topics, dtype=bool)
    lookup = {s: t for t, s in enumerate(schema.symptoms)}
    for i, word in enumerate(history):
        if word in lookup and history[i - 1] not in (HISTORY_NEGATION, HISTORY_HEDGE):
            out[lookup[word]] = True
    return out


def generate_sample(cfg: WorldConfig, sample_id: int) -> SyntheticSample:
    schema = cfg.topic_schema
    rng = np.random.default_rng([cfg.seed, sample_id])
    states = rng.choice(len(STATES), size=schema.n_topics, p=STATE_PROBS)
    return SyntheticSample(
        id=sample_id,
        y=one_hot(states),
        views=render_views(states, cfg, rng),
        history=history_tokens(states, schema, rng),
        report=findings_tokens(states, schema),
    )


def check_learnability(sample: SyntheticSample, cfg: WorldConfig) -> None:
    """Positive topics must be recoverable from each modality on its own."""
    from .metrics import label_report

    schema = cfg.topic_schema
    truth = sample.states == POSITIVE
    checks = {
        "images": image_positive_oracle(sample.views, cfg),
        "history": history_positive_oracle(sample.history, schema),
        "report": label_report(sample.report, schema).argmax(axis=1) == POSITIVE,
    }
    for name, decoded in checks.items():
        if not np.array_equal(decoded, truth):
            raise RuntimeError(f"sample {sample.id}: positives not decodable from {name}")


@dataclass
class Corpus:
    config: WorldConfig
    splits: dict[str, list[SyntheticSample]]
    vocab: list[str] = field(default_factory=list)

    @property
    def schema(self) -> Schema:
        return self.config.topic_schema

    @property
    def vocab_hash(self) -> str:
        return vocabulary_hash(self.vocab)

    def label_marginals(self, split: str) -> np.ndarray:
        samples = self.splits[split]
        if not samples:
            return np.zeros(self.schema.n_topics)
        return np.mean([s.states == POSITIVE for s in samples], axis=0)


def generate_corpus(cfg: WorldConfig) -> Corpus:
    counts = cfg.split_counts()
    splits: dict[str, list[SyntheticSample]] = {}
    next_id = 0
    for name in SPLITS:
        samples = []
        for sample_id in range(next_id, next_id + counts[name]):
            sample = generate_sample(cfg, sample_id)
            check_learnability(sample, cfg)
            samples.append(sample)
        splits[name] = samples
        next_id += counts[name]
    return Corpus(cfg, splits, build_vocabulary(cfg.topic_schema))


# ---------------------------------------------------------------- files


def sample_to_record(sample: SyntheticSample) -> str:
    record = {
        "id": sample.id,
        "y": sample.y.reshape(-1).tolist(),
        "views": [v.reshape(-1).tolist() for v in sample.views],
        "history": " ".join(sample.history),
        "report": " ".join(sample.report),
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def sample_from_record(line: str, cfg: WorldConfig) -> SyntheticSample:
    rec = json.loads(line)
    n = cfg.topic_schema.n_topics
    size = cfg.image_size
    return SyntheticSample(
        id=int(rec["id"]),
        y=np.asarray(rec["y"], dtype=np.int64).reshape(n, len(STATES)),
        views=np.asarray(rec["views"], dtype=np.float64).reshape(-1, size, size),
        history=rec["history"].split(),
        report=rec["report"].split(),
    )


def world_to_text(cfg: WorldConfig) -> str:
    lines = [
        f"world.schema={cfg.schema}",
        f"world.views={cfg.views}",
        f"world.image_size={cfg.image_size}",
        f"world.cell={cfg.cell}",
        f"world.noise={cfg.noise!r}",
        f"world.corpus_size={cfg.corpus_size}",
        f"world.split={'/'.join(map(str, cfg.split))}",
        f"world.eta={cfg.eta}",
        f"world.seed={cfg.seed}",
    ]
    return "\n".join(lines) + "\n"


def write_corpus(corpus: Corpus, out_dir: str | Path, overwrite: bool = False) -> Path:
    out = Path(out_dir)
    if out.exists() and any(out.iterdir()) and not overwrite:
        raise FileExistsError(f"{out} exists and is not empty; pass --overwrite to replace it")
    out.mkdir(parents=True, exist_ok=True)
    for name, samples in corpus.splits.items():
        text = "".join(sample_to_record(s) + "\n" for s in samples)
        (out / f"{name}.jsonl").write_text(text)
    (out / "vocab.txt").write_text("\n".join(corpus.vocab) + "\n")
    schema_json = json.dumps(corpus.schema.to_json(), indent=1, sort_keys=True)
    (out / "graph_schema.json").write_text(schema_json + "\n")
    (out / "world.cfg").write_text(world_to_text(corpus.config))
    return out


def read_corpus(data_dir: str | Path) -> Corpus:
    from .config import parse_world

    root = Path(data_dir)
    if not (root / "world.cfg").exists():
        raise FileNotFoundError(f"no dataset at {root} (world.cfg missing)")
    cfg = parse_world((root / "world.cfg").read_text())
    vocab = (root / "vocab.txt").read_text().splitlines()
    schema = Schema.from_json(json.loads((root / "graph_schema.json").read_text()))
    if schema != cfg.topic_schema:
        raise ConfigError("graph_schema.json does not match world.schema")
    splits = {}
    for name in SPLITS:
        path = root / f"{name}.jsonl"
        lines = path.read_text().splitlines() if path.exists() else []
        splits[name] = [sample_from_record(line, cfg) for line in lines if line]
    return Corpus(cfg, splits, vocab)
