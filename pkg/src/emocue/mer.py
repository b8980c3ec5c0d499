"""Multi-modal emotion retrieval against an embedded concept store."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from emocue import kernels
from emocue.errors import CorpusParseError, DataError, DimensionMismatch, EmptyExtraction, EmptyInput, ZeroVector
from emocue.gateway import Embedding, Gateway, InstructionTemplate, load_image
from emocue.gateway.client import IMAGE, TEXT
from emocue.replies import dedupe_phrases
from emocue.sve import PromptSet, run_extraction_prompt

log = logging.getLogger(__name__)

STORE_FORMAT = "emocue-store/1"
DEFAULT_K = 10
DEFAULT_ALPHA = 0.6


@dataclass(frozen=True)
class ConceptRecord:
    concept_id: str
    gloss: str
    emotion_tags: tuple[str, ...]
    embedding: Embedding

    def meta(self) -> dict:
        return {"concept_id": self.concept_id, "gloss": self.gloss, "emotion_tags": list(self.emotion_tags)}


class ConceptStore:
    """Immutable, concept-id-sorted set of unit-norm concept embeddings."""

    def __init__(self, records: Iterable[ConceptRecord], source_id: str = ""):
        recs = sorted(records, key=lambda r: r.concept_id)
        if not recs:
            raise DataError("concept store is empty")
        ids = [r.concept_id for r in recs]
        if len(set(ids)) != len(ids):
            raise CorpusParseError("duplicate concept ids")
        dims = {r.embedding.dim for r in recs}
        if len(dims) != 1:
            raise DimensionMismatch(f"mixed embedding sizes in store: {sorted(dims)}")
        self.records: tuple[ConceptRecord, ...] = tuple(recs)
        self.dim = dims.pop()
        self.source_id = source_id
        matrix = np.vstack([r.embedding.values for r in recs]).astype(np.float64)
        matrix.setflags(write=False)
        self.matrix = matrix
        self.checksum = self._checksum()

    def __len__(self) -> int:
        return len(self.records)

    def _checksum(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps({"format": STORE_FORMAT, "dim": self.dim, "source_id": self.source_id,
                             "records": [r.meta() for r in self.records]}, sort_keys=True).encode("utf-8"))
        h.update(self.matrix.astype("<f8").tobytes())
        return h.hexdigest()

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        header = {"format": STORE_FORMAT, "dim": self.dim, "count": len(self), "source_id": self.source_id,
                  "checksum": self.checksum, "records": [r.meta() for r in self.records]}
        (directory / "vectors.f64").write_bytes(self.matrix.astype("<f8").tobytes())
        (directory / "store.json").write_text(json.dumps(header, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "ConceptStore":
        directory = Path(directory)
        try:
            header = json.loads((directory / "store.json").read_text(encoding="utf-8"))
            raw = (directory / "vectors.f64").read_bytes()
        except (OSError, json.JSONDecodeError) as exc:
            raise CorpusParseError(f"cannot load concept store from {directory}: {exc}") from exc
        if header.get("format") != STORE_FORMAT:
            raise CorpusParseError(f"unsupported store format {header.get('format')!r}")
        dim, count = int(header["dim"]), int(header["count"])
        vectors = np.frombuffer(raw, dtype="<f8")
        if vectors.size != dim * count:
            raise CorpusParseError("vector block size does not match header")
        vectors = vectors.reshape(count, dim)
        records = [
            ConceptRecord(m["concept_id"], m["gloss"], tuple(m["emotion_tags"]), Embedding(vectors[i], TEXT))
            for i, m in enumerate(header["records"])
        ]
        store = cls(records, header.get("source_id", ""))
        if store.checksum != header["checksum"]:
            raise CorpusParseError(f"store checksum mismatch in {directory}")
        return store


def ingest_concepts(corpus: str | Path, gateway: Gateway | None = None, source_id: str | None = None) -> ConceptStore:
    """Build a store from a JSONL corpus.

    Each line: ``{"concept_id", "gloss", "emotion_tags"?, "embedding"?}``. Glosses
    without a precomputed embedding are embedded through the gateway.
    """
    path = Path(corpus)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusParseError(f"cannot read concept corpus {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(lines, 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"{where}: {exc}") from exc
        if not isinstance(rec, dict):
            raise CorpusParseError(f"{where}: record must be an object")
        cid = str(rec.get("concept_id", "")).strip()
        gloss = " ".join(str(rec.get("gloss", "")).split())
        if not cid:
            raise CorpusParseError(f"{where}: missing concept_id")
        if not gloss:
            raise CorpusParseError(f"{where}: empty gloss for {cid!r}")
        tags = rec.get("emotion_tags") or []
        if isinstance(tags, str):
            tags = tags.split(",")
        tags = tuple(dict.fromkeys(t.strip().lower() for t in tags if str(t).strip()))
        if rec.get("embedding") is not None:
            try:
                emb = Embedding(np.asarray(rec["embedding"], dtype=np.float64), TEXT).normalize()
            except (TypeError, ValueError) as exc:
                raise CorpusParseError(f"{where}: bad embedding: {exc}") from exc
        else:
            if gateway is None:
                raise CorpusParseError(f"{where}: no embedding and no gateway to compute one")
            emb = gateway.embed_text(gloss)
        records.append(ConceptRecord(cid, gloss, tags, emb))
    if not records:
        raise CorpusParseError(f"{path}: corpus holds no concepts")
    ids = [r.concept_id for r in records]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise CorpusParseError(f"{path}: duplicate concept ids {dupes[:5]}")
    return ConceptStore(records, source_id if source_id is not None else path.name)


@dataclass(frozen=True)
class VECExtraction:
    phrases: tuple[str, ...]
    image_digest: str
    elicitive: Mapping[str, tuple[str, ...]]

    @property
    def empty(self) -> bool:
        return not self.phrases

    def elicited_emotions(self) -> list[str]:
        return [e for e, v in self.elicitive.items() if v]

    def to_json(self) -> dict:
        return {"phrases": list(self.phrases), "image_digest": self.image_digest,
                "elicitive": {k: list(v) for k, v in self.elicitive.items()}}


def extract_vecs(gateway: Gateway, template: InstructionTemplate, image, prompts: PromptSet,
                 emotions: Sequence[str] | None = None) -> VECExtraction:
    """Run the objective prompts, then the subjective prompts of ``emotions``, on one image."""
    ref = load_image(image)
    phrases: list[str] = []
    elicitive: dict[str, tuple[str, ...]] = {}
    for item in prompts.items(emotions):
        got = run_extraction_prompt(gateway, template, item.text, ref,
                                    "extract_objective" if item.emotion is None else "extract_subjective")
        phrases += got
        if item.emotion is not None:
            elicitive[item.emotion] = tuple(dedupe_phrases([*elicitive.get(item.emotion, ()), *got]))
    result = VECExtraction(tuple(dedupe_phrases(phrases)), ref.digest, elicitive)
    if result.empty:
        raise EmptyExtraction(f"no cues extracted from {ref.path}", extraction=result)
    return result


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise DimensionMismatch(f"cosine of {a.dim}-d and {b.dim}-d vectors")
    na, nb = a.norm, b.norm
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine with a zero vector")
    return float(min(1.0, max(-1.0, float(a.values @ b.values) / (na * nb))))


def pool_text_embeddings(embeddings: Sequence[Embedding]) -> Embedding:
    if not embeddings:
        raise EmptyInput("nothing to pool")
    dims = {e.dim for e in embeddings}
    if len(dims) != 1:
        raise DimensionMismatch(f"cannot pool embeddings of sizes {sorted(dims)}")
    mean = np.mean(np.vstack([e.values for e in embeddings]), axis=0)
    return Embedding(mean, embeddings[0].modality).normalize()


@dataclass(frozen=True)
class FusionWeight:
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not 0.0 <= float(self.alpha) <= 1.0:
            raise DataError(f"alpha must lie in [0, 1], got {self.alpha}")
        object.__setattr__(self, "alpha", float(self.alpha))


def _alpha(alpha: FusionWeight | float) -> float:
    return alpha.alpha if isinstance(alpha, FusionWeight) else FusionWeight(alpha).alpha


def fuse(lambda_t: float, lambda_v: float, alpha: FusionWeight | float) -> float:
    a = _alpha(alpha)
    return a * lambda_t + (1.0 - a) * lambda_v


@dataclass(frozen=True)
class RetrievedItem:
    record: ConceptRecord
    lambda_m: float
    lambda_t: float
    lambda_v: float


@dataclass(frozen=True)
class RetrievedConcepts:
    items: tuple[RetrievedItem, ...]
    k: int

    def __len__(self) -> int:
        return len(self.items)

    @property
    def ids(self) -> list[str]:
        return [i.record.concept_id for i in self.items]

    def render(self) -> str:
        if not self.items:
            return "(none)"
        return "\n".join(f"- concept: {i.record.gloss} [{i.record.concept_id}] (score {i.lambda_m:.2f})"
                         for i in self.items)

    def to_json(self) -> list[dict]:
        return [{"concept_id": i.record.concept_id, "lambda_m": i.lambda_m, "lambda_t": i.lambda_t,
                 "lambda_v": i.lambda_v} for i in self.items]


EMPTY_RETRIEVAL = RetrievedConcepts((), 0)


def retrieve_topk(store: ConceptStore, text_emb: Embedding | None, image_emb: Embedding | None,
                  alpha: FusionWeight | float = DEFAULT_ALPHA, k: int = DEFAULT_K,
                  backend: str | None = None) -> RetrievedConcepts:
    """Exact top-k by fused similarity; ties go to the smaller concept id.

    A missing query embedding is allowed only when its modality has zero weight.
    """
    a = _alpha(alpha)
    if k < 1:
        raise DataError("k must be >= 1")
    zeros = np.zeros(store.dim)
    vecs = []
    for emb, weight, name in ((text_emb, a, "text"), (image_emb, 1.0 - a, "image")):
        if emb is None:
            if weight != 0.0:
                raise DataError(f"{name} embedding required when its weight is {weight}")
            vecs.append(zeros)
            continue
        if emb.dim != store.dim:
            raise DimensionMismatch(f"{name} embedding has dim {emb.dim}, store has {store.dim}")
        vecs.append(emb.values)
    lt, lv, lm = kernels.score(store.matrix, vecs[0], vecs[1], a, backend)
    order = kernels.rank(lm, min(k, len(store)), backend)
    items = tuple(RetrievedItem(store.records[i], float(lm[i]), float(lt[i]), float(lv[i])) for i in order)
    return RetrievedConcepts(items, k)


def text_query(gateway: Gateway, phrases: Sequence[str], mode: str = "pool") -> Embedding:
    """Text-side query: mean of per-phrase embeddings, or one embedding of the joined phrases."""
    if not phrases:
        raise EmptyInput("no phrases to embed")
    if mode == "concat":
        return gateway.embed_text("; ".join(phrases))
    if mode != "pool":
        raise DataError(f"unknown text embedding mode {mode!r}")
    return pool_text_embeddings([gateway.embed_text(p) for p in phrases])


def image_query(gateway: Gateway, image) -> Embedding:
    emb = gateway.embed_image(image)
    assert emb.modality == IMAGE
    return emb
