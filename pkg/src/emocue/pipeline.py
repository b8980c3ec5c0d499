"""Run lifecycle: ingest, prepare, infer, eval and report over one run directory.

Run directory layout::

    config.json                resolved config snapshot and its hash
    store/                     ingested concept store (store.json + vectors.f64)
    structured_vecs.json       categorized cues
    contrastive_logic.json     aggregated contrastive rules
    prompts/v<N>.json          prompt set after each refinement round
    prompts/frozen.json        the prompt set inference uses
    feedback/round<N>.json     refinement verdicts
    sve_journal.jsonl          resumable few-shot extractions
    predictions.jsonl          one record per test image (also the resume journal)
    transcript.jsonl           gateway calls and pipeline events, in deterministic order
    report.json, report.txt    evaluation results
"""

from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from emocue.bdr import (
    ContrastiveLogic,
    StructuredVECSet,
    aggregate_logic,
    direct_informing,
    load_expert_cues,
    load_survey,
    reverse_reasoning,
)
from emocue.config import EngineConfig
from emocue.errors import ConfigError, DataError, EmptyExtraction, FrozenPromptsViolation
from emocue.evaluation import (
    EvalReport,
    PredictionRecord,
    build_report,
    load_predictions,
    read_reports,
    render_table,
    write_reports,
)
from emocue.gateway import Gateway, HTTPBackend, MockBackend, ResponseCache, Transcript, load_templates
from emocue.journal import Journal
from emocue.manifest import ManifestEntry, load_manifest, sample_corpus, split_entries
from emocue.mer import (
    EMPTY_RETRIEVAL,
    ConceptStore,
    VECExtraction,
    extract_vecs,
    image_query,
    ingest_concepts,
    retrieve_topk,
    text_query,
)
from emocue.roa import NO_MER, NO_MM, NO_ROA, NO_SVE, ablation_reflect
from emocue.sve import FewShotSet, PromptSet, RefinementFeedback, SelfRefiner
from emocue.taxonomy import dataset_profile, union_profile

log = logging.getLogger(__name__)


def _dump(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _load(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def make_backend(config: EngineConfig):
    if config.backend == "mock":
        if config.mock_script:
            return MockBackend.from_script(config.mock_script)
        return MockBackend()
    return HTTPBackend(config.base_url, embed_base_url=config.embed_base_url, api_key_env=config.api_key_env,
                       timeout=config.timeout)


class Engine:
    def __init__(self, config: EngineConfig, backend=None):
        config.register_profiles()
        self.config = config
        self.run_dir = Path(config.run_dir)
        self.config_hash = config.config_hash()
        self.toggles = frozenset(config.toggles)
        self.transcript = Transcript()
        self.gateway = Gateway(
            backend if backend is not None else make_backend(config),
            chat_model=config.chat_model,
            embed_model=config.embed_model,
            cache=ResponseCache(config.cache_path),
            max_retries=config.max_retries,
            backoff=config.backoff,
            call_cap=config.call_cap,
            max_output_tokens=config.max_output_tokens,
            temperature=config.temperature,
            transcript=self.transcript,
        )
        self.templates = load_templates(config.templates)
        self._transcript_lock = threading.Lock()

    # -- run directory ---------------------------------------------------

    def _claim_run_dir(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        snap = self.run_dir / "config.json"
        if snap.exists():
            old = _load(snap)
            if old.get("config_hash") != self.config_hash:
                raise ConfigError(f"run directory {self.run_dir} was created under a different config")
            return
        _dump(snap, {"run_id": self.config_hash[:12], "config_hash": self.config_hash,
                     "config": self.config.to_json()})

    def _write_events(self, events: Sequence[dict[str, Any]], command: str) -> None:
        if not events:
            return
        with self._transcript_lock, open(self.run_dir / "transcript.jsonl", "a", encoding="utf-8") as fh:
            for e in events:
                fh.write(json.dumps({"cmd": command, **e}, sort_keys=True) + "\n")

    def _flush(self, command: str) -> None:
        events, self.transcript.events = self.transcript.events, []
        self._write_events(events, command)

    def _manifest(self, path: str | None = None) -> list[ManifestEntry]:
        path = path or self.config.manifest
        if not path:
            raise ConfigError("no manifest configured")
        return load_manifest(path)

    @property
    def store_dir(self) -> Path:
        return self.run_dir / "store"

    @property
    def frozen_path(self) -> Path:
        return self.run_dir / "prompts" / "frozen.json"

    # -- commands --------------------------------------------------------

    def ingest(self) -> str:
        if not self.config.concept_corpus:
            raise ConfigError("concept_corpus is not configured")
        if not Path(self.config.concept_corpus).exists():
            raise ConfigError(f"concept corpus {self.config.concept_corpus} does not exist")
        self._claim_run_dir()
        store = ingest_concepts(self.config.concept_corpus, self.gateway)
        store.save(self.store_dir)
        self._flush("ingest")
        log.info("ingested %d concepts (dim %d), checksum %s", len(store), store.dim, store.checksum)
        return store.checksum

    def _scoped(self, fn, items, command: str) -> list:
        """Run ``fn`` over items concurrently; transcript events land in item order."""
        def work(item):
            with self.transcript.scope() as events:
                result = fn(item)
            return result, list(events)

        out = []
        with ThreadPoolExecutor(self.config.parallelism) as pool:
            for result, events in pool.map(work, items):
                self._write_events(events, command)
                out.append(result)
        return out

    def prepare(self) -> PromptSet:
        self._claim_run_dir()
        if self.frozen_path.exists():
            log.info("prompts already frozen in %s", self.frozen_path)
            return PromptSet.from_json(_load(self.frozen_path))
        cfg = self.config
        entries = self._manifest()
        profiles = [dataset_profile(d) for d in sorted({e.dataset_id for e in entries})]
        profile = union_profile(profiles)

        vecs_path = self.run_dir / "structured_vecs.json"
        if vecs_path.exists():
            cues = StructuredVECSet.from_json(_load(vecs_path))
        else:
            cues = direct_informing(self.gateway, self.templates["i_d"], load_expert_cues(cfg.expert_cues),
                                    load_survey(cfg.survey or None))
            _dump(vecs_path, cues.to_json())
        self._flush("prepare")

        logic_path = self.run_dir / "contrastive_logic.json"
        if logic_path.exists():
            logic = ContrastiveLogic.from_json(_load(logic_path))
        else:
            corpus = sample_corpus(entries, "bdr", cfg.per_emotion, cfg.seed)
            parts = self._scoped(
                lambda e: reverse_reasoning(self.gateway, self.templates["i_rev"], e.ground_truth, e.image,
                                            dataset_profile(e.dataset_id)),
                corpus, "prepare")
            logic = aggregate_logic(parts)
            _dump(logic_path, logic.to_json())

        def on_round(prompts: PromptSet, feedback: RefinementFeedback) -> None:
            _dump(self.run_dir / "prompts" / f"v{prompts.version}.json", prompts.to_json())
            _dump(self.run_dir / "feedback" / f"round{feedback.round}.json", feedback.to_json())

        refiner = SelfRefiner(self.gateway, self.templates, profile, cues, logic, cfg.n, cfg.m,
                              parallelism=cfg.parallelism, journal=Journal(self.run_dir / "sve_journal.jsonl"),
                              on_round=on_round)
        initial = refiner.generate_prompts()
        _dump(self.run_dir / "prompts" / "v0.json", initial.to_json())
        self._flush("prepare")
        if NO_SVE in self.toggles or cfg.sve_iterations == 0:
            final = initial
        else:
            shots = sample_corpus(entries, "fewshot", cfg.per_emotion, cfg.seed)
            fewshot = FewShotSet(tuple((e.image, e.ground_truth) for e in shots))
            final = refiner.refinement_loop(initial, fewshot, cfg.sve_iterations)
            self._flush("prepare")
        _dump(self.frozen_path, final.to_json())
        return final

    def _frozen(self) -> PromptSet:
        if not self.frozen_path.exists():
            raise ConfigError("no frozen prompts; run `prepare` first")
        return PromptSet.from_json(_load(self.frozen_path))

    def _process(self, entry: ManifestEntry, prompts: PromptSet, store: ConceptStore | None,
                 provenance: dict[str, Any]) -> PredictionRecord:
        cfg = self.config
        profile = dataset_profile(entry.dataset_id)
        emotions = [e for e in prompts.subjective if e in profile.vocabulary]
        flags = []
        try:
            cues = extract_vecs(self.gateway, self.templates["extract"], entry.image, prompts, emotions)
        except EmptyExtraction as exc:
            cues = exc.extraction or VECExtraction((), entry.digest, {})
            flags.append("empty_extraction")
        concepts = None
        if NO_MER not in self.toggles:
            assert store is not None
            alpha = 1.0 if NO_MM in self.toggles else cfg.alpha
            if cues.empty:
                if alpha == 1.0:
                    concepts = EMPTY_RETRIEVAL
                    flags.append("no_retrieval")
                else:
                    alpha = 0.0
            if concepts is None:
                text = None if cues.empty else text_query(self.gateway, list(cues.phrases), cfg.text_embedding)
                image = None if alpha == 1.0 else image_query(self.gateway, entry.image)
                concepts = retrieve_topk(store, text, image, alpha, cfg.k)
                self.transcript.record({"op": "retrieve_topk", "image": entry.digest, "alpha": alpha,
                                        "k": cfg.k, "ids": concepts.ids})
        judgment = ablation_reflect(self.gateway, self.templates["i_p"], cues, concepts, entry.image, profile,
                                    self.toggles & {NO_MER, NO_ROA})
        if NO_ROA in self.toggles:
            self.transcript.record({"op": "elicitive_union", "image": entry.digest})
        return PredictionRecord(entry.digest, entry.dataset_id, judgment.emotions.labels,
                                {**provenance, "flags": flags, "concepts": [] if concepts is None else concepts.ids})

    def infer(self, manifest: str | None = None) -> Path:
        self._claim_run_dir()
        prompts = self._frozen()
        store = None
        if NO_MER not in self.toggles:
            if not (self.store_dir / "store.json").exists():
                raise ConfigError("no concept store; run `ingest` first")
            store = ConceptStore.load(self.store_dir)
        provenance = {
            "config_hash": self.config_hash,
            "prompt_version": prompts.version,
            "prompt_digest": prompts.digest(),
            "store_checksum": store.checksum if store else None,
        }
        out = self.run_dir / "predictions.jsonl"
        journal = Journal(out, key_field="digest")
        for rec in journal.records():
            old = rec.get("provenance", {})
            if old.get("prompt_digest") != provenance["prompt_digest"] or old.get("config_hash") != self.config_hash:
                raise FrozenPromptsViolation("existing predictions were made with different prompts or config")
        pending = [e for e in split_entries(self._manifest(manifest), "test") if e.digest not in journal]
        log.info("%d test images to process (%d already done)", len(pending), len(journal))

        def work(entry):
            with self.transcript.scope() as events:
                record = self._process(entry, prompts, store, provenance)
            return record, list(events)

        with ThreadPoolExecutor(self.config.parallelism) as pool:
            for record, events in pool.map(work, pending):
                if PromptSet.from_json(_load(self.frozen_path)).digest() != provenance["prompt_digest"]:
                    raise FrozenPromptsViolation("frozen prompts changed during inference")
                self._write_events(events, "infer")
                journal.append(record.to_json())
        self._flush("infer")
        return out

    def evaluate(self, predictions: str | None = None, manifest: str | None = None) -> list[EvalReport]:
        self._claim_run_dir()
        pred_path = Path(predictions) if predictions else self.run_dir / "predictions.jsonl"
        preds = load_predictions(pred_path)
        tests = split_entries(self._manifest(manifest), "test")
        if not tests:
            raise DataError("manifest has no test entries")
        datasets = list(dict.fromkeys(e.dataset_id for e in tests))
        sample = next(iter(preds.values()), None)
        provenance = {"config_hash": self.config_hash}
        if sample is not None:
            provenance.update({k: sample.provenance.get(k) for k in ("prompt_digest", "prompt_version",
                                                                     "store_checksum")})
        reports = [build_report(preds, tests, dataset_profile(d), self.config.seed, mode=self.config.accuracy_mode,
                                provenance=provenance) for d in datasets]
        write_reports(reports, self.run_dir / "report.json")
        (self.run_dir / "report.txt").write_text(self.render(reports), encoding="utf-8")
        return reports

    def render(self, reports: Sequence[EvalReport] | None = None) -> str:
        if reports is None:
            path = self.run_dir / "report.json"
            if not path.exists():
                raise ConfigError("no report; run `eval` first")
            reports = read_reports(path)
        return render_table([(self.config.method_name, r) for r in reports])
