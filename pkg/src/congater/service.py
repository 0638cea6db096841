"""HTTP inference service with a per-request gate-strength knob.

Every loaded checkpoint becomes a named model. Request handlers are
read-only over the loaded state: omega arrives with each request, is
validated, and never persists anywhere. Sweep responses are cached on
(model, attributes, grid, checkpoint digest) and replayed byte for byte.

A model bundle is a directory holding at least model.ckpt, plus the data
the sweep and rank endpoints work over:

    model.ckpt           trained weights (f32)
    probe_train.jsonl    classification: probe training split
    eval.jsonl           classification: evaluation split
    queries.jsonl        ranking: evaluation queries
    background.jsonl     ranking: background documents
    wordlists/           ranking: attribute word lists
    config.json          optional resolved run configuration
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from congater import data as data_mod
from congater import evaluation
from congater.checkpoint import checkpoint_digest, load_checkpoint
from congater.encoder import EncoderModel
from congater.evaluation import (DEFAULT_GRID, EvalBundle, ProbeConfig,
                                 check_grid, omega_sweep, rank_candidates,
                                 uncertainty)

logger = logging.getLogger(__name__)


class ApiError(Exception):
    """An error with the wire shape {code, message, field?}."""

    def __init__(self, status: int, code: str, message: str,
                 field_name: str | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.field = field_name

    def body(self) -> dict:
        out = {"code": self.code, "message": self.message}
        if self.field is not None:
            out["field"] = self.field
        return out


@dataclass
class ModelBundle:
    name: str
    model: EncoderModel
    task: str
    digest: str
    probe_train: list = field(default_factory=list)
    eval_examples: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    background_neutralities: list[float] = field(default_factory=list)
    wordlists: dict[str, set[int]] = field(default_factory=dict)
    probe_cfg: ProbeConfig | None = None

    @property
    def controllable(self) -> list[str]:
        return [a for a, kind in self.model.config.attributes.items()
                if kind != "none"]

    def eval_bundle(self) -> EvalBundle:
        if self.task == "ranking":
            return EvalBundle(kind="ranking", queries=self.queries,
                              background_neutralities=self.background_neutralities)
        return EvalBundle(kind="classification", probe_train=self.probe_train,
                          eval_examples=self.eval_examples)


def _probe_cfg_from_config(path: Path) -> ProbeConfig | None:
    if not path.exists():
        return None
    section = json.loads(path.read_text()).get("evaluation", {})
    return ProbeConfig(
        n_probes=section.get("n_probes", 5),
        epochs=section.get("probe_epochs", 30),
        lr=section.get("probe_lr", 1e-4),
        batch_size=section.get("probe_batch_size", 128),
        seed=section.get("probe_seed", 0))


def load_bundle(directory: str | Path) -> ModelBundle:
    directory = Path(directory)
    ckpt = directory / "model.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"{directory} has no model.ckpt")
    model = load_checkpoint(ckpt)
    task = model.provenance.get("task")
    if task not in ("classification", "ranking"):
        task = "ranking" if (directory / "queries.jsonl").exists() \
            else "classification"
    bundle = ModelBundle(name=directory.name, model=model, task=task,
                         digest=checkpoint_digest(ckpt),
                         probe_cfg=_probe_cfg_from_config(directory / "config.json"))
    if task == "ranking":
        lists_dir = directory / "wordlists"
        if lists_dir.is_dir():
            bundle.wordlists = data_mod.load_wordlists(lists_dir)
        queries = directory / "queries.jsonl"
        if queries.exists():
            if not bundle.wordlists:
                raise FileNotFoundError(f"{directory}: queries.jsonl needs wordlists/")
            bundle.queries = data_mod.load_jsonl(queries, "ranking",
                                                 lists=bundle.wordlists)
        background = directory / "background.jsonl"
        if background.exists():
            docs = data_mod.load_background(background)
            bundle.background_neutralities = [
                data_mod.doc_neutrality(doc, bundle.wordlists) for doc in docs]
    else:
        probe_train = directory / "probe_train.jsonl"
        if probe_train.exists():
            bundle.probe_train = data_mod.load_jsonl(probe_train, "classification")
        eval_path = directory / "eval.jsonl"
        if eval_path.exists():
            bundle.eval_examples = data_mod.load_jsonl(eval_path, "classification")
    return bundle


def load_bundles(model_dir: str | Path) -> dict[str, ModelBundle]:
    model_dir = Path(model_dir)
    bundles: dict[str, ModelBundle] = {}
    if not model_dir.is_dir():
        return bundles
    for child in sorted(model_dir.iterdir()):
        if child.is_dir() and (child / "model.ckpt").exists():
            bundles[child.name] = load_bundle(child)
            logger.info("loaded model %r (%s)", child.name, bundles[child.name].task)
    return bundles


# ---------------------------------------------------------------------------
# request validation


def _require_dict(body, allowed: set[str], required: set[str]) -> dict:
    if not isinstance(body, dict):
        raise ApiError(422, "invalid_request", "request body must be a JSON object")
    for key in body:
        if key not in allowed:
            raise ApiError(422, "unexpected_field", f"unexpected field {key!r}",
                           field_name=key)
    for key in required:
        if key not in body:
            raise ApiError(422, "missing_field", f"missing field {key!r}",
                           field_name=key)
    return body


def _check_token_list(tokens, vocab_size: int, field_name: str) -> list[int]:
    if not isinstance(tokens, list) or not tokens or \
            not all(isinstance(t, int) and not isinstance(t, bool) for t in tokens):
        raise ApiError(422, "bad_tokens",
                       f"{field_name} must be a nonempty list of token ids",
                       field_name=field_name)
    for t in tokens:
        if not 0 <= t < vocab_size:
            raise ApiError(422, "bad_tokens",
                           f"token id {t} outside vocabulary of {vocab_size}",
                           field_name=field_name)
    return tokens


def _check_omega_map(omega, bundle: ModelBundle) -> dict[str, float]:
    if omega is None:
        return {}
    if not isinstance(omega, dict):
        raise ApiError(422, "bad_omega", "omega must map attribute names to "
                       "values in [0, 1]", field_name="omega")
    known = set(bundle.model.config.attributes)
    out = {}
    for name, value in omega.items():
        if name not in known:
            raise ApiError(422, "unknown_attribute",
                           f"model has no attribute {name!r}",
                           field_name=f"omega.{name}")
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not np.isfinite(value) or not 0.0 <= float(value) <= 1.0:
            raise ApiError(422, "bad_omega",
                           f"omega for {name!r} must be in [0, 1], got {value!r}",
                           field_name=f"omega.{name}")
        out[name] = float(value)
    return out


# ---------------------------------------------------------------------------
# application factory


def create_app(model_dir: str | Path,
               cors_origins: list[str] | None = None) -> FastAPI:
    app = FastAPI(title="congater service", docs_url=None, redoc_url=None)
    app.add_middleware(CORSMiddleware,
                       allow_origins=cors_origins or ["*"],
                       allow_methods=["*"], allow_headers=["*"])
    bundles = load_bundles(model_dir)
    sweep_cache: dict[tuple, bytes] = {}

    @app.exception_handler(ApiError)
    async def on_api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content=exc.body())

    @app.exception_handler(404)
    async def on_not_found(request: Request, exc):
        return JSONResponse(status_code=404, content={
            "code": "not_found", "message": "no such endpoint"})

    @app.exception_handler(405)
    async def on_bad_method(request: Request, exc):
        return JSONResponse(status_code=405, content={
            "code": "method_not_allowed", "message": "method not allowed"})

    def get_bundle(name) -> ModelBundle:
        if not isinstance(name, str) or name not in bundles:
            raise ApiError(404, "unknown_model", f"no model named {name!r}",
                           field_name="model")
        return bundles[name]

    async def read_body(request: Request) -> dict:
        try:
            return await request.json()
        except json.JSONDecodeError as err:
            raise ApiError(422, "invalid_json", f"body is not valid JSON: {err}") \
                from None

    @app.get("/models")
    async def list_models():
        return [{"name": b.name, "task": b.task, "attributes": b.controllable,
                 "classes": b.model.config.task_classes}
                for b in bundles.values()]

    @app.post("/predict")
    async def predict(request: Request):
        body = _require_dict(await read_body(request),
                             allowed={"model", "tokens", "omega"},
                             required={"model", "tokens"})
        bundle = get_bundle(body["model"])
        tokens = _check_token_list(body["tokens"],
                                   bundle.model.config.vocab_size, "tokens")
        if len(tokens) > bundle.model.config.max_length:
            raise ApiError(422, "bad_tokens",
                           f"sequence longer than max_length "
                           f"{bundle.model.config.max_length}",
                           field_name="tokens")
        omegas = _check_omega_map(body.get("omega"), bundle)
        z = bundle.model.encode([tokens], omegas)
        probs = bundle.model.predict(z).values[0]
        return {"probs": [float(p) for p in probs],
                "label": int(probs.argmax()),
                "uncertainty": uncertainty(probs)}

    @app.post("/sweep")
    async def sweep(request: Request):
        body = _require_dict(await read_body(request),
                             allowed={"model", "attributes", "grid"},
                             required={"model"})
        bundle = get_bundle(body["model"])
        attributes = body.get("attributes")
        if attributes is None:
            attributes = bundle.controllable
        if not isinstance(attributes, list) or not attributes or \
                not all(isinstance(a, str) for a in attributes):
            raise ApiError(422, "bad_attributes",
                           "attributes must be a nonempty list of names",
                           field_name="attributes")
        for name in attributes:
            if name not in bundle.model.config.attributes:
                raise ApiError(422, "unknown_attribute",
                               f"model has no attribute {name!r}",
                               field_name="attributes")
        raw_grid = body.get("grid", list(DEFAULT_GRID))
        if not isinstance(raw_grid, list) or \
                not all(isinstance(g, (int, float)) and not isinstance(g, bool)
                        for g in raw_grid):
            raise ApiError(422, "bad_grid", "grid must be a list of numbers",
                           field_name="grid")
        try:
            grid = check_grid(raw_grid)
        except ValueError as err:
            raise ApiError(422, "bad_grid", str(err), field_name="grid") from None
        eval_bundle = bundle.eval_bundle()
        if bundle.task == "classification" and not bundle.eval_examples:
            raise ApiError(409, "no_eval_data",
                           f"model {bundle.name!r} has no bundled eval split")
        if bundle.task == "ranking" and not bundle.queries:
            raise ApiError(409, "no_eval_data",
                           f"model {bundle.name!r} has no bundled queries")
        key = (bundle.name, tuple(attributes), tuple(grid), bundle.digest)
        if key not in sweep_cache:
            report = omega_sweep(bundle.model, eval_bundle, attributes,
                                 grid=grid, probe_cfg=bundle.probe_cfg)
            sweep_cache[key] = json.dumps(report.to_dict()).encode()
        return Response(content=sweep_cache[key], media_type="application/json")

    @app.post("/rank")
    async def rank(request: Request):
        body = _require_dict(await read_body(request),
                             allowed={"model", "query", "candidates", "omega"},
                             required={"model", "query", "candidates"})
        bundle = get_bundle(body["model"])
        if bundle.task != "ranking":
            raise ApiError(409, "mode_mismatch",
                           f"model {bundle.name!r} is a classification model")
        vocab = bundle.model.config.vocab_size
        query = _check_token_list(body["query"], vocab, "query")
        raw = body["candidates"]
        if not isinstance(raw, list) or len(raw) < 2:
            raise ApiError(422, "bad_candidates", "need at least 2 candidates",
                           field_name="candidates")
        candidates = []
        rels = []
        for i, cand in enumerate(raw):
            where = f"candidates[{i}]"
            if not isinstance(cand, dict) or "tokens" not in cand or \
                    not set(cand) <= {"tokens", "rel"}:
                raise ApiError(422, "bad_candidates",
                               f"{where} must be {{tokens, rel?}}",
                               field_name=where)
            candidates.append(_check_token_list(cand["tokens"], vocab,
                                                f"{where}.tokens"))
            if "rel" in cand:
                if cand["rel"] not in (0, 1) or isinstance(cand["rel"], bool):
                    raise ApiError(422, "bad_candidates",
                                   f"{where}.rel must be 0 or 1",
                                   field_name=f"{where}.rel")
                rels.append(int(cand["rel"]))
        if rels and len(rels) != len(candidates):
            raise ApiError(422, "partial_relevance",
                           "either every candidate has rel or none does",
                           field_name="candidates")
        omegas = _check_omega_map(body.get("omega"), bundle)
        scores, order = rank_candidates(bundle.model, query, candidates, omegas)
        neutralities = [data_mod.doc_neutrality(tokens, bundle.wordlists)
                        for tokens in candidates]
        ranking = []
        for position in order:
            entry = {"index": int(position), "score": float(scores[position]),
                     "neutrality": neutralities[position]}
            if rels:
                entry["rel"] = rels[position]
            ranking.append(entry)
        out = {"ranking": ranking}
        if rels:
            ranked_rels = [rels[i] for i in order]
            out["mrr10"] = evaluation.mrr_at_k([ranked_rels], k=10)
            if bundle.background_neutralities:
                ranked_neut = [neutralities[i] for i in order]
                out["nfairr10"] = evaluation.nfairr_at_k(
                    [ranked_neut], bundle.background_neutralities, k=10)
        return out

    return app
