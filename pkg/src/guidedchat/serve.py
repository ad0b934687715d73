"""HTTP serving of interactive guided-chat sessions.

Sessions live in memory with idle expiry. The model is shared read-only; each
session guards its own state with a lock. Every response the UI renders comes
from these endpoints; the client performs no inference of its own.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .corpus import (
    IntentKeyword,
    KeywordInventory,
    Turn,
    TrainingExample,
    Vocabulary,
    encode_context,
    encode_knowledge,
    encode_profile,
    normalize_text,
)
from .generator import RunOptions, build_context, generate
from .model import DialogueModel
from .scenario import top_biased_tokens


class KeywordBody(BaseModel):
    type: str
    topic: str


class SessionBody(BaseModel):
    profile: dict[str, str] = Field(default_factory=dict)
    knowledge: list[tuple[str, str, str]] = Field(min_length=1)
    target: KeywordBody


class UtteranceBody(BaseModel):
    text: str = Field(min_length=1)


@dataclass
class ChatSession:
    id: str
    profile: tuple[tuple[str, str], ...]
    knowledge: tuple[tuple[str, str, str], ...]
    target: IntentKeyword
    history: list[Turn] = field(default_factory=list)
    predictions: list[dict] = field(default_factory=list)
    last_active: float = field(default_factory=time.monotonic)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def achieved(self) -> bool:
        topic = " ".join(self.target.topic.casefold().split())
        for turn in reversed(self.history):
            if turn.speaker == "system":
                return topic in " ".join(turn.text.casefold().split())
        return False

    def transcript(self) -> list[dict]:
        return [{"speaker": t.speaker, "text": t.text} for t in self.history]


def keyword_panel(ctx, inventory: KeywordInventory) -> dict:
    """Per-label probabilities with picked flags, sorted by descending probability."""
    picked_types = {i for i, _ in ctx.selection.type_picks}
    picked_topics = {i for i, _ in ctx.selection.topic_picks}

    def rows(names, probs, picked):
        order = np.argsort(-probs, kind="stable")
        return [{"name": names[int(i)], "prob": float(probs[int(i)]),
                 "picked": int(i) in picked} for i in order]

    return {
        "type": rows(inventory.types, ctx.distribution.type_probs, picked_types),
        "topic": rows(inventory.topics, ctx.distribution.topic_probs, picked_topics),
    }


def create_app(model: DialogueModel, vocab: Vocabulary, inventory: KeywordInventory,
               options: RunOptions, idle_ttl: float = 1800.0,
               bias_top_k: int = 10) -> FastAPI:
    app = FastAPI(title="guidedchat", version="0.1.0")
    sessions: dict[str, ChatSession] = {}
    registry_lock = threading.Lock()
    model.eval()

    @app.exception_handler(RequestValidationError)
    async def validation_as_400(request: Request, exc: RequestValidationError):
        errors = [{"field": ".".join(str(p) for p in e["loc"]), "message": e["msg"]}
                  for e in exc.errors()]
        return JSONResponse(status_code=400, content={"errors": errors})

    def expire_idle() -> None:
        now = time.monotonic()
        with registry_lock:
            for sid in [s for s, sess in sessions.items()
                        if now - sess.last_active > idle_ttl]:
                del sessions[sid]

    def get_session(session_id: str) -> ChatSession:
        expire_idle()
        with registry_lock:
            session = sessions.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id}")
        session.last_active = time.monotonic()
        return session

    @app.post("/session")
    def create_session(body: SessionBody) -> dict:
        expire_idle()
        session = ChatSession(
            id=uuid.uuid4().hex[:12],
            profile=tuple((k, v) for k, v in body.profile.items()),
            knowledge=tuple(body.knowledge),
            target=IntentKeyword(type=body.target.type, topic=body.target.topic),
        )
        with registry_lock:
            sessions[session.id] = session
        return {"id": session.id, "target": session.target.to_json()}

    @app.post("/session/{session_id}/utterance")
    def post_utterance(session_id: str, body: UtteranceBody) -> dict:
        session = get_session(session_id)
        if not normalize_text(body.text):
            raise HTTPException(status_code=400,
                                detail="utterance is empty after normalization")
        with session.lock:
            session.history.append(Turn(speaker="user", text=normalize_text(body.text)))
            example = TrainingExample(
                knowledge_ids=tuple(encode_knowledge(session.knowledge, vocab,
                                                     model.config.max_src_len)),
                profile_ids=tuple(encode_profile(session.profile, vocab,
                                                 model.config.max_src_len)),
                context_ids=tuple(encode_context(session.history, session.target,
                                                 vocab, model.config.max_src_len)),
                reference_ids=(vocab.eos_id,),
                keyword_targets=np.zeros(model.n_types + model.n_topics,
                                         dtype=np.float32),
            )
            ctx = build_context(model, example, vocab, options)
            result = generate(ctx, model)
            reply = result.text if result.text.strip() else "..."
            session.history.append(Turn(speaker="system", text=reply))
            panel = keyword_panel(ctx, inventory)
            bias_top = top_biased_tokens(ctx.bias, vocab.id_to_token, k=bias_top_k)
            session.predictions.append({
                "keywords": panel,
                "selection": ctx.selection.to_json(),
                "bias_top": bias_top,
            })
            return {
                "reply": reply,
                "keywords": panel,
                "selection": ctx.selection.to_json(),
                "bias_top": bias_top,
                "achieved": session.achieved,
            }

    @app.get("/session/{session_id}")
    def get_transcript(session_id: str) -> dict:
        session = get_session(session_id)
        with session.lock:
            return {
                "id": session.id,
                "target": session.target.to_json(),
                "transcript": session.transcript(),
                "achieved": session.achieved,
                "predictions": session.predictions,
            }

    @app.delete("/session/{session_id}")
    def delete_session(session_id: str) -> dict:
        get_session(session_id)
        with registry_lock:
            sessions.pop(session_id, None)
        return {"deleted": session_id}

    return app
