"""Transports for chat-completion inference: live HTTP, cassette replay, oracle.

``infer`` runs a batch through any transport with bounded concurrency and
per-request retries; output order always equals input order, and failures are
recorded as entries rather than aborting the batch.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import requests

from . import parsing
from .corpus import RadiologyReport
from .errors import AuthError, CassetteMiss, IoFailure, TransportError
from .prompting import PromptBundle
from .tagging import tag_lesions

API_KEY_ENV = "LLM_API_KEY"
ENDPOINT_ENV = "LLM_ENDPOINT"


@dataclass
class RawCompletion:
    report_id: str
    text: str
    latency_s: float = 0.0
    transport_meta: dict = field(default_factory=dict)
    attempts: int = 1
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return {
            "report_id": self.report_id,
            "text": self.text,
            "latency_s": self.latency_s,
            "transport_meta": self.transport_meta,
            "attempts": self.attempts,
            "error": self.error,
        }


def cassette_key(system: str, user: str, params: dict, model: str) -> str:
    payload = json.dumps(
        {"system": system, "user": user, "params": params, "model": model},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _bundle_key(bundle: PromptBundle, model: str) -> str:
    return cassette_key(
        bundle.system_instruction, bundle.user_content, bundle.params.to_dict(), model
    )


class Transport(ABC):
    """One request execution; retries and ordering live in ``infer``."""

    @abstractmethod
    def execute(self, bundle: PromptBundle) -> RawCompletion:
        raise NotImplementedError


class LiveTransport(Transport):
    """POSTs OpenAI-style chat-completion requests to a configured endpoint."""

    def __init__(
        self,
        endpoint: str | None = None,
        model: str = "gpt-4o",
        api_key: str | None = None,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint or os.environ.get(ENDPOINT_ENV, "")
        if not self.endpoint:
            raise TransportError("-", f"no endpoint configured (flag or {ENDPOINT_ENV})")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout

    def execute(self, bundle: PromptBundle) -> RawCompletion:
        body = {
            "model": self.model,
            "messages": [
                {"role": "system", "content": bundle.system_instruction},
                {"role": "user", "content": bundle.user_content},
            ],
            **bundle.params.to_dict(),
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = requests.post(self.endpoint, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(bundle.report_id, f"request failed: {exc}", retryable=True)
        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(
                bundle.report_id, f"HTTP {resp.status_code}", retryable=True
            )
        if resp.status_code != 200:
            raise TransportError(bundle.report_id, f"HTTP {resp.status_code}")
        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(bundle.report_id, f"malformed response body: {exc}")
        if not text:
            raise TransportError(bundle.report_id, "empty completion text")
        meta = {"model": payload.get("model", self.model)}
        if isinstance(payload.get("usage"), dict):
            meta["usage"] = payload["usage"]
        return RawCompletion(report_id=bundle.report_id, text=text, transport_meta=meta)


class ReplayTransport(Transport):
    """Serves recorded completions from a cassette; raises on any miss."""

    def __init__(self, path, model: str | None = None):
        self.path = Path(path)
        self._entries: dict[str, str] = {}
        models: set[str] = set()
        try:
            raw_lines = self.path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read cassette {self.path}: {exc}") from exc
        for raw in raw_lines:
            if not raw.strip():
                continue
            entry = json.loads(raw)
            self._entries[entry["key"]] = entry["response_text"]
            models.add(entry.get("request", {}).get("model", ""))
        if model is None:
            if len(models) > 1:
                raise IoFailure(
                    f"cassette {self.path} mixes models {sorted(models)}; pass model= explicitly"
                )
            model = next(iter(models)) if models else ""
        self.model = model

    def execute(self, bundle: PromptBundle) -> RawCompletion:
        key = _bundle_key(bundle, self.model)
        if key not in self._entries:
            raise CassetteMiss(bundle.report_id)
        return RawCompletion(
            report_id=bundle.report_id,
            text=self._entries[key],
            transport_meta={"model": self.model, "cassette": str(self.path)},
        )


class OracleTransport(Transport):
    """Emits contract-valid completions derived from gold labels.

    With ``noise`` 0 the emitted labels equal the gold labels; with noise r,
    each lesion's label is independently resampled (uniformly over the other
    two labels) with probability r.  Draws are keyed by
    (seed, report_id, lesion_id), so results do not depend on batch order.
    """

    def __init__(self, reports: Iterable[RadiologyReport], noise: float = 0.0, seed: int = 0):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must be in [0,1]")
        self._by_id = {r.report_id: r for r in reports}
        self.noise = noise
        self.seed = seed

    def _uniforms(self, report_id: str, lesion_id: str) -> tuple[float, float]:
        digest = hashlib.blake2b(
            f"{self.seed}|{report_id}|{lesion_id}".encode("utf-8"), digest_size=16
        ).digest()
        u1 = int.from_bytes(digest[:8], "big") / 2**64
        u2 = int.from_bytes(digest[8:], "big") / 2**64
        return u1, u2

    def label_for(self, report_id: str, lesion_id: str, gold: int) -> int:
        u1, u2 = self._uniforms(report_id, lesion_id)
        if u1 >= self.noise:
            return gold
        others = [l for l in (0, 1, 2) if l != gold]
        return others[int(u2 * 2)]

    def execute(self, bundle: PromptBundle) -> RawCompletion:
        report = self._by_id.get(bundle.report_id)
        if report is None:
            raise TransportError(bundle.report_id, "report not in oracle corpus")
        tagged = tag_lesions(report)
        blocks: dict[str, dict[str, int]] = {}
        positives = 0
        for tag, lesion_id in tagged.tag_map.items():
            lesion = report.lesion(lesion_id)
            gold = lesion.gold_label if lesion.gold_label is not None else 0
            label = self.label_for(report.report_id, lesion_id, gold)
            if label in (1, 2):
                key = f"{lesion.anatomy.display} Inci"
                blocks.setdefault(key, {})[tag] = label
                positives += 1
        reasoning = (
            f"Reviewed {len(tagged.tag_map)} tagged lesions; "
            f"{positives} classified as incidentalomas."
        )
        text = parsing.render_output_text(blocks, reasoning)
        return RawCompletion(
            report_id=bundle.report_id,
            text=text,
            transport_meta={"model": f"oracle(noise={self.noise},seed={self.seed})"},
        )


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    multiplier: float = 2.0
    jitter: float = 0.1

    def delay(self, attempt: int) -> float:
        base = self.base_delay * self.multiplier ** (attempt - 1)
        if self.jitter:
            base *= 1.0 + self.jitter * (2.0 * random.random() - 1.0)
        return max(0.0, base)


def infer(
    bundles: Sequence[PromptBundle],
    transport: Transport,
    max_in_flight: int = 4,
    retry: RetryPolicy | None = None,
) -> list[RawCompletion]:
    """Run a batch through the transport; one completion per bundle, in order.

    Retryable transport errors are retried per ``retry``; auth failures and
    cassette misses are not.  Exhausted or non-retryable failures become
    entries with ``error`` set instead of raising.
    """
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    retry = retry or RetryPolicy()

    def run_one(bundle: PromptBundle) -> RawCompletion:
        attempt = 1
        started = time.perf_counter()
        while True:
            try:
                completion = transport.execute(bundle)
                completion.attempts = attempt
                completion.latency_s = time.perf_counter() - started
                return completion
            except TransportError as exc:
                if exc.retryable and attempt < retry.max_attempts:
                    time.sleep(retry.delay(attempt))
                    attempt += 1
                    continue
                return RawCompletion(
                    report_id=bundle.report_id,
                    text="",
                    latency_s=time.perf_counter() - started,
                    attempts=attempt,
                    error=str(exc),
                )
            except (AuthError, CassetteMiss) as exc:
                return RawCompletion(
                    report_id=bundle.report_id,
                    text="",
                    latency_s=time.perf_counter() - started,
                    attempts=attempt,
                    error=f"{type(exc).__name__}: {exc}",
                )

    if max_in_flight == 1:
        return [run_one(b) for b in bundles]
    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(run_one, bundles))


def record_cassette(
    bundles: Sequence[PromptBundle],
    transport: Transport,
    path,
    max_in_flight: int = 1,
    retry: RetryPolicy | None = None,
) -> list[RawCompletion]:
    """Execute bundles and persist a replayable cassette keyed by request hash."""
    completions = infer(bundles, transport, max_in_flight=max_in_flight, retry=retry)
    for completion in completions:
        if not completion.ok:
            raise TransportError(
                completion.report_id,
                f"cannot record cassette: {completion.error}",
                attempts=completion.attempts,
            )
    model = getattr(transport, "model", "")
    lines = []
    for bundle, completion in zip(bundles, completions):
        entry = {
            "key": _bundle_key(bundle, model),
            "request": {
                "system": bundle.system_instruction,
                "user": bundle.user_content,
                "params": bundle.params.to_dict(),
                "model": model,
            },
            "response_text": completion.text,
        }
        lines.append(json.dumps(entry, ensure_ascii=False))
    try:
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write cassette {path}: {exc}") from exc
    return completions
