"""Single gateway over chat/vision completion and text-to-image providers.

Real providers speak the common HTTP+JSON chat-completion shape and are
configured per model family; a scriptable mock provider makes every
downstream module a pure function of (inputs, script, seed) for offline
runs and tests. The gateway owns the retry policy (bounded exponential
backoff, transient errors only) and a per-family admission gate for rate
ceilings. Generated images land in the content-addressed artifact store
and travel as refs from then on.
"""

from __future__ import annotations

import base64
import hashlib
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Any, Mapping, Protocol

from mmqa.models import MAX_IMAGE_DESCRIPTION
from mmqa.store import ArtifactStore


class GatewayError(Exception):
    """Base provider failure; terminal unless a subclass says otherwise."""

    retryable = False


class ProviderTimeout(GatewayError):
    retryable = True


class RateLimited(GatewayError):
    retryable = True


class ProviderError(GatewayError):
    """Upstream 5xx-style failure; worth retrying."""

    retryable = True


class AuthError(GatewayError):
    retryable = False


class DescriptionTooLong(GatewayError):
    retryable = False


class ScriptExhausted(GatewayError):
    """The mock script ran out of steps; scripts never recycle silently."""

    retryable = False


_ERROR_KINDS = {
    "timeout": ProviderTimeout,
    "rate_limited": RateLimited,
    "provider": ProviderError,
    "auth": AuthError,
}


@dataclass(frozen=True)
class EndpointSpec:
    """Where one model lives: provider kind, URL, model id, and the env var naming its key."""

    provider: str = "mock"
    base_url: str = ""
    model: str = ""
    auth_env: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"provider": self.provider, "base_url": self.base_url, "model": self.model, "auth_env": self.auth_env}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EndpointSpec":
        return cls(
            provider=str(data.get("provider", "mock")),
            base_url=str(data.get("base_url", "")),
            model=str(data.get("model", "")),
            auth_env=str(data.get("auth_env", "")),
        )


@dataclass(frozen=True)
class RequestLimits:
    max_retries: int = 2
    timeout_s: float = 60.0
    rate_per_second: float | None = None
    backoff_base_s: float = 0.5
    backoff_cap_s: float = 8.0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RequestLimits":
        return cls(
            max_retries=int(data.get("max_retries", 2)),
            timeout_s=float(data.get("timeout_s", 60.0)),
            rate_per_second=data.get("rate_per_second"),
            backoff_base_s=float(data.get("backoff_base_s", 0.5)),
            backoff_cap_s=float(data.get("backoff_cap_s", 8.0)),
        )


@dataclass(frozen=True)
class FamilyProfile:
    """A chat model and an image model declared together, plus request limits.

    Pairing both endpoints in one profile keeps the description generator
    and the image generator in the same model family by construction.
    """

    family_name: str
    chat: EndpointSpec = EndpointSpec()
    image: EndpointSpec = EndpointSpec()
    limits: RequestLimits = RequestLimits()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FamilyProfile":
        return cls(
            family_name=str(data["family_name"]),
            chat=EndpointSpec.from_dict(data.get("chat", {})),
            image=EndpointSpec.from_dict(data.get("image", {})),
            limits=RequestLimits.from_dict(data.get("limits", {})),
        )


@dataclass(frozen=True)
class ChatRequest:
    system: str
    user: str
    image_refs: tuple[str, ...] = ()
    temperature: float | None = None
    seed: int | None = None


@dataclass(frozen=True)
class ChatResponse:
    text: str
    attempt_count: int
    latency_s: float


@dataclass(frozen=True)
class ImageRequest:
    description: str
    size: str = "1024x1024"


@dataclass(frozen=True)
class ImageResult:
    ref: str
    media_type: str
    size_bytes: int
    attempt_count: int


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class ImageBackend(Protocol):
    def generate(self, req: ImageRequest) -> tuple[bytes, str]: ...


@dataclass(frozen=True)
class GatewayCall:
    """Verbatim audit record of one provider exchange."""

    kind: str  # "chat" | "image"
    family: str
    system: str
    user: str
    response: str


def wall_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


class TickClock:
    """Deterministic clock for scripted runs: epoch seconds advancing one step per read."""

    def __init__(self, start: float = 0.0, step: float = 1.0):
        self._next = start
        self._step = step
        self._lock = threading.Lock()

    def __call__(self) -> str:
        with self._lock:
            value = self._next
            self._next += self._step
        return datetime.fromtimestamp(value, timezone.utc).isoformat()


class ModelGateway:
    """Dispatches requests to per-family backends under one retry policy."""

    def __init__(
        self,
        store: ArtifactStore,
        sleep=time.sleep,
        monotonic=time.monotonic,
        log_transcripts: bool = True,
    ):
        self.store = store
        self._sleep = sleep
        self._monotonic = monotonic
        self._backends: dict[str, tuple[ChatBackend, ImageBackend]] = {}
        self._gate_lock = threading.Lock()
        self._last_call: dict[str, float] = {}
        self._counter_lock = threading.Lock()
        self.chat_calls = 0
        self.image_calls = 0
        self._log_transcripts = log_transcripts
        self.transcript: list[GatewayCall] = []

    def register(self, profile: FamilyProfile, chat: ChatBackend, image: ImageBackend) -> None:
        self._backends[profile.family_name] = (chat, image)

    def _resolve(self, profile: FamilyProfile) -> tuple[ChatBackend, ImageBackend]:
        try:
            return self._backends[profile.family_name]
        except KeyError:
            pass
        if profile.chat.provider == "http":
            backends = (HttpChatBackend(profile.chat, profile.limits), HttpImageBackend(profile.image, profile.limits))
            self._backends[profile.family_name] = backends
            return backends
        raise GatewayError(
            f"no backend registered for family {profile.family_name!r} (provider {profile.chat.provider!r})"
        )

    def _admit(self, profile: FamilyProfile) -> None:
        rate = profile.limits.rate_per_second
        if not rate:
            return
        min_interval = 1.0 / rate
        with self._gate_lock:
            now = self._monotonic()
            ready = self._last_call.get(profile.family_name, now - min_interval) + min_interval
            wait = ready - now
            self._last_call[profile.family_name] = max(now, ready)
        if wait > 0:
            self._sleep(wait)

    def _with_retries(self, profile: FamilyProfile, call):
        limits = profile.limits
        attempts = 0
        while True:
            attempts += 1
            self._admit(profile)
            try:
                return call(), attempts
            except GatewayError as err:
                if not err.retryable or attempts > limits.max_retries:
                    raise
                delay = min(limits.backoff_cap_s, limits.backoff_base_s * (2 ** (attempts - 1)))
                if delay > 0:
                    self._sleep(delay)

    def _record(self, call: GatewayCall) -> None:
        if self._log_transcripts:
            with self._counter_lock:
                self.transcript.append(call)

    def complete(self, profile: FamilyProfile, req: ChatRequest) -> ChatResponse:
        backend, _ = self._resolve(profile)
        with self._counter_lock:
            self.chat_calls += 1
        started = self._monotonic()
        text, attempts = self._with_retries(profile, lambda: backend.complete(req))
        self._record(GatewayCall("chat", profile.family_name, req.system, req.user, text))
        return ChatResponse(text=text, attempt_count=attempts, latency_s=self._monotonic() - started)

    def generate_image(self, profile: FamilyProfile, req: ImageRequest) -> ImageResult:
        if len(req.description) >= MAX_IMAGE_DESCRIPTION:
            raise DescriptionTooLong(
                f"image description has {len(req.description)} characters; "
                f"must be strictly less than {MAX_IMAGE_DESCRIPTION}"
            )
        _, backend = self._resolve(profile)
        with self._counter_lock:
            self.image_calls += 1
        (data, media_type), attempts = self._with_retries(profile, lambda: backend.generate(req))
        ref = self.store.put(data, media_type)
        self._record(GatewayCall("image", profile.family_name, "", req.description, ref))
        return ImageResult(ref=ref, media_type=media_type, size_bytes=len(data), attempt_count=attempts)


# ---------------------------------------------------------------------------
# Scriptable mock provider
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MockStep:
    """One scripted response.

    Exactly one of `text`, `variants`, `error`, `data_b64` or `derive`
    drives the step; `variants` picks a branch deterministically from
    (seed, call index).
    """

    text: str | None = None
    variants: tuple[str, ...] = ()
    error: str | None = None
    data_b64: str | None = None
    derive: bool = False
    media_type: str = "application/octet-stream"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MockStep":
        return cls(
            text=data.get("text"),
            variants=tuple(data.get("variants", ()) or ()),
            error=data.get("error"),
            data_b64=data.get("data_b64"),
            derive=bool(data.get("derive", False)),
            media_type=str(data.get("media_type", "application/octet-stream")),
        )


@dataclass(frozen=True)
class MockScript:
    chat: tuple[MockStep, ...] = ()
    image: tuple[MockStep, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "MockScript":
        return cls(
            chat=tuple(MockStep.from_dict(s) for s in data.get("chat", [])),
            image=tuple(MockStep.from_dict(s) for s in data.get("image", [])),
        )


def _variant_index(seed: int, call_index: int, n: int) -> int:
    digest = hashlib.sha256(f"{seed}:{call_index}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % n


class MockProvider:
    """Interprets a MockScript; responses depend only on (script, seed, call index)."""

    def __init__(self, script: MockScript, seed: int = 0):
        self.script = script
        self.seed = seed
        self._chat_index = 0
        self._image_index = 0
        self._lock = threading.Lock()

    def _next(self, steps: tuple[MockStep, ...], counter: str, kind: str) -> tuple[MockStep, int]:
        with self._lock:
            index = getattr(self, counter)
            if index >= len(steps):
                raise ScriptExhausted(f"mock {kind} script exhausted after {index} calls")
            setattr(self, counter, index + 1)
        return steps[index], index

    def complete(self, req: ChatRequest) -> str:
        step, index = self._next(self.script.chat, "_chat_index", "chat")
        if step.error:
            raise _ERROR_KINDS[step.error](f"scripted {step.error} at chat step {index}")
        if step.variants:
            return step.variants[_variant_index(self.seed, index, len(step.variants))]
        if step.text is None:
            raise GatewayError(f"chat step {index} carries no response")
        return step.text

    def generate(self, req: ImageRequest) -> tuple[bytes, str]:
        step, index = self._next(self.script.image, "_image_index", "image")
        if step.error:
            raise _ERROR_KINDS[step.error](f"scripted {step.error} at image step {index}")
        if step.data_b64 is not None:
            return base64.b64decode(step.data_b64), step.media_type
        # Derived payload: distinct descriptions yield distinct artifacts.
        payload = b"mock-image:" + hashlib.sha256(req.description.encode("utf-8")).digest()
        return payload, step.media_type


def mock_backend(
    script: MockScript, seed: int = 0, family_name: str = "mock"
) -> tuple[FamilyProfile, MockProvider]:
    """A profile plus interpreter whose responses replay byte-identically per (script, seed)."""
    profile = FamilyProfile(
        family_name=family_name,
        chat=EndpointSpec(provider="mock"),
        image=EndpointSpec(provider="mock"),
        limits=RequestLimits(max_retries=2, backoff_base_s=0.0),
    )
    return profile, MockProvider(script, seed)


# ---------------------------------------------------------------------------
# HTTP backends (chat-completion style wire shape)
# ---------------------------------------------------------------------------


def _auth_headers(spec: EndpointSpec) -> dict[str, str]:
    if not spec.auth_env:
        return {}
    key = os.environ.get(spec.auth_env)
    if not key:
        raise AuthError(f"environment variable {spec.auth_env!r} is not set")
    return {"Authorization": f"Bearer {key}"}


def _raise_for_status(status_code: int, body: str) -> None:
    if status_code == 429:
        raise RateLimited(f"provider returned 429: {body[:200]}")
    if status_code in (401, 403):
        raise AuthError(f"provider returned {status_code}: {body[:200]}")
    if status_code == 408:
        raise ProviderTimeout(f"provider returned 408: {body[:200]}")
    if status_code >= 500:
        raise ProviderError(f"provider returned {status_code}: {body[:200]}")
    if status_code >= 400:
        raise GatewayError(f"provider rejected request ({status_code}): {body[:200]}")


class HttpChatBackend:
    def __init__(self, spec: EndpointSpec, limits: RequestLimits):
        self.spec = spec
        self.limits = limits

    def complete(self, req: ChatRequest) -> str:
        import httpx

        payload: dict[str, Any] = {
            "model": self.spec.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
        }
        if req.temperature is not None:
            payload["temperature"] = req.temperature
        if req.seed is not None:
            payload["seed"] = req.seed
        try:
            response = httpx.post(
                f"{self.spec.base_url.rstrip('/')}/chat/completions",
                json=payload,
                headers=_auth_headers(self.spec),
                timeout=self.limits.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise ProviderError(str(exc)) from exc
        _raise_for_status(response.status_code, response.text)
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed completion payload: {exc}") from exc


class HttpImageBackend:
    def __init__(self, spec: EndpointSpec, limits: RequestLimits):
        self.spec = spec
        self.limits = limits

    def generate(self, req: ImageRequest) -> tuple[bytes, str]:
        import httpx

        payload = {
            "model": self.spec.model,
            "prompt": req.description,
            "size": req.size,
            "response_format": "b64_json",
        }
        try:
            response = httpx.post(
                f"{self.spec.base_url.rstrip('/')}/images/generations",
                json=payload,
                headers=_auth_headers(self.spec),
                timeout=self.limits.timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(str(exc)) from exc
        except httpx.HTTPError as exc:
            raise ProviderError(str(exc)) from exc
        _raise_for_status(response.status_code, response.text)
        try:
            encoded = response.json()["data"][0]["b64_json"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderError(f"malformed image payload: {exc}") from exc
        return base64.b64decode(encoded), "image/png"
