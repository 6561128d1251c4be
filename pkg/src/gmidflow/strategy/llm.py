"""Minimal chat-completion client.

The request body is the common ``{"model", "messages"}`` shape; the reply is
read from ``choices[0].message.content``. Credentials come only from the
environment variable named in the endpoint config.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass
from typing import Callable

import httpx

from ..kvconfig import ConfigError, read_kv

log = logging.getLogger(__name__)


class LlmError(RuntimeError):
    pass


class AuthenticationError(LlmError):
    pass


class TransportError(LlmError):
    pass


class EmptyCompletionError(LlmError):
    pass


@dataclass(frozen=True)
class EndpointConfig:
    url: str
    model: str
    credential_env: str = "GMIDFLOW_API_KEY"
    timeout_s: float = 120.0
    retries: int = 2
    backoff_s: float = 1.0

    def credential(self) -> str:
        key = os.environ.get(self.credential_env, "")
        if not key:
            raise AuthenticationError(f"environment variable {self.credential_env} is not set")
        return key


def load_endpoint(path) -> EndpointConfig:
    raw = read_kv(path)
    try:
        return EndpointConfig(
            url=raw["url"],
            model=raw["model"],
            credential_env=raw.get("credential_env", EndpointConfig.credential_env),
            timeout_s=float(raw.get("timeout", EndpointConfig.timeout_s)),
            retries=int(raw.get("retries", EndpointConfig.retries)),
        )
    except KeyError as exc:
        raise ConfigError(f"{path}: missing endpoint key {exc.args[0]!r}") from None


def llm_step(
    endpoint: EndpointConfig,
    prompt: str,
    *,
    client: httpx.Client | None = None,
    sleep: Callable[[float], None] = time.sleep,
    record: Callable[[dict], None] | None = None,
) -> str:
    """Send ``prompt`` as one user message and return the completion text."""
    key = endpoint.credential()
    body = {"model": endpoint.model, "messages": [{"role": "user", "content": prompt}]}
    headers = {"Authorization": f"Bearer {key}"}
    own = client is None
    client = client or httpx.Client(timeout=endpoint.timeout_s)
    try:
        attempts = endpoint.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                resp = client.post(endpoint.url, json=body, headers=headers)
            except httpx.TransportError as exc:
                log.warning("llm transport failure (attempt %d/%d): %s", attempt, attempts, exc)
                if record:
                    record({"attempt": attempt, "request": body, "error": str(exc)})
                if attempt == attempts:
                    raise TransportError(f"{endpoint.url}: {exc} after {attempts} attempts") from exc
                sleep(endpoint.backoff_s * 2 ** (attempt - 1))
                continue
            if record:
                record({"attempt": attempt, "request": body, "status": resp.status_code, "response": resp.text})
            if resp.status_code in (401, 403):
                raise AuthenticationError(f"{endpoint.url} rejected the credential ({resp.status_code})")
            if resp.status_code >= 500 and attempt < attempts:
                log.warning("llm server error %d (attempt %d/%d)", resp.status_code, attempt, attempts)
                sleep(endpoint.backoff_s * 2 ** (attempt - 1))
                continue
            if resp.status_code != 200:
                raise TransportError(f"{endpoint.url} returned {resp.status_code}: {resp.text[:200]}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                raise EmptyCompletionError(f"{endpoint.url} returned no completion") from None
            if not text or not text.strip():
                raise EmptyCompletionError(f"{endpoint.url} returned an empty completion")
            return text
    finally:
        if own:
            client.close()
    raise TransportError(f"{endpoint.url}: no response")
