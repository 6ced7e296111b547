#!/usr/bin/env python3
"""
Send chat-completion requests to an OpenAI-compatible HTTP service.

One POST per call to `{base_url}/chat/completions`. Connection errors,
timeouts, 429 and 5xx responses are retried with jittered exponential
backoff; any other non-200 fails at once.
"""

import logging

import backoff
import requests

from errors import TransportError

log = logging.getLogger("chat-client")

RETRYABLE_STATUS = {429, 500, 502, 503, 504}
BACKOFF_FACTOR = 1.0  # seconds; first retry waits up to this long


class _Retryable(Exception):
    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message)


def _post_once(url: str, payload: dict, api_key: str, timeout: float) -> dict:
    headers = {
        "Authorization": f"Bearer {api_key}",
        "Content-Type": "application/json",
    }
    try:
        resp = requests.post(url, json=payload, headers=headers, timeout=timeout)
    except (requests.ConnectionError, requests.Timeout) as e:
        raise _Retryable(f"request failed: {e}") from e

    if resp.status_code == 200:
        return resp.json()
    if resp.status_code in RETRYABLE_STATUS:
        raise _Retryable(f"HTTP {resp.status_code}: {resp.text[:200]}", resp.status_code)
    raise TransportError(f"❌ chat completion rejected: {resp.text[:200]}", resp.status_code)


def _log_backoff(details):
    log.warning(
        f"⚠ retry {details['tries']} after {details['wait']:.2f}s: {details['exception']}"
    )


def send_chat_completion(
    base_url: str,
    payload: dict,
    api_key: str,
    timeout: float = 30.0,
    max_retries: int = 3,
) -> dict:
    """POST a chat-completions payload and return the decoded JSON body."""
    url = f"{base_url.rstrip('/')}/chat/completions"
    send = backoff.on_exception(
        backoff.expo,
        _Retryable,
        max_tries=max_retries + 1,
        jitter=backoff.full_jitter,
        on_backoff=_log_backoff,
        logger=None,
        factor=BACKOFF_FACTOR,
    )(_post_once)

    try:
        body = send(url, payload, api_key, timeout)
    except _Retryable as e:
        log.error(f"❌ giving up on {url} after {max_retries + 1} attempts: {e}")
        raise TransportError(f"chat completion failed after retries: {e}", e.status) from e

    log.debug(f"✅ chat completion from {url}")
    return body
