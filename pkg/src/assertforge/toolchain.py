"""Adapters for the three external services: compiler, verifier, LLM endpoint.

All three adapters are content-agnostic and replayable: every call is keyed
by a digest of its request, and a ReplayCache can record live outcomes or
serve them back hermetically. Tool commands are user-configurable templates
with {file} and {depth} placeholders; nothing here hard-depends on a
particular compiler or verifier.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shlex
import shutil
import subprocess
import tempfile
import threading
from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Callable

import requests

from .errors import (
    AttemptsExhausted,
    DomainError,
    EndpointUnreachable,
    TransportFailure,
)

COMPILE_STATUSES = ("ok", "syntax_error", "tool_error")
VERIFY_STATUSES = ("proven", "assertion_failed", "inconclusive", "tool_error")
LLM_TASKS = frozenset({"spec", "bugs", "sva", "cot", "solve"})


@dataclass(frozen=True)
class CompileOutcome:
    status: str
    stderr_text: str = ""

    def __post_init__(self):
        if self.status not in COMPILE_STATUSES:
            raise ValueError(f"unknown compile status: {self.status!r}")


@dataclass(frozen=True)
class VerifyOutcome:
    status: str
    log_text: str = ""
    failing_step: int | None = None

    def __post_init__(self):
        if self.status not in VERIFY_STATUSES:
            raise ValueError(f"unknown verify status: {self.status!r}")
        if self.failing_step is not None and self.status != "assertion_failed":
            raise ValueError("failing_step only accompanies assertion_failed")


@dataclass(frozen=True)
class LlmRequest:
    task: str
    prompt_text: str
    temperature: float | None = None  # None -> configured default (0.2)
    max_attempts: int = 3
    # Distinguishes repeated draws of the same prompt in the replay cache.
    nonce: str = ""

    def __post_init__(self):
        if self.task not in LLM_TASKS:
            raise ValueError(f"unknown llm task: {self.task!r}")
        if self.temperature is not None and not (0.0 <= self.temperature <= 2.0):
            raise ValueError("temperature must lie in [0, 2]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")


@dataclass(frozen=True)
class LlmReply:
    text: str
    attempt_index: int


@dataclass
class ToolSettings:
    """Configuration for the three adapters. All fields optional; missing
    tools surface as tool_error / endpoint errors rather than crashes."""

    compiler_cmd: str | None = None
    verifier_cmd: str | None = None
    verifier_depth: int = 20
    llm_url: str | None = None
    llm_cmd: str | None = None
    llm_credential_env: str | None = None
    llm_temperature: float = 0.2
    mock_dir: str | None = None
    mock_mode: str = "off"  # off | replay | record
    keep_temp: bool = False
    scratch_dir: str | None = None
    timeout_s: float = 60.0
    pass_re: str = r"\bPASS(?:ED)?\b"
    fail_re: str = r"\bFAIL(?:ED)?\b"
    unknown_re: str = r"\bUNKNOWN\b"
    step_re: str = r"[Ss]tep\s+(\d+)"

    def __post_init__(self):
        if self.mock_mode not in ("off", "replay", "record"):
            raise ValueError(f"unknown mock mode: {self.mock_mode!r}")


def request_digest(payload: dict) -> str:
    """Stable content key for one adapter request."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


class ReplayCache:
    """Digest-keyed store of adapter outcomes, one JSON file per request.

    Safe for concurrent readers; writes are serialized and atomic.
    """

    def __init__(self, directory: str | Path, mode: str = "replay"):
        if mode not in ("replay", "record"):
            raise ValueError(f"unknown cache mode: {mode!r}")
        self.dir = Path(directory)
        self.mode = mode
        self._write_lock = threading.Lock()
        if mode == "record":
            self.dir.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.dir / f"{key}.json"

    def get(self, key: str) -> dict | None:
        p = self._path(key)
        if not p.is_file():
            return None
        return json.loads(p.read_text(encoding="utf-8"))

    def put(self, key: str, request: dict, response: dict) -> None:
        payload = json.dumps(
            {"request": request, "response": response}, indent=2, sort_keys=True
        )
        with self._write_lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(payload, encoding="utf-8")
            os.replace(tmp, self._path(key))


class Toolchain:
    """Bundles the three adapters behind one configured object.

    Backends may be injected as callables (used by tests and by record-mode
    fixtures); otherwise the configured command templates / endpoint run.
    """

    def __init__(
        self,
        settings: ToolSettings | None = None,
        cache: ReplayCache | None = None,
        compile_backend: Callable[[str], CompileOutcome] | None = None,
        verify_backend: Callable[[str, int], VerifyOutcome] | None = None,
        llm_backend: Callable[[LlmRequest], str] | None = None,
    ):
        self.settings = settings or ToolSettings()
        if cache is None and self.settings.mock_dir and self.settings.mock_mode != "off":
            cache = ReplayCache(self.settings.mock_dir, self.settings.mock_mode)
        self.cache = cache
        self._compile_backend = compile_backend
        self._verify_backend = verify_backend
        self._llm_backend = llm_backend

    # -- compiler -----------------------------------------------------------

    def compile_check(self, source: str) -> CompileOutcome:
        if not source:
            raise DomainError("cannot compile empty source")
        req = {"kind": "compile", "source": source}
        key = request_digest(req)
        if self.cache is not None and self.cache.mode == "replay":
            hit = self.cache.get(key)
            if hit is None:
                return CompileOutcome("tool_error", f"replay cache miss: {key}")
            return CompileOutcome(**hit["response"])
        outcome = self._compile_raw(source)
        if self.cache is not None and self.cache.mode == "record":
            self.cache.put(
                key, req, {"status": outcome.status, "stderr_text": outcome.stderr_text}
            )
        return outcome

    def _compile_raw(self, source: str) -> CompileOutcome:
        if self._compile_backend is not None:
            return self._compile_backend(source)
        if not self.settings.compiler_cmd:
            return CompileOutcome("tool_error", "no compiler configured")
        rc, out, err = self._run_tool(self.settings.compiler_cmd, source)
        if rc is None:
            return CompileOutcome("tool_error", err)
        if rc == 0:
            return CompileOutcome("ok", err)
        return CompileOutcome("syntax_error", err or out)

    # -- verifier -----------------------------------------------------------

    def formal_verify(self, source_with_sva: str, depth: int | None = None) -> VerifyOutcome:
        if not re.search(r"\bassert\b", source_with_sva):
            raise DomainError("source contains no assertion")
        depth = depth if depth is not None else self.settings.verifier_depth
        if depth < 1:
            raise DomainError("depth must be positive")
        req = {"kind": "verify", "source": source_with_sva, "depth": depth}
        key = request_digest(req)
        if self.cache is not None and self.cache.mode == "replay":
            hit = self.cache.get(key)
            if hit is None:
                return VerifyOutcome("tool_error", f"replay cache miss: {key}")
            return VerifyOutcome(**hit["response"])
        outcome = self._verify_raw(source_with_sva, depth)
        if self.cache is not None and self.cache.mode == "record":
            self.cache.put(
                key,
                req,
                {
                    "status": outcome.status,
                    "log_text": outcome.log_text,
                    "failing_step": outcome.failing_step,
                },
            )
        return outcome

    def _verify_raw(self, source: str, depth: int) -> VerifyOutcome:
        if self._verify_backend is not None:
            return self._verify_backend(source, depth)
        if not self.settings.verifier_cmd:
            return VerifyOutcome("tool_error", "no verifier configured")
        rc, out, err = self._run_tool(self.settings.verifier_cmd, source, depth=depth)
        if rc is None:
            return VerifyOutcome("tool_error", err)
        return self.classify_verifier_log(out + err, rc)

    def classify_verifier_log(self, log: str, returncode: int = 0) -> VerifyOutcome:
        """Map raw verifier output onto the four statuses via configured regexes."""
        s = self.settings
        if re.search(s.fail_re, log):
            step = None
            m = re.search(s.step_re, log)
            if m:
                step = int(m.group(1))
            return VerifyOutcome("assertion_failed", log, step)
        if re.search(s.pass_re, log):
            return VerifyOutcome("proven", log)
        if re.search(s.unknown_re, log):
            return VerifyOutcome("inconclusive", log)
        return VerifyOutcome("proven" if returncode == 0 else "inconclusive", log)

    # -- LLM ----------------------------------------------------------------

    def llm_call(self, req: LlmRequest) -> LlmReply:
        temperature = (
            req.temperature if req.temperature is not None else self.settings.llm_temperature
        )
        effective = dc_replace(req, temperature=temperature)
        payload = {
            "kind": "llm",
            "task": effective.task,
            "prompt_text": effective.prompt_text,
            "temperature": effective.temperature,
            "nonce": effective.nonce,
        }
        key = request_digest(payload)
        if self.cache is not None and self.cache.mode == "replay":
            hit = self.cache.get(key)
            if hit is None:
                raise EndpointUnreachable(f"replay cache miss: {key}")
            resp = hit["response"]
            return LlmReply(resp["text"], resp.get("attempt_index", 1))
        last_failure: Exception | None = None
        for attempt in range(1, effective.max_attempts + 1):
            try:
                text = self._llm_raw(effective)
            except TransportFailure as exc:
                last_failure = exc
                continue
            reply = LlmReply(text, attempt)
            if self.cache is not None and self.cache.mode == "record":
                self.cache.put(
                    key, payload, {"text": reply.text, "attempt_index": reply.attempt_index}
                )
            return reply
        raise AttemptsExhausted(
            f"{effective.max_attempts} attempts failed for task={effective.task}: {last_failure}"
        )

    def _llm_raw(self, req: LlmRequest) -> str:
        if self._llm_backend is not None:
            return self._llm_backend(req)
        body = {"task": req.task, "prompt": req.prompt_text, "temperature": req.temperature}
        if self.settings.llm_cmd:
            try:
                proc = subprocess.run(
                    shlex.split(self.settings.llm_cmd),
                    input=json.dumps(body),
                    capture_output=True,
                    text=True,
                    timeout=self.settings.timeout_s,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise TransportFailure(str(exc)) from exc
            if proc.returncode != 0:
                raise TransportFailure(f"llm command exited {proc.returncode}: {proc.stderr}")
            return proc.stdout.rstrip("\n")
        if self.settings.llm_url:
            headers = {}
            if self.settings.llm_credential_env:
                cred = os.environ.get(self.settings.llm_credential_env, "")
                if cred:
                    headers["Authorization"] = f"Bearer {cred}"
            try:
                resp = requests.post(
                    self.settings.llm_url,
                    json=body,
                    headers=headers,
                    timeout=self.settings.timeout_s,
                )
            except requests.RequestException as exc:
                raise TransportFailure(str(exc)) from exc
            if resp.status_code >= 400:
                raise TransportFailure(f"endpoint returned {resp.status_code}")
            try:
                return resp.json()["text"]
            except (ValueError, KeyError) as exc:
                raise TransportFailure(f"malformed endpoint reply: {exc}") from exc
        raise EndpointUnreachable("no LLM endpoint configured")

    # -- subprocess plumbing --------------------------------------------------

    def _run_tool(self, template: str, source: str, depth: int | None = None):
        """Run a command template against a scratch copy of ``source``.

        Returns (returncode, stdout, stderr); returncode None means the tool
        could not be spawned or timed out.
        """
        scratch = tempfile.mkdtemp(prefix="assertforge-", dir=self.settings.scratch_dir)
        try:
            src_path = Path(scratch) / "input.sv"
            src_path.write_text(source, encoding="utf-8")
            args = []
            for arg in shlex.split(template):
                arg = arg.replace("{file}", str(src_path))
                if depth is not None:
                    arg = arg.replace("{depth}", str(depth))
                args.append(arg)
            try:
                proc = subprocess.run(
                    args,
                    capture_output=True,
                    text=True,
                    timeout=self.settings.timeout_s,
                    cwd=scratch,
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                return None, "", f"tool spawn failed: {exc}"
            return proc.returncode, proc.stdout, proc.stderr
        finally:
            if not self.settings.keep_temp:
                shutil.rmtree(scratch, ignore_errors=True)
