"""Prompt assembly, provider access and the self-check loop for key states.

A provider is either an OpenAI-compatible chat endpoint reached over HTTP
or a scripted fixture file ``{"responses": [text, ...]}`` consumed in
order.  Fixtures make every code path, including multi-turn repair
sessions, runnable offline.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dsl import DiscriminatorSet, DiscriminatorSpec, ValidationEntry, ValidationReport, validate_set

log = logging.getLogger(__name__)

DEFAULT_MAX_RETRIES = 5


class LlmBridgeError(Exception):
    pass


class NetworkError(LlmBridgeError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class FixtureExhausted(LlmBridgeError):
    pass


class MalformedProviderReply(LlmBridgeError):
    pass


class JsonParseError(LlmBridgeError, ValueError):
    pass


class SchemaError(LlmBridgeError, ValueError):
    pass


class SelfCheckExhausted(LlmBridgeError):
    def __init__(self, report: ValidationReport, calls: int):
        super().__init__(f"discriminators still invalid after {calls} provider calls")
        self.report = report
        self.calls = calls


# ---------------------------------------------------------------------------
# Prompt texts

ROLE_INSTRUCTION = """\
You are helping agents explore efficiently. Identify the intermediate states \
the agents must pass through on the way to completing the task, and write a \
discriminator for each one that tells whether a given state has reached it.

Rules:
  1. Use only information stated in the task; do not guess hidden quantities.
  2. Keep every discriminator general rather than tied to one trajectory.
  3. Each discriminator must stand on its own without calling the others.
  4. Keep consecutive key states close together so each is reachable from the last.
  5. Write discriminators as boolean expressions over the state list s, not as code. \
Allowed: s[i] with an integer literal i, numbers, + - * / and parentheses, \
comparisons < <= > >= == !=, and the connectives and, or, not.

Reason about the task first, then answer with a single JSON object shaped like this:
{
  "Thought": "<your reasoning about the task and the concrete state>",
  "Key_states": {
    "init": "<the starting situation>",
    "key_state_1": "<short description>",
    "key_state_2": "<short description>",
    "success": "<the goal situation>"
  },
  "Discriminators": {
    "key_state_1": "<expression over s>",
    "key_state_2": "<expression over s>"
  },
  "Subspace_states": {
    "key_state_1": [<every index i that appears as s[i] in its expression>],
    "key_state_2": [<indices>]
  }
}
init and success get descriptions only, no discriminator."""

RETHINK_PROMPT = """\
Review your previous answer against the task and the rules above. Remove \
anything the task does not need, make sure every expression uses only the \
allowed syntax and valid state indices, and check that each subspace list \
matches the indices its expression reads. Reply with the corrected JSON object."""

REPAIR_PREFIX = "Some discriminators failed verification on real states:"
REPAIR_SUFFIX = "Fix these problems and reply with the complete corrected JSON object."

COUNT_REQUEST = "Give {count} key states with a discriminator for each."

_GRID_NOTE = "Coordinates are integer grid cells; (0,0) is the top-left corner and y grows downward."

TASK_TEXTS: dict[str, tuple[str, str]] = {
    "pass": (
        "Two agents share a 30x30 grid split in half by a vertical wall at x=15. "
        "The only gap in the wall is a door cell at (15,15), and it cannot be opened directly. "
        "Each half contains a hidden switch whose coordinates are unknown and differ from the door's; "
        "the door stays open only while some agent stands on a switch. "
        "Both agents start in the left half (x<15). "
        "The task succeeds once both agents are in the right half (x>15). " + _GRID_NOTE,
        "At every step the state is the list (agent0.x, agent0.y, agent1.x, agent1.y, door.open), "
        "where door.open is 1 when the door is open and 0 otherwise.",
    ),
    "large_pass": (
        "Two agents share a 50x50 grid split in half by a vertical wall at x=25. "
        "The only gap in the wall is a door cell at (25,25), and it cannot be opened directly. "
        "Each half contains a hidden switch whose coordinates are unknown and differ from the door's; "
        "the door stays open only while some agent stands on a switch. "
        "Both agents start in the left half (x<25). "
        "The task succeeds once both agents are in the right half (x>25). " + _GRID_NOTE,
        "At every step the state is the list (agent0.x, agent0.y, agent1.x, agent1.y, door.open), "
        "where door.open is 1 when the door is open and 0 otherwise.",
    ),
    "secret_room": (
        "Two agents are in a 25x25 grid. A vertical wall at x=12 separates a large left room from three "
        "small rooms on the right: room 1 (y<8), room 2 (8<y<17) and room 3 (y>17), divided by walls at "
        "y=8 and y=17. The wall has one door per right room, at (12,4), (12,12) and (12,20). "
        "Every room has a hidden switch with unknown coordinates. The switch in the left room opens all "
        "three doors while an agent stands on it; the switch inside a right room opens only that room's door. "
        "Both agents start in the left room (x<12). The task succeeds once both agents are inside room 2. "
        + _GRID_NOTE,
        "At every step the state is the list (agent0.x, agent0.y, agent1.x, agent1.y, door.open), "
        "where door.open is 1 when any door is open and 0 otherwise.",
    ),
    "push_box": (
        "Two agents and a box are in a 15x15 grid (cells 0 to 14 on each axis). The box starts at (7,7), "
        "agent0 at (7,6) just above it and agent1 at (7,8) just below it. The box only moves when both "
        "agents stand next to it on the same side and step toward it together; it then slides one cell "
        "and the agents follow. The task succeeds once the box touches the outer edge of the grid "
        "(x or y equal to 0 or 14). " + _GRID_NOTE,
        "At every step the state is the list (agent0.x, agent0.y, agent1.x, agent1.y, box.x, box.y).",
    ),
    "river": (
        "Alice and Bob are in a 30x30 field crossed by two rivers: a vertical one covering x=14 and x=15 "
        "and a horizontal one covering y=14 and y=15. A mountain fills the bottom-left block "
        "(x from 0 to 7, y from 22 to 29) and cannot be entered. Both start somewhere in the top-left part "
        "(x<14 and y<14). Alice is afraid of water: she can step into a river cell only while Bob is "
        "standing in the river, acting as her bridge. Bob can walk through water freely. "
        "The task succeeds once both of them reach the bottom-right part (x>21 and y>21). " + _GRID_NOTE,
        "At every step the state is the list (alice.x, alice.y, bob.x, bob.y).",
    ),
}


@dataclass(frozen=True)
class PromptBundle:
    task_description: str
    state_form: str
    role_instruction: str = ROLE_INSTRUCTION
    map_config: str | None = None
    rethink_prompt: str = RETHINK_PROMPT

    @classmethod
    def for_task(cls, task: str, map_config: str | None = None) -> "PromptBundle":
        try:
            desc, form = TASK_TEXTS[task]
        except KeyError:
            raise KeyError(f"no task text for {task!r}; known: {sorted(TASK_TEXTS)}") from None
        return cls(desc, form, map_config=map_config)


def assemble_prompt(bundle: PromptBundle, task_config: str | None = None, count: str = "several") -> list[dict]:
    """Two-message conversation: instructions plus task text, then the request."""
    system = "\n\n".join([
        bundle.role_instruction,
        "Task description:\n" + bundle.task_description,
        "State form:\n" + bundle.state_form,
    ])
    config = task_config if task_config else bundle.map_config
    parts = []
    if config:
        parts.append("Task configuration:\n" + config)
    parts.append(COUNT_REQUEST.format(count=count))
    return [{"role": "system", "content": system}, {"role": "user", "content": "\n\n".join(parts)}]


# ---------------------------------------------------------------------------
# Providers


@dataclass
class ProviderConfig:
    kind: str = "fixture"
    endpoint_url: str | None = None
    model_name: str = ""
    temperature: float = 0.0
    api_key_env_var: str = "LEMAE_API_KEY"
    fixture_path: str | None = None
    max_selfcheck_retries: int = DEFAULT_MAX_RETRIES
    timeout: float = 120.0

    def validate(self) -> None:
        if self.kind not in ("http", "fixture"):
            raise ValueError(f"provider kind must be 'http' or 'fixture', got {self.kind!r}")
        if self.kind == "http" and (not self.endpoint_url or self.fixture_path):
            raise ValueError("http provider needs endpoint_url and no fixture_path")
        if self.kind == "fixture" and (not self.fixture_path or self.endpoint_url):
            raise ValueError("fixture provider needs fixture_path and no endpoint_url")
        if self.max_selfcheck_retries < 1:
            raise ValueError("max_selfcheck_retries must be a positive integer")

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown provider keys: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg


class FixtureProvider:
    """Replays scripted replies in order; one instance is one session."""

    def __init__(self, path, max_selfcheck_retries: int = DEFAULT_MAX_RETRIES):
        self.path = Path(path)
        data = json.loads(self.path.read_text())
        responses = data.get("responses") if isinstance(data, dict) else None
        if not isinstance(responses, list) or not all(isinstance(r, str) for r in responses):
            raise MalformedProviderReply(f"{self.path}: expected {{'responses': [text, ...]}}")
        self.responses = responses
        self.max_selfcheck_retries = max_selfcheck_retries
        self.calls = 0
        self.transcripts: list[list[dict]] = []

    def complete(self, messages: list[dict]) -> str:
        if self.calls >= len(self.responses):
            raise FixtureExhausted(f"{self.path}: all {len(self.responses)} responses used")
        self.transcripts.append([dict(m) for m in messages])
        text = self.responses[self.calls]
        self.calls += 1
        return text


class HttpProvider:
    """OpenAI-compatible chat completion endpoint."""

    def __init__(self, cfg: ProviderConfig, session=None):
        import requests

        self.cfg = cfg
        self.max_selfcheck_retries = cfg.max_selfcheck_retries
        self.session = session or requests.Session()
        self._exc = requests.RequestException
        self.calls = 0

    def complete(self, messages: list[dict]) -> str:
        key = os.environ.get(self.cfg.api_key_env_var)
        if not key:
            raise NetworkError(f"environment variable {self.cfg.api_key_env_var} is not set")
        body = {"model": self.cfg.model_name, "messages": messages, "temperature": self.cfg.temperature}
        self.calls += 1
        try:
            resp = self.session.post(self.cfg.endpoint_url, json=body, timeout=self.cfg.timeout,
                                     headers={"Authorization": f"Bearer {key}"})
        except self._exc as exc:
            raise NetworkError(f"request failed: {exc}") from exc
        if resp.status_code != 200:
            raise NetworkError(f"endpoint returned HTTP {resp.status_code}", status=resp.status_code)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedProviderReply(f"unexpected reply shape: {exc!r}") from exc
        if not isinstance(content, str):
            raise MalformedProviderReply("message content is not text")
        return content


def open_provider(cfg: ProviderConfig):
    cfg.validate()
    if cfg.kind == "fixture":
        return FixtureProvider(cfg.fixture_path, cfg.max_selfcheck_retries)
    return HttpProvider(cfg)


def request(provider, messages: list[dict]) -> str:
    """Send one conversation; a bare config opens a fresh session first."""
    if isinstance(provider, ProviderConfig):
        provider = open_provider(provider)
    return provider.complete(messages)


# ---------------------------------------------------------------------------
# Response parsing


@dataclass
class LlmResponse:
    thought: str
    key_states: dict
    discriminators: dict
    subspace_states: dict = field(default_factory=dict)

    def to_discriminator_set(self) -> DiscriminatorSet:
        specs = tuple(
            DiscriminatorSpec(sym, str(self.key_states.get(sym, "")), src, tuple(self.subspace_states[sym]))
            for sym, src in self.discriminators.items()
        )
        return DiscriminatorSet(specs, init=str(self.key_states["init"]),
                                success=str(self.key_states["success"]))


def _outer_object(raw: str) -> str:
    start = raw.find("{")
    if start < 0:
        raise JsonParseError("no JSON object in response")
    depth = 0
    in_str = escape = False
    for i in range(start, len(raw)):
        ch = raw[i]
        if in_str:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return raw[start:i + 1]
    raise JsonParseError("unbalanced braces in response")


def _norm(key: str) -> str:
    return key.strip().lower().replace(" ", "_")


def parse_response(raw: str) -> LlmResponse:
    if not isinstance(raw, str):
        raise JsonParseError("response is not text")
    text = _outer_object(raw)
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise JsonParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("top level is not an object")
    fields = {_norm(k): v for k, v in data.items()}
    for name in ("key_states", "discriminators", "subspace_states"):
        if name not in fields:
            raise SchemaError(f"missing field {name!r}")
        if not isinstance(fields[name], dict):
            raise SchemaError(f"field {name!r} must be an object")
    key_states = {str(k): v for k, v in fields["key_states"].items()}
    discs = fields["discriminators"]
    subs = fields["subspace_states"]
    for reserved in ("init", "success"):
        if reserved not in key_states:
            raise SchemaError(f"key_states lacks {reserved!r}")
        if reserved in discs or reserved in subs:
            raise SchemaError(f"{reserved!r} must not carry a discriminator")
    if set(discs) != set(subs):
        raise SchemaError(f"discriminators and subspace_states differ: {sorted(set(discs) ^ set(subs))}")
    missing = [k for k in discs if k not in key_states]
    if missing:
        raise SchemaError(f"symbols without a key_states description: {missing}")
    for sym, src in discs.items():
        if not isinstance(src, str):
            raise SchemaError(f"discriminator {sym!r} is not text")
        idx = subs[sym]
        if not isinstance(idx, list) or not all(isinstance(i, int) and not isinstance(i, bool) for i in idx):
            raise SchemaError(f"subspace of {sym!r} must be a list of integers")
    return LlmResponse(str(fields.get("thought", "")), key_states, dict(discs), {k: list(subs[k]) for k in discs})


# ---------------------------------------------------------------------------
# Self-check


def _check(raw: str, probes) -> tuple[DiscriminatorSet | None, ValidationReport]:
    try:
        dset = parse_response(raw).to_discriminator_set()
    except (JsonParseError, SchemaError) as exc:
        return None, ValidationReport([ValidationEntry("<response>", parse_ok=False, errors=[str(exc)])])
    report = validate_set(dset, probes)
    return (dset if report.passed else None), report


def obtain_discriminators(
    provider,
    bundle: PromptBundle,
    task_config: str | None,
    probes: Sequence[Sequence],
    max_retries: int | None = None,
    report_sink: list | None = None,
) -> DiscriminatorSet:
    """Initial answer, one rethink turn, then verify and repair.

    At most ``2 + max_retries`` provider calls are made.  The last report
    is appended to ``report_sink`` when one is given.
    """
    if not probes:
        raise ValueError("obtain_discriminators needs at least one probe state")
    if isinstance(provider, ProviderConfig):
        provider = open_provider(provider)
    if max_retries is None:
        max_retries = getattr(provider, "max_selfcheck_retries", DEFAULT_MAX_RETRIES)
    messages = assemble_prompt(bundle, task_config)
    first = provider.complete(messages)
    messages += [{"role": "assistant", "content": first}, {"role": "user", "content": bundle.rethink_prompt}]
    answer = provider.complete(messages)
    calls, retries = 2, 0
    while True:
        dset, report = _check(answer, probes)
        if report_sink is not None:
            report_sink.append(report)
        if dset is not None:
            log.info("discriminators verified after %d provider calls", calls)
            return dset
        if retries >= max_retries:
            raise SelfCheckExhausted(report, calls)
        feedback = f"{REPAIR_PREFIX}\n{report.format()}\n{REPAIR_SUFFIX}"
        messages += [{"role": "assistant", "content": answer}, {"role": "user", "content": feedback}]
        answer = provider.complete(messages)
        calls += 1
        retries += 1
