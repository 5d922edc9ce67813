"""Think-Act-Observe agent loop over live tools, with trace classification.

One action executes per turn; tool failures come back as observations, not
episode failures. The loop stops at a Final Answer or when the fixed turn
budget (10) runs out. A scripted client stands in for a model endpoint so
the whole harness runs without any live LLM.
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import httpx

from .evaluation import normalize_answer, normalized_equal, _decode_json, _decode_literal
from .runtime import LabelEnv, ToolError, ToolResult, run_initialization

DEFAULT_BUDGET = 10
DEFAULT_OBSERVATION_LIMIT = 4096

_FINAL_ANSWER_RE = re.compile(r"Final Answer:\s*(.*)", re.DOTALL)
_ACTION_RE = re.compile(r"Action:\s*(.+)")
_ACTION_INPUT_RE = re.compile(r"Action Input:\s*(\{.*?\})(?=\s*(?:Thought:|Action:|Observation:|Final Answer:|$))",
                              re.DOTALL)
_THOUGHT_RE = re.compile(r"Thought:\s*(.*?)(?=\s*(?:Action:|Final Answer:|$))", re.DOTALL)


def load_prompt_template() -> str:
    return resources.files("sql2tool").joinpath("data/react_prompt.txt").read_text(encoding="utf-8")


def render_prompt(template: str, tools_block: str, tool_names: list[str],
                  question: str, previous_runs: str = "", scratchpad: str = "") -> str:
    # plain replacement, not str.format: the template body contains JSON braces
    return (template
            .replace("{tools}", tools_block)
            .replace("{tool_names}", ", ".join(tool_names))
            .replace("{input}", question)
            .replace("{previousruns}", previous_runs)
            .replace("{agent_scratchpad}", scratchpad))


@dataclass
class Turn:
    thought: str
    action: str | None
    action_input: dict | None
    observation: str


@dataclass
class Episode:
    sample_id: object
    turns: list[Turn] = field(default_factory=list)
    budget: int = DEFAULT_BUDGET
    final_answer: str | None = None
    outcome: str = "oob"  # completed, oob, stuck or error
    error: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "budget": self.budget,
            "outcome": self.outcome,
            "final_answer": self.final_answer,
            "error": self.error,
            "turns": [
                {"thought": t.thought, "action": t.action,
                 "action_input": t.action_input, "observation": t.observation}
                for t in self.turns
            ],
        }


@dataclass
class ParsedTurn:
    kind: str  # action, final or malformed
    thought: str = ""
    action: str | None = None
    action_input: dict | None = None
    final_answer: str | None = None
    correction: str | None = None
    extra_actions: int = 0


def parse_action(model_text: str) -> ParsedTurn:
    """Extract the first Thought/Action/Action Input triple or the Final Answer.

    Malformed turns yield a corrective observation instead of raising; the
    caller charges them against the budget.
    """
    text = model_text or ""
    if text.lstrip().startswith("Observation:"):
        return ParsedTurn(
            kind="malformed",
            correction="Your response should never start with 'Observation:'; "
                       "that is provided to you. Continue with a Thought and an Action.",
        )
    action_match = _ACTION_RE.search(text)
    final_match = _FINAL_ANSWER_RE.search(text)
    if final_match and (not action_match or final_match.start() < action_match.start()):
        answer = final_match.group(1).strip()
        thought_match = _THOUGHT_RE.search(text)
        return ParsedTurn(kind="final", final_answer=answer,
                          thought=thought_match.group(1).strip() if thought_match else "")
    if not action_match:
        return ParsedTurn(
            kind="malformed",
            correction="Could not find an 'Action:' line. Use the Thought / Action / "
                       "Action Input format.",
        )
    action = action_match.group(1).strip()
    thought_match = _THOUGHT_RE.search(text)
    thought = thought_match.group(1).strip() if thought_match else ""
    input_match = _ACTION_INPUT_RE.search(text)
    if input_match is None:
        # zero-argument calls may legitimately pass an empty input
        if re.search(r"Action Input:\s*$", text) or "Action Input:" not in text:
            action_input: dict | None = {}
        else:
            action_input = None
    else:
        payload = _decode_json(input_match.group(1)) or _decode_literal(input_match.group(1))
        action_input = payload if isinstance(payload, dict) else None
    if action_input is None:
        return ParsedTurn(
            kind="malformed", thought=thought, action=action,
            correction="Could not parse the Action Input as a JSON object. "
                       "Provide the parameters as a json string.",
        )
    extra = len(_ACTION_RE.findall(text)) - 1
    return ParsedTurn(kind="action", thought=thought, action=action,
                      action_input=action_input, extra_actions=max(extra, 0))


def _truncate(text: str, limit: int) -> str:
    raw = text.encode("utf-8")
    if len(raw) <= limit:
        return text
    return raw[:limit].decode("utf-8", errors="ignore") + " ...[truncated]"


def _observation_for(result) -> str:
    payload = result.payload
    if hasattr(payload, "path"):
        return str(payload.path)
    return json.dumps(payload, ensure_ascii=False, default=str)


def run_episode(instance: dict, pool, client, budget: int = DEFAULT_BUDGET,
                workdir: Path | None = None, db_root: Path | None = None,
                observation_limit: int = DEFAULT_OBSERVATION_LIMIT,
                template: str | None = None) -> Episode:
    """Drive the TAO loop for one instance until Final Answer or budget."""
    episode = Episode(sample_id=instance.get("sample_id"), budget=budget)
    env = LabelEnv(workdir=Path(workdir) if workdir else Path("."),
                   database_root=Path(db_root) if db_root else None)
    try:
        if instance.get("initialization_step"):
            run_initialization(instance["initialization_step"], env)
    except ToolError as exc:
        episode.outcome = "error"
        episode.error = f"initialization failed: {exc}"
        return episode

    template = template if template is not None else load_prompt_template()
    tools_block = json.dumps(list(pool.tools.values()), ensure_ascii=False, indent=2)
    scratchpad = ""
    auto_label = 0

    for _ in range(budget):
        prompt = render_prompt(template, tools_block, list(pool.tools),
                               instance.get("input", ""), "", scratchpad)
        try:
            text = client.complete(prompt)
        except Exception as exc:  # transport failure ends the episode
            episode.outcome = "error"
            episode.error = str(exc)
            return episode

        parsed = parse_action(text)
        if parsed.kind == "final":
            episode.final_answer = parsed.final_answer
            episode.outcome = "completed"
            episode.turns.append(Turn(parsed.thought, None, None, ""))
            return episode
        if parsed.kind == "malformed":
            observation = parsed.correction
            episode.turns.append(Turn(parsed.thought, parsed.action, None, observation))
        else:
            try:
                result = pool.execute(parsed.action, dict(parsed.action_input), env)
                auto_label += 1
                label = f"STEP_{auto_label}"
                env.bind(label, result.payload)
                observation = _observation_for(result)
                if hasattr(result.payload, "path"):
                    observation = (f"Saved result to {label}; reference it as "
                                   f"${label}$ in later calls.")
            except ToolError as exc:
                observation = f"Error: {exc}"
            if parsed.extra_actions:
                observation += (f" Warning: {parsed.extra_actions} additional action(s) "
                                f"were ignored; perform a SINGLE action at a time.")
            observation = _truncate(observation, observation_limit)
            episode.turns.append(Turn(parsed.thought, parsed.action,
                                      parsed.action_input, observation))
        scratchpad += (f" {parsed.thought}\nAction: {parsed.action or ''}\n"
                       f"Action Input: {json.dumps(parsed.action_input) if parsed.action_input is not None else ''}\n"
                       f"Observation: {episode.turns[-1].observation}\nThought:")

    episode.outcome = "stuck" if _has_trailing_repeat(episode) else "oob"
    return episode


def _has_trailing_repeat(episode: Episode) -> bool:
    if len(episode.turns) < 2:
        return False
    last, prev = episode.turns[-1], episode.turns[-2]
    return last.action is not None and (last.action, _frozen(last.action_input)) == \
        (prev.action, _frozen(prev.action_input))


def _frozen(value: object) -> object:
    if isinstance(value, dict):
        return tuple(sorted((k, _frozen(v)) for k, v in value.items()))
    if isinstance(value, list):
        return tuple(_frozen(v) for v in value)
    return value


def episode_completed(episode: Episode, instance: dict) -> bool:
    """An episode completes when its final answer matches the gold answer."""
    if episode.final_answer is None:
        return False
    answer: object = episode.final_answer
    decoded = _decode_json(answer) or _decode_literal(answer)
    if decoded is not None:
        answer = decoded
    return normalized_equal(normalize_answer(answer),
                            normalize_answer(instance["gold_answer"]))


@dataclass
class TraceFlags:
    turns: int
    oob: bool
    stuck: bool
    unclassified: bool


def classify_trace(episode: Episode, completed: bool) -> TraceFlags:
    """OOB and stuck flags per the agent error taxonomy; they may co-occur."""
    stuck = False
    if not completed:
        for previous, current in zip(episode.turns, episode.turns[1:]):
            if current.action is None:
                continue
            if (current.action, _frozen(current.action_input)) == \
                    (previous.action, _frozen(previous.action_input)):
                stuck = True
                break
    oob = (not completed and episode.final_answer is None
           and len(episode.turns) >= episode.budget)
    unclassified = not completed and not oob and not stuck
    return TraceFlags(turns=len(episode.turns), oob=oob, stuck=stuck,
                      unclassified=unclassified)


# --- model clients ---

@dataclass
class ModelClientConfig:
    endpoint: str
    model: str
    timeout: float = 60.0
    retries: int = 2
    auth_env_var: str | None = None


class HttpChatClient:
    """Minimal chat-completions client; the auth token is read from the
    environment at request time and never stored on the instance."""

    def __init__(self, config: ModelClientConfig):
        self.config = config

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.config.auth_env_var:
            token = os.environ.get(self.config.auth_env_var, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
        }
        last_error: Exception | None = None
        for attempt in range(self.config.retries + 1):
            try:
                response = httpx.post(self.config.endpoint, json=body, headers=headers,
                                      timeout=self.config.timeout)
                response.raise_for_status()
                data = response.json()
                return data["choices"][0]["message"]["content"]
            except Exception as exc:
                last_error = exc
                if attempt < self.config.retries:
                    time.sleep(min(2 ** attempt, 10))
        raise RuntimeError(f"model endpoint failed after retries: {last_error}")


class ScriptedClient:
    """Deterministic stand-in for a model endpoint: replays canned responses."""

    def __init__(self, responses: list[str]):
        self.responses = list(responses)
        self.cursor = 0

    def complete(self, prompt: str) -> str:
        if self.cursor < len(self.responses):
            text = self.responses[self.cursor]
            self.cursor += 1
            return text
        return self.responses[-1] if self.responses else ""


def gold_replay_responses(instance: dict) -> list[str]:
    """Scripted responses that replay the gold sequence then answer.

    Gold labels are rewritten to the STEP_k labels the episode loop binds,
    since agent turns carry no label field of their own.
    """
    responses = []
    calls = instance["output"]
    label_map = {
        call["label"]: f"STEP_{index + 1}"
        for index, call in enumerate(calls) if call.get("label")
    }

    def rewrite(value: object) -> object:
        if isinstance(value, str):
            match = _LABEL_IN_VALUE_RE.match(value)
            if match and match.group(1) in label_map:
                return f"${label_map[match.group(1)]}$"
        return value

    for call in calls:
        arguments = {key: rewrite(val) for key, val in (call.get("arguments") or {}).items()}
        text = (f"Thought: I will call {call['name']} next.\n"
                f"Action: {call['name']}\n"
                f"Action Input: {json.dumps(arguments, ensure_ascii=False)}")
        responses.append(text)
    answer = json.dumps(instance.get("gold_answer"), ensure_ascii=False)
    responses.append(f"Thought: I now know the final answer\nFinal Answer: {answer}")
    return responses


_LABEL_IN_VALUE_RE = re.compile(r"^\$([^$]+)\$$")


class HttpRestPool:
    """Endpoint pool that executes over live HTTP against a running service."""

    def __init__(self, pool, base_url: str, timeout: float = 30.0):
        self.tools = pool.tools
        self.endpoints = pool.endpoints
        self.formulation = "REST"
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self._fallback = pool

    def content_hash(self) -> str:
        return self._fallback.content_hash()

    def execute(self, name: str, arguments: dict, env, label=None):
        endpoint = self.endpoints.get(name)
        if endpoint is None:
            raise ToolError("ToolNotInPool", f"{name!r} is not in the REST pool")
        response = httpx.get(self.base_url + endpoint["path"], params=arguments,
                             timeout=self.timeout)
        if response.status_code != 200:
            raise ToolError("ExecutionError",
                            f"HTTP {response.status_code}: {response.text[:200]}")
        return ToolResult("values", response.json())
