"""Strategists: everything that turns an iteration context into an action plan."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

from ..lut import LutSet
from ..specs import SpecSet
from .draft import Draft, restate_patches, seed_plan
from .gmid import GmidConfig, gm7_for_pm, gmid_step, required_tt
from .llm import (
    AuthenticationError,
    EmptyCompletionError,
    EndpointConfig,
    LlmError,
    TransportError,
    llm_step,
    load_endpoint,
)
from .plan import (
    DEFAULT_BOUNDS,
    RESPONSE_FORMAT,
    ActionPlan,
    Bounds,
    BoundsViolationError,
    MissingActionBlockError,
    PlanError,
    UnparseableAssignmentError,
    parse_action_lines,
    parse_response,
    render_plan,
)
from .prompts import (
    CIRCUIT_BRIEF,
    HEURISTICS,
    HISTORY_WINDOW,
    IterationContext,
    StaticKnowledge,
    Unmet,
    build_initial_prompt,
    build_iteration_prompt,
    build_static_knowledge,
    lut_digest,
    spec_table,
)
from .replay import load_script, parse_script, render_script, replay_step
from .rules import RuleConfig, rule_based_step


@dataclass
class Proposal:
    plan: ActionPlan
    prompt: str | None = None
    reply: str | None = None
    exchanges: list[dict] = field(default_factory=list)


class Strategist(Protocol):
    name: str

    def propose(self, ctx: IterationContext) -> Proposal: ...


class RulesStrategist:
    name = "rules"

    def __init__(self, config: RuleConfig = RuleConfig()):
        self.config = config

    def propose(self, ctx: IterationContext) -> Proposal:
        if not ctx.has_results:
            return Proposal(seed_plan(ctx.params))
        return Proposal(rule_based_step(ctx, self.config))


class GmidStrategist:
    name = "gmid"

    def __init__(self, luts: LutSet, config: GmidConfig = GmidConfig()):
        self.luts = luts
        self.config = config

    def propose(self, ctx: IterationContext) -> Proposal:
        if not ctx.has_results:
            return Proposal(seed_plan(ctx.params))
        return Proposal(gmid_step(ctx, self.luts, self.config))


class ReplayStrategist:
    name = "replay"

    def __init__(self, script):
        self.script = list(script)

    def propose(self, ctx: IterationContext) -> Proposal:
        return Proposal(replay_step(self.script, ctx.iteration))


class LlmStrategist:
    """Chat-model strategist; ``include_lut=False`` is the no-gm/Id ablation."""

    def __init__(
        self,
        endpoint: EndpointConfig,
        static: StaticKnowledge,
        specs: SpecSet,
        include_lut: bool = True,
        bounds: Bounds = DEFAULT_BOUNDS,
        client=None,
    ):
        self.endpoint = endpoint
        self.static = static
        self.specs = specs
        self.include_lut = include_lut
        self.bounds = bounds
        self.client = client
        self.name = "llm" if include_lut else "llm_no_gmid"

    def prompt_for(self, ctx: IterationContext) -> str:
        if not ctx.has_results:
            return build_initial_prompt(self.static, self.specs, self.include_lut)
        return build_iteration_prompt(self.static, ctx, self.include_lut)

    def propose(self, ctx: IterationContext) -> Proposal:
        prompt = self.prompt_for(ctx)
        exchanges: list[dict] = []
        reply = llm_step(self.endpoint, prompt, client=self.client, record=exchanges.append)
        try:
            plan = parse_response(reply, self.bounds)
        except PlanError as exc:
            exc.prompt, exc.reply = prompt, reply
            raise
        return Proposal(plan, prompt, reply, exchanges)

__all__ = [
    "ActionPlan",
    "AuthenticationError",
    "Bounds",
    "BoundsViolationError",
    "CIRCUIT_BRIEF",
    "DEFAULT_BOUNDS",
    "Draft",
    "EmptyCompletionError",
    "EndpointConfig",
    "GmidConfig",
    "GmidStrategist",
    "HEURISTICS",
    "HISTORY_WINDOW",
    "IterationContext",
    "LlmError",
    "LlmStrategist",
    "LutSet",
    "MissingActionBlockError",
    "PlanError",
    "Proposal",
    "RESPONSE_FORMAT",
    "ReplayStrategist",
    "RuleConfig",
    "RulesStrategist",
    "SpecSet",
    "StaticKnowledge",
    "Strategist",
    "TransportError",
    "Unmet",
    "UnparseableAssignmentError",
    "build_initial_prompt",
    "build_iteration_prompt",
    "build_static_knowledge",
    "gm7_for_pm",
    "gmid_step",
    "llm_step",
    "load_endpoint",
    "load_script",
    "lut_digest",
    "parse_action_lines",
    "parse_response",
    "parse_script",
    "render_plan",
    "render_script",
    "replay_step",
    "required_tt",
    "restate_patches",
    "rule_based_step",
    "seed_plan",
    "spec_table",
]
