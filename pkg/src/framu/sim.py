"""Round loop tying agents, server, privacy and metrics together.

Within a round the order is fixed: local training, privacy perturbation,
aggregation, global feature unlearning, evaluation, broadcast, local
unlearning, beta fine-tune, lambda modality mix.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Any, Sequence

import numpy as np

from .agent import ForgetPolicy, LocalAgent, UpdateReport, fine_tune, local_unlearn, run_local_round
from .config import SimConfig, get_value, set_value
from .core import DomainError, NumericError, ParamVector, weighted_sum
from .env import Environment
from .metrics import LinearQModel, UnlearningReport, combine_reports, evaluate, unlearning_event
from .privacy import perturb
from .server import GlobalState, check_convergence, server_round

logger = logging.getLogger(__name__)

_TAG_AGENT = 5
_TAG_PRIVACY = 7
_TAG_RETAIN = 8


@dataclass(frozen=True)
class AgentRoundStats:
    n_ag: int
    mean_attention: float
    reward: float


@dataclass(frozen=True)
class RoundLog:
    round: int
    global_mse: float
    global_mae: float
    perf: float
    unlearned_count: int
    agents: tuple[AgentRoundStats, ...]
    converged: bool


@dataclass(frozen=True)
class HolderRecord:
    """One agent's side of an unlearning step."""

    agent_id: int
    before: ParamVector
    after: ParamVector
    forget_ids: tuple[int, ...]
    retain_ids: tuple[int, ...]


@dataclass(frozen=True)
class UnlearningEvent:
    """Models and point sets around one unlearning step, kept for audit."""

    round: int
    global_before: ParamVector
    global_after: ParamVector
    gate: float
    holders: tuple[HolderRecord, ...]
    report: UnlearningReport

    @property
    def forget_ids(self) -> tuple[int, ...]:
        return tuple(sorted(i for h in self.holders for i in h.forget_ids))


class SimulationError(RuntimeError):
    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index}: {cause}")
        self.round = round_index


def multimodal_mix(local: ParamVector, global_model: ParamVector, lambda_: float, modality_mask) -> ParamVector:
    """Blend ``lambda * global + (1 - lambda) * local`` on masked feature columns only."""
    if not 0.0 <= lambda_ <= 1.0:
        raise DomainError("lambda must lie in [0, 1]")
    mask = np.asarray(modality_mask, dtype=bool)
    out = local.copy_matrix()
    g = global_model.matrix
    out[:, mask] = lambda_ * g[:, mask] + (1.0 - lambda_) * out[:, mask]
    return ParamVector.from_matrix(out)


def agent_seed(cfg: SimConfig, env: Environment, agent_id: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([cfg.seed, _TAG_AGENT, env.data_agent(agent_id)])


class Simulation:
    """Stateful driver; ``step`` runs one communication round."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.env = Environment(cfg.env_spec())
        spec = self.env.spec
        self.agents = [self._make_agent(k) for k in range(spec.n_agents)]
        self.state = GlobalState(
            params=ParamVector.zeros(spec.n_actions, spec.n_features),
            eps_converge=cfg.server.eps_converge,
            theta_unlearn=cfg.server.theta,
        )
        self.privacy_rngs = [
            np.random.default_rng([cfg.seed, _TAG_PRIVACY, k]) for k in range(spec.n_agents)
        ]
        self.retain_rng = np.random.default_rng([cfg.seed, _TAG_RETAIN])
        self.policy = ForgetPolicy(
            outdated=cfg.forget.outdated,
            private=cfg.forget.private,
            outdated_threshold=cfg.attention.outdated_threshold,
            private_after=cfg.forget.private_after,
        )
        self.logs: list[RoundLog] = []
        self.events: list[UnlearningEvent] = []
        self.snapshots: list = []
        self.round = 0
        self.converged = False

    def _make_agent(self, k: int) -> LocalAgent:
        c = self.cfg
        return LocalAgent(
            k,
            self.env.spec.n_actions,
            self.env.spec.n_features,
            lr=c.agent.lr,
            gamma=c.agent.gamma,
            epsilon_greedy=c.agent.epsilon_greedy,
            epsilon_decay=c.agent.epsilon_decay,
            epsilon_floor=c.agent.epsilon_floor,
            eta=c.attention.eta,
            rho=c.attention.rho,
            a_max=c.attention.a_max,
            seed=agent_seed(c, self.env, k),
            local_unlearning=c.agent.local_unlearning,
            local_delta=c.attention.local_delta,
            modality_mask=self.env.modality_mask(k),
        )

    @property
    def done(self) -> bool:
        return self.converged or self.round >= self.cfg.T_max

    def global_model(self) -> LinearQModel:
        return LinearQModel(self.state.params, self.state.gate)

    def _fleet_params(self) -> ParamVector:
        live = [a for a in self.agents if a.n_ag > 0]
        if not live:
            return self.state.params
        return weighted_sum([a.param_vector() for a in live], [a.n_ag for a in live])

    def _privatize(self, report: UpdateReport) -> UpdateReport:
        noisy = perturb(report.delta, self.cfg.privacy, self.privacy_rngs[report.agent_id])
        before = report.params.values - report.delta.values
        return replace(report, params=ParamVector(before + noisy.values, *noisy.shape), delta=noisy)

    def step(self) -> RoundLog:
        if self.done:
            raise RuntimeError("simulation already finished")
        t = self.round + 1
        try:
            return self._step(t)
        except (NumericError, FloatingPointError) as exc:
            raise SimulationError(t, exc) from exc

    def _step(self, t: int) -> RoundLog:
        cfg = self.cfg
        reports = []
        for agent in self.agents:
            _, rep = run_local_round(agent, self.env, cfg.steps_per_round, t, self.policy)
            reports.append(rep)
        if cfg.privacy.enabled:
            reports = [self._privatize(r) for r in reports]
        self.snapshots.append((t, [r.attention for r in reports]))

        requested = set()
        for r in reports:
            requested |= r.flagged_ids
        validation = self.env.validation_pool(t).points
        _, broadcast, evaluation = server_round(
            self.state,
            reports,
            validation,
            requested_ids=requested,
            alignment_weighting=cfg.server.alignment_weighting,
            feature_unlearning=cfg.server.feature_unlearning,
            irrelevant_threshold=cfg.attention.irrelevant_threshold,
        )

        if broadcast.unlearn_ids:
            holders = []
            weights_before = []
            for agent in self.agents:
                before = agent.param_vector()
                weights_before.append(agent.n_ag)
                removed = local_unlearn(agent, broadcast.unlearn_ids)
                holders.append((agent, before, removed))
            if any(removed for _, _, removed in holders):
                self._record_event(t, broadcast, holders, weights_before, validation)

        for agent in self.agents:
            mixed = fine_tune(agent.param_vector(), broadcast.params, cfg.server.beta)
            mixed = multimodal_mix(mixed, broadcast.params, cfg.server.lambda_, agent.modality_mask)
            agent.set_params(mixed)

        self.converged = check_convergence(self.state.perf_history, cfg.server.eps_converge)
        log = RoundLog(
            round=t,
            global_mse=evaluation.mse,
            global_mae=evaluation.mae,
            perf=evaluation.perf,
            unlearned_count=len(broadcast.unlearn_ids),
            agents=tuple(AgentRoundStats(r.n_ag, r.mean_attention, r.reward) for r in reports),
            converged=self.converged,
        )
        self.logs.append(log)
        self.round = t
        logger.info("round %d mse=%.6g unlearned=%d", t, log.global_mse, log.unlearned_count)
        return log

    def _record_event(self, t: int, broadcast, holders, weights_before, validation) -> None:
        gate = broadcast.gate
        pre = [(before, w) for (_, before, _), w in zip(holders, weights_before) if w > 0]
        if pre:
            global_before = LinearQModel(weighted_sum([p for p, _ in pre], [w for _, w in pre]), gate)
        else:
            global_before = LinearQModel(broadcast.params, gate)
        global_after = LinearQModel(self._fleet_params(), gate)
        records = []
        pooled = []
        for agent, before, removed in holders:
            if not removed:
                continue
            live = sorted(agent.replay)
            k = min(len(removed), len(live))
            retain_ids = sorted(int(i) for i in self.retain_rng.choice(live, size=k, replace=False)) if k else []
            after = agent.param_vector()
            records.append(HolderRecord(agent.agent_id, before, after, tuple(removed), tuple(retain_ids)))
            pooled.append((
                LinearQModel(before, gate),
                LinearQModel(after, gate),
                self.env.forget_set(removed).points,
                self.env.forget_set(retain_ids).points,
            ))
        report = unlearning_event(global_before, global_after, validation, pooled)
        self.events.append(
            UnlearningEvent(t, global_before.params, global_after.params, gate, tuple(records), report)
        )

    def run(self) -> list[RoundLog]:
        while not self.done:
            self.step()
        return self.logs

    def unlearning_report(self) -> UnlearningReport:
        model = self.global_model()
        validation = self.env.validation_pool(max(self.round, 1)).points
        m, a = evaluate(model, validation)
        fallback = UnlearningReport(0, m, m, a, a)
        return combine_reports([e.report for e in self.events], fallback)


def run_simulation(cfg: SimConfig) -> list[RoundLog]:
    return Simulation(cfg).run()


def sweep(base: SimConfig, param: str, values: Sequence[Any]) -> list[tuple[Any, list[RoundLog]]]:
    """Run one simulation per value of the dotted config key ``param``."""
    get_value(base, param)
    out = []
    for v in values:
        cfg = set_value(base, param, v)
        out.append((v, run_simulation(cfg)))
    return out
