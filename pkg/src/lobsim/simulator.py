"""Time loop of the agent-based market.

Each step runs in four phases:

0. public snapshot from the step-start book and the previous return;
1. resting agents evaluate cancellation (seeded permutation);
2. agents without a resting order evaluate entry; those that trade submit
   one at a time in a second seeded permutation, each order hitting the
   live book immediately;
3. observables are recorded.

Random draws per step, in this order: one uniform per resting agent, the
cancellation permutation, one normal and one uniform per idle agent, the
actor permutation, then per actor a log-normal price offset, a uniform coin
and a log-normal volume (drawn as three vectors). Together with the
initial book seeding this makes ``(config, seed)`` fully determine a run.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Optional, Sequence

import numpy as np

from .agents import AgentParams, OrderKind, generate_order, market_sentiment, trading_probability
from .engine import BUY, SELL, DepthProfile, OrderBook
from .information import (
    EmaState,
    PublicSnapshot,
    cancellation_probability,
    liquidity_proxy,
    perceived_volatility,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    n_agents: int = 10000
    steps: int = 100_000
    phi_0: float = 0.165
    ema_length: float = 5.0
    gamma: float = 0.02
    t_max: int = 100
    lognormal_mean: float = 7.0
    lognormal_std: float = 10.0
    q: float = 0.5
    kappa_min: float = 0.25
    kappa_max: float = 0.75
    p0: int = 1000
    nu_0: float = 1.0
    nu_floor: float = 0.1
    initial_fill: float = 0.5
    seed: int = 0
    warmup_steps: int = 2000
    depth_every: int = 100

    def __post_init__(self) -> None:
        positive = ("n_agents", "phi_0", "ema_length", "gamma", "t_max", "lognormal_mean",
                    "lognormal_std", "kappa_min", "kappa_max", "p0", "nu_0", "nu_floor")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.ema_length < 1:
            raise ConfigError(f"ema_length must be >= 1, got {self.ema_length}")
        if not 0 < self.q < 1:
            raise ConfigError(f"q must lie in (0, 1), got {self.q}")
        if self.kappa_min > self.kappa_max:
            raise ConfigError("kappa_min must not exceed kappa_max")
        if not 0 <= self.initial_fill <= 1:
            raise ConfigError(f"initial_fill must lie in [0, 1], got {self.initial_fill}")
        if self.steps < 0 or self.warmup_steps < 0:
            raise ConfigError("steps and warmup_steps must be non-negative")
        if self.steps < self.warmup_steps:
            raise ConfigError(f"steps ({self.steps}) shorter than warmup_steps ({self.warmup_steps})")
        if self.depth_every < 0:
            raise ConfigError("depth_every must be >= 0 (0 disables depth snapshots)")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SimConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in data.items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            kind = type(fields[key].default)
            if kind is int:
                if (isinstance(value, bool) or not isinstance(value, (int, float))
                        or not float(value).is_integer()):
                    raise ConfigError(f"config key {key!r} must be an integer, got {value!r}")
                value = int(value)
            elif kind is float:
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigError(f"config key {key!r} must be a number, got {value!r}")
                value = float(value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"{exc}") from None

    @classmethod
    def from_toml(cls, path: str | Path) -> "SimConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        return cls.from_mapping(data)

    def replace(self, **changes: Any) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def agent_params(self) -> AgentParams:
        return AgentParams.from_moments(self.lognormal_mean, self.lognormal_std, self.q,
                                        self.n_agents, self.phi_0, self.t_max)


@dataclass
class StepRecord:
    step: int
    mid: float
    ret: float
    volume: int
    spread: float  # nan when a side is empty
    delta_v: int
    n_bar: int
    nu_hat: float
    eta: float
    psi: float
    # (signed executed volume, mid after - mid before) per market order
    impacts: list[tuple[int, float]] = field(default_factory=list)
    depth: Optional[DepthProfile] = None


STEP_COLUMNS = ("step", "mid", "ret", "volume", "spread", "delta_v", "n_bar")


class EventLog:
    """Append-only CSV of book events: ``step,seq,type,agent,direction,price,volume``."""

    header = ("step", "seq", "type", "agent", "direction", "price", "volume")

    def __init__(self, fh: IO[str]) -> None:
        self._writer = csv.writer(fh, lineterminator="\n")
        self._writer.writerow(self.header)
        self.step = 0
        self.seq = 0

    def begin_step(self, step: int) -> None:
        self.step, self.seq = step, 0

    def __call__(self, kind: str, agent: int, direction: int, price: int, volume: int) -> None:
        self._writer.writerow((self.step, self.seq, kind, agent, direction, price, volume))
        self.seq += 1


class Market:
    """Book, agent population and public-information state of one run."""

    def __init__(self, config: SimConfig, event_log: Optional[EventLog] = None) -> None:
        self.config = config
        self.params = config.agent_params()
        self.rng = np.random.default_rng(config.seed)
        self.event_log = event_log
        self.book = OrderBook(event_sink=event_log)
        n = config.n_agents
        self.kappa = self.rng.uniform(config.kappa_min, config.kappa_max, n)
        self.order_id = np.full(n, -1, dtype=np.int64)
        self.submit_step = np.zeros(n, dtype=np.int64)
        self.position = np.zeros(n, dtype=np.int64)
        self.r2_ema = EmaState(config.nu_0**2, config.ema_length)
        self.step_index = 0
        self.last_mid = float(config.p0)
        self.last_ret = 0.0
        self._seed_book()

    def _seed_book(self) -> None:
        """Cold start: a fraction of agents begin with orders placed a log-normal
        number of ticks away from ``p0``, bids below it and asks above it, with
        ages spread over ``[0, t_max)`` so time-outs do not fire in one burst."""
        cfg, rng, p = self.config, self.rng, self.params
        n_seed = int(round(cfg.initial_fill * cfg.n_agents))
        agents = rng.choice(cfg.n_agents, size=n_seed, replace=False)
        directions = np.where(rng.random(n_seed) < 0.5, BUY, SELL)
        offsets = np.ceil(rng.lognormal(p.mu, p.sigma, n_seed)).astype(np.int64)
        volumes = np.maximum(1, np.rint(rng.lognormal(p.mu, p.sigma, n_seed))).astype(np.int64)
        born = -rng.integers(0, cfg.t_max, n_seed)
        oldest_first = np.argsort(born, kind="stable")
        for i in oldest_first.tolist():
            a, d = int(agents[i]), int(directions[i])
            self.book.step = int(born[i])
            _, order = self.book.submit_limit(a, d, max(1, cfg.p0 - d * int(offsets[i])),
                                              int(volumes[i]))
            self.order_id[a] = order.order_id
            self.submit_step[a] = born[i]
        self.book.begin_step(0)
        mid = self.book.mid_price()
        if mid is not None:
            self.last_mid = mid

    def snapshot(self) -> PublicSnapshot:
        cfg, book = self.config, self.book
        self.r2_ema, nu_hat = perceived_volatility(self.r2_ema, self.last_ret, cfg.nu_floor)
        n_bar = book.n_orders
        return PublicSnapshot(
            step=self.step_index,
            mid=self.last_mid,
            ret=self.last_ret,
            nu_hat=nu_hat,
            eta=liquidity_proxy(n_bar, cfg.n_agents),
            psi=float(cancellation_probability(nu_hat, cfg.gamma)),
            best_bid=book.best_bid(),
            best_ask=book.best_ask(),
            spread=book.spread(),
            n_bar=n_bar,
        )

    def step(self, record_depth: bool = False) -> StepRecord:
        self.step_index += 1
        t = self.step_index
        cfg, params, rng, book = self.config, self.params, self.rng, self.book
        order_id, position = self.order_id, self.position
        book.begin_step(t)
        if self.event_log is not None:
            self.event_log.begin_step(t)

        # phase 0
        snap = self.snapshot()
        resting_mask = order_id >= 0
        resting = np.flatnonzero(resting_mask)
        idle = np.flatnonzero(~resting_mask)

        # phase 1
        u = rng.random(resting.size)
        age = t - self.submit_step[resting]
        cancelling = resting[(age >= params.t_max) | (u < snap.psi)]
        for a in rng.permutation(cancelling).tolist():
            book.cancel(int(order_id[a]))
            order_id[a] = -1

        # phase 2
        eps = snap.nu_hat * rng.standard_normal(idle.size)
        phi = market_sentiment(params.phi_0, self.kappa[idle], 1.0 - snap.psi, snap.eta, eps)
        trading = rng.random(idle.size) < trading_probability(phi)
        actors = idle[trading]
        held = position[actors]
        directions = np.where(held != 0, -np.sign(held), np.where(phi[trading] > 0, BUY, SELL))
        perm = rng.permutation(actors.size)
        actors, directions, held = actors[perm], directions[perm], held[perm]
        k = actors.size
        xi = rng.lognormal(params.mu, params.sigma, k)
        coins = rng.random(k)
        vols = rng.lognormal(params.mu, params.sigma, k)

        traded = 0
        impacts: list[tuple[int, float]] = []
        for a, d, pos, x, c, v in zip(actors.tolist(), directions.tolist(), held.tolist(),
                                      xi.tolist(), coins.tolist(), vols.tolist()):
            spec = generate_order(d, book, self.last_mid, x, c, v, params, pos)
            if spec is None:
                continue
            if spec.kind is OrderKind.MARKET:
                before = book.mid_price()
                fills = book.submit_market(d, spec.volume, a)
                resting_order = None
            else:
                fills, resting_order = book.submit_limit(a, d, spec.price, spec.volume)
            executed = 0
            for f in fills:
                m = f.maker_agent_id
                position[m] -= d * f.volume
                if f.maker_order_id not in book:
                    order_id[m] = -1
                executed += f.volume
            if executed:
                position[a] += d * executed
                traded += executed
            if resting_order is not None:
                order_id[a] = resting_order.order_id
                self.submit_step[a] = t
            if spec.kind is OrderKind.MARKET and executed:
                after = book.mid_price()
                if before is not None and after is not None:
                    impacts.append((d * executed, after - before))

        # phase 3
        mid = book.mid_price()
        if mid is None:
            mid = self.last_mid
        ret = mid - self.last_mid
        self.last_mid, self.last_ret = mid, ret
        spread = book.spread()
        return StepRecord(
            step=t,
            mid=mid,
            ret=ret,
            volume=traded,
            spread=float("nan") if spread is None else float(spread),
            delta_v=book.volume_imbalance(),
            n_bar=book.n_orders,
            nu_hat=snap.nu_hat,
            eta=snap.eta,
            psi=snap.psi,
            impacts=impacts,
            depth=book.depth_snapshot(mid) if record_depth else None,
        )

    def audit(self) -> None:
        """Cross-check agents against the book; raises ``AssertionError``."""
        self.book.audit()
        resting = np.flatnonzero(self.order_id >= 0)
        assert resting.size == self.book.n_orders
        for a in resting.tolist():
            order = self.book.get(int(self.order_id[a]))
            assert order is not None and order.agent_id == a
        assert np.all(self.kappa >= self.config.kappa_min)
        assert np.all(self.kappa <= self.config.kappa_max)


@dataclass
class SimOutput:
    config: SimConfig
    records: list[StepRecord]

    @property
    def seed(self) -> int:
        return self.config.seed

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def returns(self) -> np.ndarray:
        return self.column("ret")

    def market_orders(self) -> np.ndarray:
        """``(step, signed_volume, dmid)`` rows, one per executed market order."""
        rows = [(r.step, v, dm) for r in self.records for v, dm in r.impacts]
        return np.array(rows, dtype=float).reshape(-1, 3)

    def depth_snapshots(self) -> list[DepthProfile]:
        return [r.depth for r in self.records if r.depth is not None]

    def write_steps_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for r in self.records:
            w.writerow((r.step, _fmt(r.mid), _fmt(r.ret), r.volume, _fmt(r.spread),
                        r.delta_v, r.n_bar))

    def steps_csv(self) -> str:
        buf = io.StringIO()
        self.write_steps_csv(buf)
        return buf.getvalue()

    def write_market_orders_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "signed_volume", "dmid"))
        for r in self.records:
            for v, dm in r.impacts:
                w.writerow((r.step, v, _fmt(dm)))

    def write_depth_csv(self, fh: IO[str]) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("step", "side", "distance", "volume"))
        for r in self.records:
            if r.depth is None:
                continue
            for side, levels in (("bid", r.depth.bid), ("ask", r.depth.ask)):
                for dist, vol in levels:
                    w.writerow((r.step, side, _fmt(dist), vol))


def _fmt(x: float) -> str:
    if math.isnan(x):
        return "nan"
    return repr(float(x))


def run(config: SimConfig, event_log: Optional[EventLog] = None,
        audit_every: int = 0) -> SimOutput:
    """Simulate ``config.steps`` steps; the first ``warmup_steps`` are not recorded."""
    market = Market(config, event_log)
    records = []
    for t in range(1, config.steps + 1):
        keep = t > config.warmup_steps
        depth = keep and config.depth_every > 0 and t % config.depth_every == 0
        rec = market.step(record_depth=depth)
        if keep:
            records.append(rec)
        if audit_every and t % audit_every == 0:
            market.audit()
    return SimOutput(config, records)


def _run_seed(args: tuple[SimConfig, int]) -> SimOutput:
    config, seed = args
    return run(config.replace(seed=seed))


@dataclass
class Ensemble:
    outputs: list[SimOutput]  # sorted by seed

    @property
    def seeds(self) -> list[int]:
        return [o.seed for o in self.outputs]

    def pooled(self) -> dict[str, tuple[float, float]]:
        from . import analytics

        return analytics.pooled_statistics(self.outputs)


def ensemble(config: SimConfig, seeds: Sequence[int], workers: int = 1) -> Ensemble:
    """Independent runs, one per seed; parallel across processes if ``workers > 1``."""
    if not seeds:
        raise ConfigError("ensemble needs at least one seed")
    ordered = sorted(set(int(s) for s in seeds))
    jobs = [(config, s) for s in ordered]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_run_seed, jobs))
    else:
        outputs = [_run_seed(j) for j in jobs]
    return Ensemble(outputs)


def iter_configs(config: SimConfig, param: str, values: Iterable[float]) -> list[SimConfig]:
    return [config.replace(**{param: v}) for v in values]
