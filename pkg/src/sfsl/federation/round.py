"""One synchronous training round: selection, private union, perturbation,
submodel download, local training and count-weighted masked upload."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import psu
from ..errors import ConfigError, RoundAborted, ThresholdNotMet
from ..model_store import GlobalModel, Submodel, apply_row_means, extract_submodel
from ..perturb import CPP_PRESETS, Memoization, ProbabilityParams, load_or_new_memo, perturb_index_set, resolve_params, save_memo
from ..psu import BloomParams, PartitionScheme
from ..quant import QuantConfig, averaged_dequantize, check_capacity, quantize_counted, weight_levels
from ..rng import derive_rng, derive_seed
from ..secure_agg import AggClient, AggServer, AggSession, default_threshold, get_group
from ..secure_agg.prg import check_modulus
from ..wire import RoundConfigMessage, SubmodelRequest, SubmodelResponse, UnionResult
from ..harness.dropout import NO_DROPOUT, DropoutPlan
from ..harness.metrics import RoundMetrics
from ..harness.transport import Network
from .data import ClientDataset, IndexCorrelationMap, build_succinct_training_set, count_vector, derive_secondary_ids, with_secondary_ids
from .training import SyntheticTrainer, Trainer

log = logging.getLogger(__name__)

SCHEMES = ("sfsl", "sfl")
WEIGHTINGS = ("count", "per_client")


@dataclass
class RoundConfig:
    n: int
    modulus: int = 2 ** 32
    threshold: int | None = None
    cpp: ProbabilityParams = CPP_PRESETS["CPP5"]
    bloom: BloomParams | None = None  # None: identity hashing over the full domain
    partitions: PartitionScheme | None = None  # None: equal-width default
    quant: QuantConfig = field(default_factory=QuantConfig)
    hyperparams: dict = field(default_factory=dict)
    round_id: int = 0
    period_id: int = 0
    seed: int = 0
    scheme: str = "sfsl"
    dense_rows: int = 0
    weighting: str = "count"
    max_count: int = 512
    group: str = "modp2048"
    positive_only: bool = False
    expected_set_size: int = 0

    def __post_init__(self):
        self.cpp = resolve_params(self.cpp)
        if self.n < 2:
            raise ConfigError("a round needs at least 2 clients")
        if self.threshold is not None and not 1 <= self.threshold <= self.n:
            raise ConfigError(f"threshold {self.threshold} outside [1, {self.n}]")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"weighting must be one of {WEIGHTINGS}")
        if self.dense_rows < 0 or self.max_count < 1:
            raise ConfigError("dense_rows must be >= 0 and max_count >= 1")
        check_modulus(self.modulus)
        get_group(self.group)
        check_capacity(self.n, self.max_count, self.quant, self.modulus)

    @property
    def t(self) -> int:
        return default_threshold(self.n) if self.threshold is None else self.threshold

    def resolved_bloom(self, m: int) -> BloomParams:
        return self.bloom if self.bloom is not None else BloomParams.identity_map(m)

    def resolved_partitions(self, m: int) -> PartitionScheme:
        return self.partitions if self.partitions is not None else PartitionScheme.equal_width(m)

    def to_message(self, m: int, d: int) -> RoundConfigMessage:
        bloom = self.resolved_bloom(m)
        parts = self.resolved_partitions(m)
        return RoundConfigMessage(
            round_id=self.round_id,
            period_id=self.period_id,
            threshold=self.t,
            modulus=self.modulus,
            bloom_length=bloom.length,
            hash_count=bloom.hash_count,
            hash_seed=bloom.hash_seed,
            identity_hash=bloom.identity,
            partition_bounds=list(parts.boundaries),
            levels=self.quant.levels,
            w_min=self.quant.w_min,
            w_max=self.quant.w_max,
            probs=(self.cpp.p1, self.cpp.p2, self.cpp.p3, self.cpp.p4),
            extras={
                "m": m,
                "d": d,
                "scheme": self.scheme,
                "dense_rows": self.dense_rows,
                "weighting": self.weighting,
                "max_count": self.max_count,
                "group": self.group,
                "positive_only": self.positive_only,
                "seed": self.seed,
                "hyperparams": self.hyperparams,
            },
        )


@dataclass
class SubmodelUpdate:
    index_list: np.ndarray
    weighted_rows: np.ndarray
    counts: np.ndarray


def select_clients(population, n: int, rng: np.random.Generator) -> list:
    population = sorted(population)
    if n > len(population):
        raise ConfigError(f"cannot select {n} of {len(population)} registered clients")
    return sorted(population[i] for i in rng.choice(len(population), size=n, replace=False))


def dense_block(m: int, k: int) -> np.ndarray:
    return np.arange(m - k + 1, m + 1, dtype=np.int64) if k else np.zeros(0, dtype=np.int64)


# ---------------------------------------------------------------------------
# client role
# ---------------------------------------------------------------------------


class FederatedClient:
    def __init__(self, client_id: int, data: ClientDataset, memo: Memoization | None = None,
                 memo_path=None, correlation: IndexCorrelationMap | None = None, trainer: Trainer | None = None):
        self.client_id = int(client_id)
        self.data = data
        self.memo_path = Path(memo_path) if memo_path else None
        self.memo = memo if memo is not None else Memoization()
        self.correlation = correlation
        self.user_trainer = trainer
        self.trainer = trainer
        self.last_update: SubmodelUpdate | None = None
        self.clipped = 0
        self.capped = 0

    # config --------------------------------------------------------------
    def on_config(self, msg: RoundConfigMessage):
        ex = msg.extras
        self.msg = msg
        self.m, self.d = int(ex["m"]), int(ex["d"])
        self.scheme = ex["scheme"]
        self.weighting = ex["weighting"]
        self.max_count = int(ex["max_count"])
        self.modulus = msg.modulus
        self.params = ProbabilityParams(*msg.probs)
        self.quant = QuantConfig(msg.levels, msg.w_min, msg.w_max)
        self.bloom = BloomParams(msg.bloom_length, msg.hash_count, 0.0, 0.0, msg.hash_seed, msg.identity_hash)
        self.partitions = PartitionScheme(tuple(msg.partition_bounds))
        self.dense = dense_block(self.m, int(ex["dense_rows"]))
        seed = int(ex["seed"])
        self.rng_psu = derive_rng(seed, "psu", msg.round_id, self.client_id)
        self.rng_perturb = derive_rng(seed, "perturb", msg.round_id, self.client_id)
        self.rng_quant = derive_rng(seed, "quant", msg.round_id, self.client_id)
        self.train_seed = derive_seed(seed, "train", msg.round_id, self.client_id)
        if self.user_trainer is None:
            self.trainer = SyntheticTrainer.from_hyperparams(ex.get("hyperparams", {}), self.quant)

        if self.memo_path is not None:
            self.memo = load_or_new_memo(self.memo_path, msg.period_id)
        elif self.memo.period_id != msg.period_id:
            self.memo.reset(msg.period_id)

        self.full_data = with_secondary_ids(self.data, self.correlation) if self.correlation else self.data
        sample_ids = self.full_data.real_index_set
        if sample_ids.size and (sample_ids[0] < 1 or sample_ids[-1] > self.m - self.dense.size):
            raise ConfigError(f"client {self.client_id} holds indices outside the sparse domain")
        self.real_set = np.union1d(sample_ids, self.dense)

    # private set union ---------------------------------------------------
    def psu_vector(self) -> np.ndarray:
        return psu.client_vector(self.real_set, self.bloom, self.partitions, self.modulus,
                                 self.rng_psu, self.msg.extras.get("positive_only", False))

    # perturbation + download --------------------------------------------
    def on_union(self, msg: UnionResult) -> SubmodelRequest:
        self.union = np.asarray(msg.indices, dtype=np.int64)
        if self.scheme == "sfl":
            self.perturbed = self.union.copy()
            return SubmodelRequest(self.client_id, self.perturbed)
        sparse = np.setdiff1d(self.union, self.dense)
        if self.correlation is not None:
            primary_dom = np.array(sorted(self.correlation.primary_domain), dtype=np.int64)
            candidates = np.intersect1d(sparse, primary_dom)
        else:
            candidates = sparse
        real_candidates = np.intersect1d(self.real_set, candidates)
        picked, self.memo = perturb_index_set(real_candidates, candidates, self.memo, self.params, self.rng_perturb)
        parts = [picked, self.dense]
        if self.correlation is not None and picked.size:
            parts.append(np.intersect1d(derive_secondary_ids(picked, self.correlation), self.union))
        self.perturbed = np.unique(np.concatenate(parts)).astype(np.int64)
        if self.memo_path is not None:
            save_memo(self.memo, self.memo_path)
        return SubmodelRequest(self.client_id, self.perturbed)

    # training + upload vector --------------------------------------------
    def on_submodel(self, msg: SubmodelResponse) -> np.ndarray:
        rows = np.asarray(msg.rows)
        if rows.shape != (self.perturbed.size, self.d):
            raise ConfigError("submodel response does not match the request")
        sub = Submodel(self.perturbed, rows)
        succinct = np.intersect1d(self.real_set, self.perturbed)
        data = build_succinct_training_set(self.full_data, succinct)
        self.succinct = succinct
        counts = count_vector(data, self.perturbed, self.dense)
        delta = self.trainer.train(sub, data, self.train_seed, self.dense)
        if self.weighting == "per_client":
            weights = np.full(self.perturbed.size, len(data), dtype=np.int64)
        else:
            weights = counts
        self.capped = int(np.count_nonzero(weights > self.max_count))
        weights = np.minimum(weights, self.max_count)

        q = quantize_counted(delta, self.quant, self.rng_quant)
        self.clipped = q.clipped
        weighted = weight_levels(q.levels, weights)
        self.last_update = SubmodelUpdate(self.perturbed, weighted, weights)

        lanes = np.zeros((self.union.size, self.d + 1), dtype=np.uint64)
        pos = np.searchsorted(self.union, self.perturbed)
        lanes[pos, : self.d] = weighted.astype(np.uint64)
        lanes[pos, self.d] = weights.astype(np.uint64)
        return lanes.ravel()


# ---------------------------------------------------------------------------
# server role and coordinator
# ---------------------------------------------------------------------------


def _secure_sum(net: Network, metrics: RoundMetrics, label: str, ids: list, vectors, threshold: int,
                modulus: int, group_name: str, seed: int, round_id: int, dropped=frozenset()):
    """Masked summation with every message crossing ``net``.

    ``vectors`` maps client id to a zero-argument callable producing the
    client's input, so inputs are computed only by clients still online.
    Returns (sum, live ids).
    """
    group = get_group(group_name)
    meter = metrics.traffic
    ids = sorted(ids)
    vec_len = None
    inputs = {}
    for c in ids:
        if c not in dropped:
            inputs[c] = np.asarray(vectors[c](), dtype=np.uint64)
            vec_len = inputs[c].size
    if vec_len is None:
        raise RoundAborted(f"{label}: every client dropped")
    if len(ids) < threshold:
        raise RoundAborted(f"{label}: {len(ids)} clients online, threshold {threshold}")
    session = AggSession(ids, threshold, vec_len, modulus, group)
    server = AggServer(session)
    clients = {c: AggClient(c, group, derive_rng(seed, "agg", label, round_id, c)) for c in ids}
    try:
        meter.stage = f"{label}/key_advertise"
        for c in ids:
            net.client(c).send(clients[c].advertise())
        for c in ids:
            server.on_advertise(net.server(c).recv())
        digest = server.close_advertise()

        meter.stage = f"{label}/share_distribution"
        for c in ids:
            net.server(c).send(digest)
        for c in ids:
            net.client(c).send(clients[c].on_key_digest(net.client(c).recv()))
        for c in ids:
            server.on_shares(net.server(c).recv())
        relay = server.close_shares()

        meter.stage = f"{label}/masked_input"
        for c, msg in relay.items():
            net.server(c).send(msg)
        online = [c for c in relay if c not in dropped]
        for c in online:
            clients[c].on_shares(net.client(c).recv())
            net.client(c).send(clients[c].masked_input(inputs[c]))
        for c in online:
            server.on_masked(net.server(c).recv())
        request = server.close_masked()

        meter.stage = f"{label}/unmasking"
        for c in request.live:
            net.server(c).send(request)
        for c in request.live:
            net.client(c).send(clients[c].on_unmask_request(net.client(c).recv()))
        for c in request.live:
            server.on_unmask(net.server(c).recv())
        total = server.finalize()
    except ThresholdNotMet as exc:
        raise RoundAborted(f"{label}: {exc}") from exc
    return total, list(request.live)


def run_round(model: GlobalModel, clients: dict, config: RoundConfig, dropout: DropoutPlan = NO_DROPOUT,
              transport: str = "inproc", stop_after_union: bool = False) -> tuple:
    """Execute one round; returns ``(new_model, metrics)``.

    The input model is never modified. Raises RoundAborted (with
    ``.metrics``) when fewer than ``t`` clients remain at a summation.
    With ``stop_after_union`` only configuration and the union run, and
    the model comes back unchanged.
    """
    m, d = model.rows, model.cols
    metrics = RoundMetrics(config.round_id, config.scheme)
    rng_sel = derive_rng(config.seed, "select", config.round_id)
    selected = select_clients(clients.keys(), config.n, rng_sel)
    metrics.selected = selected
    t = config.t
    net = Network(selected, transport, metrics.traffic)
    try:
        return _run(model, clients, config, dropout, net, metrics, selected, t, m, d, stop_after_union)
    except RoundAborted as exc:
        metrics.aborted = True
        metrics.abort_reason = str(exc)
        exc.metrics = metrics
        log.warning("round %d aborted: %s", config.round_id, exc)
        raise
    finally:
        net.close()


def _run(model, clients, config, dropout, net, metrics, selected, t, m, d, stop_after_union=False):
    cfg_msg = config.to_message(m, d)
    with metrics.timed("config"):
        for c in selected:
            net.server(c).send(cfg_msg)
        for c in selected:
            clients[c].on_config(net.client(c).recv())

    online = list(selected)
    if config.scheme == "sfsl":
        bloom = config.resolved_bloom(m)
        parts = config.resolved_partitions(m)
        with metrics.timed("psu"):
            total, online = _secure_sum(
                net, metrics, "psu", online, {c: clients[c].psu_vector for c in online}, t,
                config.modulus, config.group, config.seed, config.round_id, dropout.drops_in("psu"),
            )
            b, a = psu.split_summed(total, bloom, parts)
            union = psu.reconstruct_union(b, a, parts, bloom)
    else:
        union = model.full_index_set
    metrics.union_size = int(union.size)
    log.info("round %d: union of %d indices", config.round_id, union.size)

    with metrics.timed("union"):
        for c in online:
            net.server(c).send(UnionResult(union))
        if stop_after_union:
            for c in online:
                net.client(c).recv()
            metrics.live = online
            metrics.dropped = sorted(set(selected) - set(online))
            return model, metrics
        for c in online:
            net.client(c).send(clients[c].on_union(net.client(c).recv()))
        requests = {c: net.server(c).recv() for c in online}

    with metrics.timed("download"):
        for c in online:
            req = requests[c]
            metrics.perturbed_sizes[c] = int(req.indices.size)
            net.server(c).send(SubmodelResponse(extract_submodel(model, req.indices).rows))
        # every client takes delivery; training happens only for those still online
        delivered = {c: net.client(c).recv() for c in online}

    def producer(cl):
        def produce():
            with metrics.timed("train"):
                vec = cl.on_submodel(delivered[cl.client_id])
            metrics.succinct_sizes[cl.client_id] = int(cl.succinct.size)
            metrics.clipped += cl.clipped
            metrics.capped_counts += cl.capped
            return vec

        return produce

    producers = {c: producer(clients[c]) for c in online}

    with metrics.timed("update"):
        total, live = _secure_sum(
            net, metrics, "update", online, producers, t, config.modulus, config.group,
            config.seed, config.round_id, dropout.drops_in("update"),
        )
    metrics.live = live
    metrics.dropped = sorted(set(selected) - set(live))

    with metrics.timed("apply"):
        new_model = apply_aggregate(model, union, total, config.quant, d)
    return new_model, metrics


def apply_aggregate(model: GlobalModel, union: np.ndarray, total: np.ndarray, quant: QuantConfig, d: int) -> GlobalModel:
    """Turn the summed lanes into per-row weighted means and add them."""
    lanes = np.asarray(total, dtype=np.uint64).reshape(union.size, d + 1)
    counts = lanes[:, d].astype(np.int64)
    nz = counts > 0
    new_model = model.copy()
    if np.any(nz):
        means = averaged_dequantize(lanes[nz, :d].astype(np.float64), counts[nz, None].astype(np.float64), quant)
        apply_row_means(new_model, union[nz], means)
    return new_model
