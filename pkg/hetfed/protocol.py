"""
Round protocol for model-heterogeneous personalized federated learning with
a shared feature extractor, plus the Standalone and homogeneous FedAvg
baselines.

Each selected client runs two phases per round:

1. the broadcast extractor is frozen and the client's own CNN is trained on
   ``mu * CE(F(G(x)), y) + (1 - mu) * CE(F(x), y)``;
2. the CNN is frozen and the extractor is trained on ``CE(F(G(x)), y)``,
   with gradients flowing through the frozen CNN.

Only extractor parameters travel to the server, which averages them weighted
by the clients' training-set sizes.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from . import network, seeding
from .data import BatchPlan, ClientPartition, Dataset, iter_batches, partition_noniid
from .errors import AggregationCompatibilityError, ArgumentError, ConfigError, TrainingError
from .metrics import CostLedger, evaluate, record_round
from .params import Manifest, ParamSet, manifest_text
from .schemas import ExperimentConfig, Mode, RoundReport
from .tensor import sgd_step, softmax_cross_entropy
from .zoo import Model, ModelSpec, build_cnn, build_extractor, count_params, estimate_flops, init_params

logger = logging.getLogger(__name__)

PHASE_MODEL = 0
PHASE_EXTRACTOR = 1


@dataclass(frozen=True)
class Hyperparams:
    num_clients: int
    clients_per_round: int
    rounds: int = 1
    local_epochs: int = 1
    extractor_epochs: int = 5
    lr_model: float = 0.01
    lr_extractor: float = 0.01
    mu: float = 0.2
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.clients_per_round <= self.num_clients:
            raise ArgumentError(f"need 1 <= K <= N, got K={self.clients_per_round}, N={self.num_clients}")
        if not 0 < self.mu <= 0.5:
            raise ArgumentError(f"mu must lie in (0, 0.5], got {self.mu}")
        if self.lr_model < 0 or self.lr_extractor < 0:
            raise ArgumentError("learning rates must be non-negative")
        if min(self.rounds, self.local_epochs, self.extractor_epochs, self.batch_size) < 1:
            raise ArgumentError("rounds, epochs and batch size must be positive")

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "Hyperparams":
        return cls(
            num_clients=config.num_clients,
            clients_per_round=config.clients_per_round,
            rounds=config.rounds,
            local_epochs=config.local_epochs,
            extractor_epochs=config.extractor_epochs,
            lr_model=config.lr_model,
            lr_extractor=config.lr_extractor,
            mu=config.mu,
            batch_size=config.batch_size,
            seed=config.seed,
        )


@dataclass
class ClientState:
    """Client-side record; ``model`` never crosses to the server"""

    client: int
    variant: int
    model: Model
    partition: ClientPartition

    @property
    def num_train(self) -> int:
        return len(self.partition.train)

    def plan(self, batch_size: int) -> BatchPlan:
        return BatchPlan(self.partition.train, batch_size, (seeding.CLIENT_BATCHES, self.client))


@dataclass
class ServerState:
    extractor: ParamSet
    round: int = 0


@dataclass(frozen=True)
class PhaseStats:
    mean_loss: float
    samples: int
    batches: int
    mean_enhanced_loss: Optional[float] = None
    mean_original_loss: Optional[float] = None


@dataclass(frozen=True)
class ClientUpdate:
    client: int
    extractor: Optional[ParamSet]
    num_train: int
    model_stats: PhaseStats
    extractor_stats: Optional[PhaseStats] = None


@dataclass
class Boundary:
    """
    Client/server interface. Every parameter set crossing it must carry the
    boundary manifest; crossings are counted for the communication ledger.
    """

    manifest: Manifest
    crossings: List[Tuple[str, int, int]] = field(default_factory=list)

    def cross(self, params: ParamSet, direction: str, client: int) -> ParamSet:
        if params.manifest != self.manifest:
            raise AggregationCompatibilityError(
                f"refusing to send [{manifest_text(params.manifest)}] across the client/server boundary"
            )
        self.crossings.append((direction, client, len(params)))
        return params

    def transmitted(self, direction: str, since: int = 0) -> int:
        return sum(size for d, _, size in self.crossings[since:] if d == direction)


@dataclass
class TrainingResult:
    mode: Mode
    reports: List[RoundReport]
    ledger: CostLedger
    clients: List[ClientState]
    extractor_spec: Optional[ModelSpec] = None
    extractor: Optional[ParamSet] = None
    boundary: Optional[Boundary] = None

    @property
    def models(self) -> Dict[int, Model]:
        return {c.client: c.model for c in self.clients}

    def model_loss_series(self, client: int) -> List[float]:
        return [r.model_losses[client] for r in self.reports if r.model_losses[client] is not None]


def sample_clients(num_clients: int, k: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """Uniform sample of ``k`` distinct client ids, ascending"""
    if not 1 <= k <= num_clients:
        raise ArgumentError(f"cannot select {k} of {num_clients} clients")
    if k == num_clients:
        return tuple(range(num_clients))
    return tuple(sorted(int(i) for i in rng.choice(num_clients, size=k, replace=False)))


def enhance(extractor: Model, x: np.ndarray) -> np.ndarray:
    """Enhanced data: the extractor's same-shaped output for ``x`` (single sample or batch)"""
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == extractor.spec.input_shape
    out = network.predict(extractor, x[np.newaxis] if single else x)
    return out[0] if single else out


def _check_loss(loss: float, what: str, round_index: int, client: int, batch: int) -> None:
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite {what} loss", round_index, client, batch)


def _apply_step(params: ParamSet, grads: ParamSet, lr: float, what: str,
                round_index: int, client: int, batch: int) -> ParamSet:
    try:
        return sgd_step(params, grads, lr)
    except ArgumentError as exc:
        raise TrainingError(f"{what} update failed: {exc}", round_index, client, batch) from exc


def combined_loss(mu: float, loss_enhanced: float, loss_original: float) -> float:
    return mu * loss_enhanced + (1.0 - mu) * loss_original


def dual_path_loss(model: Model, extractor: Model, images: np.ndarray, labels: np.ndarray,
                   mu: float) -> Tuple[float, float, float, ParamSet]:
    """Combined loss ``mu*l1 + (1-mu)*l2`` and its gradient w.r.t. the model; the extractor is frozen"""
    images = np.asarray(images, dtype=np.float64)
    n = len(images)
    # both paths share one stacked pass; parameter gradients sum over the batch axis
    stacked = np.concatenate([network.predict(extractor, images), images])
    logits, tape = network.forward(model, stacked)
    loss_enhanced, grad_enhanced = softmax_cross_entropy(logits[:n], labels)
    loss_original, grad_original = softmax_cross_entropy(logits[n:], labels)
    upstream = np.concatenate([mu * grad_enhanced, (1.0 - mu) * grad_original])
    grads, _ = network.backward(model, tape, upstream)
    return combined_loss(mu, loss_enhanced, loss_original), loss_enhanced, loss_original, grads


def extractor_loss(model: Model, extractor: Model, images: np.ndarray,
                   labels: np.ndarray) -> Tuple[float, ParamSet]:
    """``CE(F(G(x)), y)`` and its gradient w.r.t. the extractor; the model is frozen"""
    enhanced, tape_extractor = network.forward(extractor, images)
    logits, tape_model = network.forward(model, enhanced)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    _, grad_enhanced = network.backward(model, tape_model, grad_logits, param_grads=False)
    grads, _ = network.backward(extractor, tape_extractor, grad_enhanced)
    return loss, grads


def plain_loss(model: Model, images: np.ndarray, labels: np.ndarray) -> Tuple[float, ParamSet]:
    logits, tape = network.forward(model, images)
    loss, grad_logits = softmax_cross_entropy(logits, labels)
    grads, _ = network.backward(model, tape, grad_logits)
    return loss, grads


def train_local_model(client: ClientState, extractor: Model, dataset: Dataset, hp: Hyperparams,
                      round_index: int = 1) -> Tuple[ParamSet, PhaseStats]:
    """Phase one: frozen extractor, ``local_epochs`` of SGD on the client's CNN"""
    rng = seeding.derive_rng(hp.seed, seeding.CLIENT_BATCHES, client.client, round_index, PHASE_MODEL)
    plan = client.plan(hp.batch_size)
    model = client.model
    losses, enhanced_losses, original_losses = [], [], []
    samples = 0
    for _ in range(hp.local_epochs):
        for images, labels in iter_batches(plan, dataset, rng):
            loss, loss_enhanced, loss_original, grads = dual_path_loss(model, extractor, images, labels, hp.mu)
            _check_loss(loss, "model", round_index, client.client, len(losses))
            model = model.with_params(
                _apply_step(model.params, grads, hp.lr_model, "model", round_index, client.client, len(losses))
            )
            losses.append(loss)
            enhanced_losses.append(loss_enhanced)
            original_losses.append(loss_original)
            samples += len(labels)
    stats = PhaseStats(float(np.mean(losses)), samples, len(losses),
                       float(np.mean(enhanced_losses)), float(np.mean(original_losses)))
    return model.params, stats


def train_extractor(client: ClientState, extractor: Model, frozen_model: Model, dataset: Dataset,
                    hp: Hyperparams, round_index: int = 1) -> Tuple[ParamSet, PhaseStats]:
    """Phase two: frozen CNN, ``extractor_epochs`` of SGD on the extractor"""
    rng = seeding.derive_rng(hp.seed, seeding.CLIENT_BATCHES, client.client, round_index, PHASE_EXTRACTOR)
    plan = client.plan(hp.batch_size)
    losses = []
    samples = 0
    for _ in range(hp.extractor_epochs):
        for images, labels in iter_batches(plan, dataset, rng):
            loss, grads = extractor_loss(frozen_model, extractor, images, labels)
            _check_loss(loss, "extractor", round_index, client.client, len(losses))
            extractor = extractor.with_params(_apply_step(
                extractor.params, grads, hp.lr_extractor, "extractor", round_index, client.client, len(losses)
            ))
            losses.append(loss)
            samples += len(labels)
    return extractor.params, PhaseStats(float(np.mean(losses)), samples, len(losses))


def client_update(client: ClientState, extractor: Model, dataset: Dataset, hp: Hyperparams,
                  round_index: int = 1) -> ClientUpdate:
    """Both local phases in order; the client keeps its model and returns only the extractor"""
    model_params, model_stats = train_local_model(client, extractor, dataset, hp, round_index)
    client.model = client.model.with_params(model_params)
    extractor_params, extractor_stats = train_extractor(client, extractor, client.model, dataset, hp, round_index)
    logger.debug(
        f"Round {round_index} client {client.client}: model loss {model_stats.mean_loss:.4f}, "
        f"extractor loss {extractor_stats.mean_loss:.4f}"
    )
    return ClientUpdate(client.client, extractor_params, client.num_train, model_stats, extractor_stats)


def standalone_update(client: ClientState, dataset: Dataset, hp: Hyperparams,
                      round_index: int = 1, start: Optional[Model] = None) -> Tuple[Model, PhaseStats]:
    """Plain cross-entropy SGD on original data, used by both baselines"""
    rng = seeding.derive_rng(hp.seed, seeding.CLIENT_BATCHES, client.client, round_index, PHASE_MODEL)
    plan = client.plan(hp.batch_size)
    model = start if start is not None else client.model
    losses = []
    samples = 0
    for _ in range(hp.local_epochs):
        for images, labels in iter_batches(plan, dataset, rng):
            loss, grads = plain_loss(model, images, labels)
            _check_loss(loss, "model", round_index, client.client, len(losses))
            model = model.with_params(
                _apply_step(model.params, grads, hp.lr_model, "model", round_index, client.client, len(losses))
            )
            losses.append(loss)
            samples += len(labels)
    return model, PhaseStats(float(np.mean(losses)), samples, len(losses))


def aggregation_weights(sizes: Sequence[int]) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if sizes.size == 0:
        raise ArgumentError("nothing to aggregate")
    if np.any(sizes <= 0):
        raise ArgumentError(f"data volumes must be positive, got {sizes.tolist()}")
    return sizes / sizes.sum()


def aggregate_params(contributions: Sequence[Tuple[int, ParamSet, int]]) -> ParamSet:
    """
    Data-volume-weighted mean of ``(client, params, n_k)`` contributions,
    normalized over the contributing clients and summed in ascending client
    order. Identical inputs come back unchanged.
    """
    if not contributions:
        raise ArgumentError("nothing to aggregate")
    ordered = sorted(contributions, key=lambda c: c[0])
    first = ordered[0][1]
    for _, params, _ in ordered[1:]:
        first.require_compatible(params)
    weights = aggregation_weights([n for _, _, n in ordered])
    if all(np.array_equal(first.values, params.values) for _, params, _ in ordered[1:]):
        return first
    total = np.zeros(len(first))
    for weight, (_, params, _) in zip(weights, ordered):
        total += weight * params.values
    return first.with_values(total)


def aggregate_extractors(contributions: Sequence[Tuple[int, ParamSet, int]]) -> ParamSet:
    return aggregate_params(contributions)


def _parallel(workers: int):
    # threads keep BLAS configuration identical across schedules
    return Parallel(n_jobs=workers, backend="threading")


@dataclass
class Simulation:
    """Everything a run needs between rounds"""

    mode: Mode
    hp: Hyperparams
    dataset: Dataset
    clients: List[ClientState]
    ledger: CostLedger = field(default_factory=CostLedger)
    workers: int = 1
    extractor_spec: Optional[ModelSpec] = None
    server: Optional[ServerState] = None
    global_model: Optional[Model] = None
    boundary: Optional[Boundary] = None
    _forward_flops: Dict[str, int] = field(default_factory=dict)

    def forward_flops(self, spec: ModelSpec) -> int:
        if spec.name not in self._forward_flops:
            self._forward_flops[spec.name] = estimate_flops(spec)
        return self._forward_flops[spec.name]

    def sample(self, round_index: int) -> Tuple[int, ...]:
        rng = seeding.derive_rng(self.hp.seed, seeding.SAMPLER, round_index)
        return sample_clients(self.hp.num_clients, self.hp.clients_per_round, rng)

    def evaluate_all(self, models: Sequence[Model]) -> Tuple[List[float], List[float]]:
        jobs = _parallel(self.workers)(
            delayed(_evaluate_client)(model, client.partition, self.dataset)
            for model, client in zip(models, self.clients)
        )
        return [test for test, _ in jobs], [val for _, val in jobs]


def _evaluate_client(model: Model, partition: ClientPartition, dataset: Dataset) -> Tuple[float, float]:
    val = evaluate(model, partition.val, dataset) if len(partition.val) else 0.0
    return evaluate(model, partition.test, dataset), val


def run_round(sim: Simulation, round_index: int) -> RoundReport:
    """Sample, broadcast, update locally, aggregate, evaluate every client and book the costs"""
    started = time.perf_counter()
    server = sim.server
    selected = sim.sample(round_index)
    mark = len(sim.boundary.crossings)
    extractor = Model(sim.extractor_spec, server.extractor)
    for k in selected:
        sim.boundary.cross(server.extractor, "down", k)

    updates: List[ClientUpdate] = _parallel(sim.workers)(
        delayed(client_update)(sim.clients[k], extractor, sim.dataset, sim.hp, round_index) for k in selected
    )
    contributions = [
        (u.client, sim.boundary.cross(u.extractor, "up", u.client), u.num_train) for u in updates
    ]
    server.extractor = aggregate_extractors(contributions)
    server.round = round_index

    f_extractor = sim.forward_flops(sim.extractor_spec)
    flops = 0
    for u in updates:
        f_model = sim.forward_flops(sim.clients[u.client].model.spec)
        flops += u.model_stats.samples * (6 * f_model + f_extractor)
        flops += u.extractor_stats.samples * 3 * (f_model + f_extractor)

    accuracies, val_accuracies = sim.evaluate_all([c.model for c in sim.clients])
    model_losses = [None] * sim.hp.num_clients
    extractor_losses = [None] * sim.hp.num_clients
    enhanced_losses = [None] * sim.hp.num_clients
    original_losses = [None] * sim.hp.num_clients
    for u in updates:
        model_losses[u.client] = u.model_stats.mean_loss
        extractor_losses[u.client] = u.extractor_stats.mean_loss
        enhanced_losses[u.client] = u.model_stats.mean_enhanced_loss
        original_losses[u.client] = u.model_stats.mean_original_loss
    return record_round(
        sim.ledger, round_index, selected, accuracies, val_accuracies, model_losses, extractor_losses,
        sim.boundary.transmitted("down", mark), sim.boundary.transmitted("up", mark), flops,
        time.perf_counter() - started, enhanced_losses=enhanced_losses, original_losses=original_losses,
    )


def run_standalone_round(sim: Simulation, round_index: int) -> RoundReport:
    """Every client trains on its own data; nothing is transmitted"""
    started = time.perf_counter()
    results = _parallel(sim.workers)(
        delayed(standalone_update)(client, sim.dataset, sim.hp, round_index) for client in sim.clients
    )
    flops = 0
    model_losses = []
    for client, (model, stats) in zip(sim.clients, results):
        client.model = model
        flops += stats.samples * 3 * sim.forward_flops(model.spec)
        model_losses.append(stats.mean_loss)
    accuracies, val_accuracies = sim.evaluate_all([c.model for c in sim.clients])
    return record_round(
        sim.ledger, round_index, list(range(sim.hp.num_clients)), accuracies, val_accuracies,
        model_losses, [None] * sim.hp.num_clients, 0, 0, flops, time.perf_counter() - started,
    )


def run_fedavg_round(sim: Simulation, round_index: int) -> RoundReport:
    """Homogeneous FedAvg: whole models are broadcast, trained and averaged"""
    started = time.perf_counter()
    selected = sim.sample(round_index)
    mark = len(sim.boundary.crossings)
    global_model = sim.global_model
    for k in selected:
        sim.boundary.cross(global_model.params, "down", k)
    results = _parallel(sim.workers)(
        delayed(standalone_update)(sim.clients[k], sim.dataset, sim.hp, round_index, global_model)
        for k in selected
    )
    contributions = []
    flops = 0
    model_losses = [None] * sim.hp.num_clients
    for k, (model, stats) in zip(selected, results):
        client = sim.clients[k]
        contributions.append((k, sim.boundary.cross(model.params, "up", k), client.num_train))
        flops += stats.samples * 3 * sim.forward_flops(model.spec)
        model_losses[k] = stats.mean_loss
    sim.global_model = global_model.with_params(aggregate_params(contributions))
    for client in sim.clients:
        client.model = sim.global_model
    accuracies, val_accuracies = sim.evaluate_all([c.model for c in sim.clients])
    return record_round(
        sim.ledger, round_index, selected, accuracies, val_accuracies, model_losses,
        [None] * sim.hp.num_clients, sim.boundary.transmitted("down", mark),
        sim.boundary.transmitted("up", mark), flops, time.perf_counter() - started,
    )


def assign_variants(config: ExperimentConfig) -> List[int]:
    if config.variants == "uniform":
        rng = seeding.derive_rng(config.seed, seeding.VARIANTS)
        return [int(v) for v in rng.integers(1, 6, size=config.num_clients)]
    return [int(config.variants)] * config.num_clients


def make_partitions(config: ExperimentConfig, dataset: Dataset) -> List[ClientPartition]:
    rng = seeding.derive_rng(config.seed, seeding.PARTITION)
    return partition_noniid(dataset, config.num_clients, config.classes_per_client, rng)


def build_simulation(config: ExperimentConfig, dataset: Dataset, workers: Optional[int] = None) -> Simulation:
    hp = Hyperparams.from_config(config)
    variants = assign_variants(config)
    if config.mode == Mode.FEDAVG and len(set(variants)) != 1:
        raise ConfigError("variants", "fedavg needs every client on the same variant")
    partitions = make_partitions(config, dataset)

    clients = []
    for k, (variant, partition) in enumerate(zip(variants, partitions)):
        spec = build_cnn(variant, dataset.num_classes, dataset.image_shape)
        params = init_params(spec, seeding.derive_rng(config.seed, seeding.CLIENT_INIT, k))
        clients.append(ClientState(k, variant, Model(spec, params), partition))

    sim = Simulation(config.mode, hp, dataset, clients, workers=workers or config.workers)
    if config.mode == Mode.PFEDES:
        sim.extractor_spec = build_extractor(dataset.image_shape, config.extractor_kernel, config.extractor_channels)
        theta = init_params(sim.extractor_spec, seeding.derive_rng(config.seed, seeding.SERVER_INIT))
        sim.server = ServerState(theta)
        sim.boundary = Boundary(sim.extractor_spec.manifest)
        logger.info(
            f"Extractor has {count_params(sim.extractor_spec)} params; client variants {variants}"
        )
    elif config.mode == Mode.FEDAVG:
        spec = clients[0].model.spec
        sim.global_model = Model(spec, init_params(spec, seeding.derive_rng(config.seed, seeding.SERVER_INIT)))
        sim.boundary = Boundary(spec.manifest)
        for client in clients:
            client.model = sim.global_model
    return sim


_ROUND_RUNNERS = {
    Mode.PFEDES: run_round,
    Mode.STANDALONE: run_standalone_round,
    Mode.FEDAVG: run_fedavg_round,
}


def run_training(mode: Mode, config: ExperimentConfig, dataset: Dataset,
                 workers: Optional[int] = None) -> TrainingResult:
    """Run ``config.rounds`` rounds of ``mode`` and return the reports and final models"""
    mode = Mode(mode)
    if mode != config.mode:
        config = config.copy(update={"mode": mode})
    sim = build_simulation(config, dataset, workers)
    runner = _ROUND_RUNNERS[mode]
    reports = []
    for t in range(1, config.rounds + 1):
        report = runner(sim, t)
        reports.append(report)
        logger.info(
            f"[{mode.value}] round {t}/{config.rounds}: average accuracy {report.average_accuracy:.4f}, "
            f"params {report.params_down + report.params_up}, flops {report.flops}"
        )
    return TrainingResult(
        mode=mode,
        reports=reports,
        ledger=sim.ledger,
        clients=sim.clients,
        extractor_spec=sim.extractor_spec,
        extractor=sim.server.extractor if sim.server else None,
        boundary=sim.boundary,
    )
