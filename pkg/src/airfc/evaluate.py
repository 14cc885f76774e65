"""Imitation quality and classification accuracy over random channels.

The downstream task is a synthetic Gaussian-mixture classification problem:
a digital fully-connected layer (ridge regression to one-hot targets) is the
baseline and the target map, and the relayed chain is scored by how much
accuracy survives the over-the-air implementation of that layer.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import (DEFAULT_PATHLOSS_TABLE, PathlossTable, default_links,
                      generate_channel_set, generate_topology)
from .errors import InvalidArgument, NumericalGuardWarning
from .serialization import stable_int_hash
from .solver import AoConfig, run_ao
from .system import (AirFcParams, NoiseModel, PowerBudget, effective_channel,
                     max_power_ratio, simulate_forward)


@dataclass
class SyntheticTask:
    """Whitened Gaussian-mixture classification data.

    Features are complex N-vectors whitened so the empirical train second
    moment is the identity (the transmit chain assumes unit-power streams).
    """

    x_train: np.ndarray
    labels_train: np.ndarray
    x_test: np.ndarray
    labels_test: np.ndarray
    class_means: np.ndarray
    spread: float
    seed: int

    @property
    def n_features(self) -> int:
        return self.x_train.shape[0]

    @property
    def n_classes(self) -> int:
        return self.class_means.shape[1]


@dataclass
class DigitalBaseline:
    """Trained linear layer y = W x + b and its test accuracy."""

    w: np.ndarray
    b: np.ndarray
    reported_accuracy: float


def make_synthetic_task(n_features: int, n_classes: int, samples: int,
                        spread: float, seed: int,
                        test_fraction: float = 0.25) -> SyntheticTask:
    """Draw a balanced complex Gaussian-mixture dataset and whiten it.

    Class means are independent unit-norm complex vectors; each sample is its
    class mean plus spread-scaled circular Gaussian noise. Whitening uses the
    empirical second moment of the train split. Deterministic under seed.
    """
    if n_classes < 2:
        raise InvalidArgument("need at least two classes")
    if n_features < n_classes:
        raise InvalidArgument("need at least as many features as classes")
    if spread <= 0:
        raise InvalidArgument("spread must be positive")
    if not 0.0 < test_fraction < 1.0:
        raise InvalidArgument("test_fraction must be in (0, 1)")
    n_test = int(round(samples * test_fraction))
    n_train = samples - n_test
    if n_train < n_classes or n_test < n_classes:
        raise InvalidArgument("too few samples for the requested split")

    rng = np.random.default_rng(seed)
    means = (rng.standard_normal((n_features, n_classes))
             + 1j * rng.standard_normal((n_features, n_classes)))
    means /= np.linalg.norm(means, axis=0, keepdims=True)

    def draw_split(count: int) -> tuple[np.ndarray, np.ndarray]:
        labels = np.arange(count) % n_classes
        rng.shuffle(labels)
        noise = (rng.standard_normal((n_features, count))
                 + 1j * rng.standard_normal((n_features, count))) / np.sqrt(2)
        return means[:, labels] + spread * noise, labels

    x_train, y_train = draw_split(n_train)
    x_test, y_test = draw_split(n_test)

    # Whiten with the train split's second moment so E[x x^H] = I holds on
    # the data actually transmitted.
    second = (x_train @ x_train.conj().T) / n_train
    evals, basis = np.linalg.eigh(0.5 * (second + second.conj().T))
    evals = np.maximum(evals, evals[-1] * 1e-12)
    whiten = basis @ np.diag(evals ** -0.5) @ basis.conj().T
    return SyntheticTask(
        x_train=whiten @ x_train, labels_train=y_train,
        x_test=whiten @ x_test, labels_test=y_test,
        class_means=whiten @ means, spread=float(spread), seed=int(seed))


def decode_classes(outputs: np.ndarray, n_classes: int, phase: float = 0.0,
                   tie_break: str = "lowest",
                   rng: np.random.Generator | int | None = None) -> np.ndarray:
    """Argmax class decisions from the first n_classes output coordinates.

    The outputs are first derotated by the given global phase and the real
    parts taken as logits. Exact ties go to the lowest class index, or to a
    seeded uniform choice with tie_break="random".
    """
    outputs = np.asarray(outputs)
    if outputs.ndim != 2 or outputs.shape[0] < n_classes:
        raise InvalidArgument("outputs must be (n_outputs >= n_classes, samples)")
    logits = np.real(np.exp(-1j * phase) * outputs[:n_classes, :])
    if tie_break == "lowest":
        return np.argmax(logits, axis=0)
    if tie_break != "random":
        raise InvalidArgument("tie_break must be 'lowest' or 'random'")
    rng = np.random.default_rng(rng)
    preds = np.empty(logits.shape[1], dtype=np.int64)
    for s in range(logits.shape[1]):
        column = logits[:, s]
        ties = np.flatnonzero(column == column.max())
        preds[s] = ties[0] if ties.size == 1 else rng.choice(ties)
    return preds


def train_digital_fc(task: SyntheticTask,
                     ridge_scale: float = 1e-3) -> DigitalBaseline:
    """Closed-form ridge regression to one-hot targets in the first C outputs.

    Fits W and b on the centered train split; the remaining N - C output
    coordinates regress to zero. Reported accuracy is argmax decoding on the
    test split with the same derotation rule used over the air.
    """
    n = task.n_features
    x = task.x_train
    targets = np.zeros((n, x.shape[1]), dtype=complex)
    targets[task.labels_train, np.arange(x.shape[1])] = 1.0

    x_mean = x.mean(axis=1, keepdims=True)
    t_mean = targets.mean(axis=1, keepdims=True)
    xc = x - x_mean
    tc = targets - t_mean
    gram = xc @ xc.conj().T
    alpha = ridge_scale * float(np.real(np.trace(gram))) / n
    w = None
    for _ in range(6):
        try:
            lhs = gram + alpha * np.eye(n)
            w = np.linalg.solve(lhs, xc @ tc.conj().T).conj().T
        except np.linalg.LinAlgError:
            w = None
        if w is not None and np.all(np.isfinite(w)):
            break
        warnings.warn(f"singular training Gram; ridge raised to {alpha * 10:.3e}",
                      NumericalGuardWarning)
        alpha *= 10.0
        w = None
    if w is None:
        raise InvalidArgument("training system unsolvable even under heavy ridge")
    b = (t_mean - w @ x_mean).reshape(-1)

    phase = float(np.angle(np.trace(w)))
    outputs = w @ task.x_test + b[:, None]
    preds = decode_classes(outputs, task.n_classes, phase)
    accuracy = float(np.mean(preds == task.labels_test))
    return DigitalBaseline(w=w, b=b, reported_accuracy=accuracy)


def imitation_nmse(realized: np.ndarray, w: np.ndarray) -> float:
    """Squared Frobenius misfit normalized by the target's squared norm."""
    if realized.shape != w.shape:
        raise InvalidArgument("realized map and target must share a shape")
    denom = float(np.linalg.norm(w, "fro") ** 2)
    if denom == 0.0:
        raise InvalidArgument("NMSE is undefined for a zero target")
    return float(np.linalg.norm(realized - w, "fro") ** 2) / denom


def evaluate_ota_accuracy(params: AirFcParams, channels, noise: NoiseModel,
                          baseline: DigitalBaseline, task: SyntheticTask,
                          n_noise_draws: int = 1,
                          rng: np.random.Generator | int | None = None,
                          tie_break: str = "lowest") -> float:
    """Classification accuracy of the over-the-air layer on the test split.

    Each test sample is pushed through the physical chain with fresh noise
    (``n_noise_draws`` independent passes over the split), the digital bias is
    added at the receiver, and decisions are decoded after derotating by the
    global phase of the realized map's trace.
    """
    if n_noise_draws < 1:
        raise InvalidArgument("n_noise_draws must be >= 1")
    rng = np.random.default_rng(rng)
    realized = params.f2 @ effective_channel(channels, params.gains) @ params.f1
    phase = float(np.angle(np.trace(realized)))
    hits = 0
    total = 0
    for _ in range(n_noise_draws):
        received = simulate_forward(params, channels, noise, task.x_test, rng)
        outputs = received + baseline.b[:, None]
        preds = decode_classes(outputs, task.n_classes, phase, tie_break, rng)
        hits += int(np.sum(preds == task.labels_test))
        total += task.labels_test.size
    return hits / total


@dataclass(frozen=True)
class GridPoint:
    """One sweep configuration: chain depth, group size, power, geometry."""

    n_groups: int
    relays_per_group: int
    p_relay_w: float
    d_max_m: float
    direct_link: bool

    def label(self) -> str:
        direct = "on" if self.direct_link else "off"
        return (f"L={self.n_groups},K={self.relays_per_group},"
                f"P={self.p_relay_w:g}W,D={self.d_max_m:g}m,direct={direct}")


@dataclass
class TrialRecord:
    """Outcome of one channel realization at one grid point."""

    trial: int
    seed_key: tuple[int, int, int]
    nmse: float = float("nan")
    accuracy: float = float("nan")
    imitation_error: float = float("nan")
    noise_penalty: float = float("nan")
    objective_total: float = float("nan")
    iterations: int = 0
    max_power_ratio: float = float("nan")
    termination: str = ""
    error: str | None = None


@dataclass
class SweepResult:
    """Aggregated metrics for one grid point."""

    point: GridPoint
    records: list[TrialRecord]
    mean_accuracy: float
    std_accuracy: float
    mean_nmse: float
    std_nmse: float
    n_failed: int

    @property
    def n_trials(self) -> int:
        return len(self.records)

    @property
    def partial(self) -> bool:
        return self.n_failed > 0


@dataclass(frozen=True)
class SweepSettings:
    """Everything a sweep shares across grid points and trials."""

    n_tx: int
    n_rx: int
    f_c_hz: float = 28e9
    heights_m: tuple[float, float, float] = (5.0, 5.0, 1.5)
    rician_kappa: float = 1.0
    relay_relay_los: str = "probabilistic"
    noise_variance_w: float = 1.194e-12
    p_max_tx_w: float = 8.0
    ao: AoConfig = field(default_factory=AoConfig)
    n_noise_draws: int = 1
    pathloss_table: PathlossTable = DEFAULT_PATHLOSS_TABLE


def trial_seed_key(base_seed: int, point: GridPoint, trial: int
                   ) -> tuple[int, int, int]:
    """Seed-sequence entropy for one trial.

    Deliberately keyed only on chain depth, group size, and area size: grid
    points that differ in relay power or the direct-link flag reuse the same
    channel realizations, so those comparisons are paired per trial.
    """
    text = f"{point.n_groups}|{point.relays_per_group}|{point.d_max_m!r}"
    return (int(base_seed), stable_int_hash(text), int(trial))


def run_trial(point: GridPoint, trial: int, base_seed: int,
              task: SyntheticTask, baseline: DigitalBaseline,
              settings: SweepSettings) -> TrialRecord:
    """One realization: drop a topology, draw channels, optimize, evaluate.

    Failures are captured in the record instead of raised so a sweep never
    aborts on a single bad realization.
    """
    key = trial_seed_key(base_seed, point, trial)
    record = TrialRecord(trial=trial, seed_key=key)
    try:
        rng = np.random.default_rng(np.random.SeedSequence(list(key)))
        rng_topo, rng_chan, rng_eval = rng.spawn(3)
        topology = generate_topology(point.d_max_m, point.n_groups,
                                     point.relays_per_group,
                                     settings.heights_m, rng_topo)
        links = default_links(settings.rician_kappa)
        if settings.relay_relay_los != "probabilistic":
            links["relay-relay"] = replace(links["relay-relay"],
                                           los_state=settings.relay_relay_los)
        channels = generate_channel_set(
            topology, links, settings.n_tx, settings.n_rx, settings.f_c_hz,
            point.direct_link, rng_chan, settings.pathloss_table)
        noise = NoiseModel.uniform(settings.noise_variance_w, point.n_groups)
        budget = PowerBudget.uniform(settings.p_max_tx_w, point.p_relay_w,
                                     channels.group_sizes)
        params, trace = run_ao(channels, baseline.w, noise, budget, settings.ao)

        realized = (params.f2 @ effective_channel(channels, params.gains)
                    @ params.f1)
        record.nmse = imitation_nmse(realized, baseline.w)
        record.accuracy = evaluate_ota_accuracy(
            params, channels, noise, baseline, task,
            settings.n_noise_draws, rng_eval)
        final = trace.objectives[-1]
        record.imitation_error = final.imitation_error
        record.noise_penalty = final.noise_penalty
        record.objective_total = final.total
        record.iterations = trace.iterations
        record.max_power_ratio = max_power_ratio(params, channels, noise,
                                                 budget)
        record.termination = trace.termination
    except Exception as exc:  # single-trial failures must not kill the sweep
        record.error = f"{type(exc).__name__}: {exc}"
    return record


def _trial_job(job) -> tuple[int, TrialRecord]:
    point_index, point, trial, base_seed, task, baseline, settings = job
    return point_index, run_trial(point, trial, base_seed, task, baseline,
                                  settings)


def _aggregate(point: GridPoint, records: list[TrialRecord]) -> SweepResult:
    accs = [r.accuracy for r in records if r.error is None]
    nmses = [r.nmse for r in records if r.error is None]

    def mean(vals):
        return float(np.mean(vals)) if vals else float("nan")

    def std(vals):
        return float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0

    return SweepResult(point=point, records=records,
                       mean_accuracy=mean(accs), std_accuracy=std(accs),
                       mean_nmse=mean(nmses), std_nmse=std(nmses),
                       n_failed=sum(1 for r in records if r.error is not None))


def monte_carlo_sweep(points: list[GridPoint], trials: int, base_seed: int,
                      task: SyntheticTask, baseline: DigitalBaseline,
                      settings: SweepSettings, workers: int = 1,
                      progress=None) -> list[SweepResult]:
    """Run every grid point over independent channel realizations.

    Fully deterministic under base_seed regardless of worker count: per-trial
    RNG streams are derived from (base_seed, point, trial) and results are
    reassembled in grid order.
    """
    if trials < 1:
        raise InvalidArgument("trials must be >= 1")
    if workers < 1:
        raise InvalidArgument("workers must be >= 1")
    jobs = [(i, point, t, base_seed, task, baseline, settings)
            for i, point in enumerate(points) for t in range(trials)]

    per_point: dict[int, list[TrialRecord]] = {i: [] for i in range(len(points))}
    if workers == 1:
        outcomes = map(_trial_job, jobs)
    else:
        executor = ProcessPoolExecutor(max_workers=workers)
        outcomes = executor.map(_trial_job, jobs,
                                chunksize=max(1, len(jobs) // (workers * 4)))
    done = 0
    for point_index, record in outcomes:
        per_point[point_index].append(record)
        done += 1
        if progress is not None:
            progress(done, len(jobs))
    if workers > 1:
        executor.shutdown()

    results = []
    for i, point in enumerate(points):
        records = sorted(per_point[i], key=lambda r: r.trial)
        results.append(_aggregate(point, records))
    return results
