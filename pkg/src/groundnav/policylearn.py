"""Learning-based navigation policy: behavior cloning of the rule-based expert.

A small fully-connected network maps a 21-value summary of the policy
input (16 forward sector clearances, goal distance, target bearing as
sin/cos, current velocities) to a velocity command. The output heads are
bounded by construction — logistic for v, tanh for omega, scaled by the
robot limits — so any finite weights yield a limit-compliant command and
gradients stay informative near the limits.

Training is plain mini-batch SGD with momentum on the mean squared error
between normalized network outputs and normalized expert commands,
deterministic given the seed. grad_check verifies the hand-written
backpropagation against central finite differences over every parameter.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import RobotParams, Twist
from .errors import DimensionMismatch, NonFiniteLoss, ParseError, ValidationError
from .groundseg import CellState
from .localplanner import PolicyInput, PolicyOutput

N_SECTORS = 16
N_FEATURES = N_SECTORS + 5
GOAL_DISTANCE_CAP = 3.0
LAYER_SIZES = (N_FEATURES, 32, 32, 2)


def extract_features(pin: PolicyInput, robot: RobotParams) -> np.ndarray:
    """Encode a PolicyInput as the network's 21-value input, each in [-1, 1].

    Sector clearances cover the forward half-plane [-pi/2, pi/2) in 16
    equal slices; each holds the range (cell centers, robot frame) of the
    nearest obstacle cell in that slice, normalized by map_range, 1.0 when
    the slice holds no obstacle.
    """
    tmap = pin.tmap
    g = tmap.geometry
    map_range = g.origin.x + g.cols * g.resolution  # forward extent of the grid
    clearances = np.ones(N_SECTORS)
    rows, cols = np.nonzero(tmap.cells == CellState.OBSTACLE)
    if rows.size:
        cx = g.origin.x + (cols + 0.5) * g.resolution
        cy = g.origin.y + (rows + 0.5) * g.resolution
        bearing = np.arctan2(cy, cx)
        rng = np.hypot(cx, cy)
        in_front = (bearing >= -math.pi / 2) & (bearing < math.pi / 2)
        sector = np.floor((bearing[in_front] + math.pi / 2) / (math.pi / N_SECTORS)).astype(int)
        sector = np.clip(sector, 0, N_SECTORS - 1)
        np.minimum.at(clearances, sector, np.minimum(rng[in_front] / map_range, 1.0))

    dist, bearing = pin.target
    return np.concatenate([
        clearances,
        [
            min(pin.goal_distance, GOAL_DISTANCE_CAP) / GOAL_DISTANCE_CAP,
            math.sin(bearing),
            math.cos(bearing),
            min(max(pin.twist.v / robot.v_max, -1.0), 1.0),
            min(max(pin.twist.omega / robot.omega_max, -1.0), 1.0),
        ],
    ])


@dataclass
class MLPPolicy:
    """Feed-forward policy network 21 -> 32 -> 32 -> 2, tanh hidden layers.

    Raw outputs (o1, o2) map to commands via v = logistic(o1) * v_max and
    omega = tanh(o2) * omega_max.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    v_max: float
    omega_max: float

    def __post_init__(self):
        for w, b in zip(self.weights, self.biases):
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError("network weights must be finite")
            if w.shape[0] != b.shape[0]:
                raise DimensionMismatch("bias length does not match weight rows")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b


def init_policy(robot: RobotParams, seed: int, sizes=LAYER_SIZES) -> MLPPolicy:
    """Glorot-uniform initialization (+-sqrt(6 / (fan_in + fan_out))) from a seed."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPPolicy(weights, biases, robot.v_max, robot.omega_max)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _forward_normalized(net: MLPPolicy, x: np.ndarray):
    """Batched forward pass to normalized outputs (v_hat in (0,1), w_hat in (-1,1)).

    Returns the outputs plus the per-layer activations needed by backprop.
    """
    a = x
    acts = [a]
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if i == n_layers - 1 else np.tanh(z)
        acts.append(a)
    o = acts[-1]
    out = np.column_stack([_sigmoid(o[:, 0]), np.tanh(o[:, 1])])
    return out, acts


def forward(net: MLPPolicy, x: np.ndarray) -> Twist:
    """Run the network on one feature vector and map to a bounded command."""
    x = np.asarray(x, dtype=float)
    if x.shape != (net.sizes[0],):
        raise DimensionMismatch(f"expected {net.sizes[0]} features, got {x.shape}")
    out, _ = _forward_normalized(net, x[None, :])
    return Twist(float(out[0, 0]) * net.v_max, float(out[0, 1]) * net.omega_max)


def mse_loss(net: MLPPolicy, x: np.ndarray, target_norm: np.ndarray) -> float:
    """Mean over samples of 0.5 * sum of squared normalized-output errors."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.atleast_2d(np.asarray(target_norm, dtype=float))
    out, _ = _forward_normalized(net, x)
    return float(np.mean(0.5 * np.sum((out - t) ** 2, axis=1)))


def loss_and_gradients(net: MLPPolicy, x: np.ndarray, target_norm: np.ndarray):
    """Loss plus analytic gradients for every weight matrix and bias vector."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.atleast_2d(np.asarray(target_norm, dtype=float))
    out, acts = _forward_normalized(net, x)
    n = x.shape[0]
    loss = float(np.mean(0.5 * np.sum((out - t) ** 2, axis=1)))

    # head derivatives: d out / d o
    o = acts[-1]
    sig = out[:, 0]
    d_o = np.column_stack([
        (out[:, 0] - t[:, 0]) * sig * (1.0 - sig),
        (out[:, 1] - t[:, 1]) * (1.0 - out[:, 1] ** 2),
    ]) / n

    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.biases)
    delta = d_o
    for i in range(len(net.weights) - 1, -1, -1):
        grads_w[i] = delta.T @ acts[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i]) * (1.0 - acts[i] ** 2)
    return loss, grads_w, grads_b


def grad_check(net: MLPPolicy, x: np.ndarray, target_norm: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every parameter by +-h; the relative-error denominator is
    floored at 1e-8 so near-zero gradients compare sanely.
    """
    _, grads_w, grads_b = loss_and_gradients(net, x, target_norm)
    analytic = grads_w + grads_b
    params = list(net.weights) + list(net.biases)
    worst = 0.0
    for p, g in zip(params, analytic):
        flat_p = p.ravel()
        flat_g = np.asarray(g).ravel()
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + h
            up = mse_loss(net, x, target_norm)
            flat_p[j] = orig - h
            down = mse_loss(net, x, target_norm)
            flat_p[j] = orig
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(flat_g[j]), 1e-8)
            worst = max(worst, abs(fd - flat_g[j]) / denom)
    return worst


@dataclass
class Dataset:
    """Behavior-cloning corpus: feature rows paired with expert commands."""

    features: np.ndarray  # (N, 21)
    twists: np.ndarray  # (N, 2) raw expert (v, omega)
    robot: RobotParams
    seed: int = 0

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[1] != N_FEATURES:
            raise DimensionMismatch(f"features must be (N, {N_FEATURES})")
        if self.twists.shape != (self.features.shape[0], 2):
            raise DimensionMismatch("twists must be (N, 2)")

    def normalized_targets(self) -> np.ndarray:
        return np.column_stack([
            self.twists[:, 0] / self.robot.v_max,
            self.twists[:, 1] / self.robot.omega_max,
        ])


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch: int = 64
    epochs: int = 100
    momentum: float = 0.9
    seed: int = 0


def train(dataset: Dataset, hyper: TrainConfig) -> tuple[MLPPolicy, list[float]]:
    """Behavior-clone the expert dataset; returns the network and loss curve.

    Mini-batch SGD with momentum on the normalized-output MSE. Weight
    init, shuffling, and batching all derive from hyper.seed, so the loss
    curve is bit-reproducible. Raises NonFiniteLoss with diagnostics if
    the loss leaves the reals.
    """
    if dataset.features.shape[0] == 0:
        raise ValidationError("dataset must be non-empty")
    rng = np.random.default_rng(hyper.seed)
    net = init_policy(dataset.robot, seed=int(rng.integers(2**31 - 1)))
    targets = dataset.normalized_targets()
    n = dataset.features.shape[0]
    params = list(net.weights) + list(net.biases)
    velocity = [np.zeros_like(p) for p in params]
    losses: list[float] = []

    for epoch in range(hyper.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n, hyper.batch):
            sel = order[lo:lo + hyper.batch]
            loss, grads_w, grads_b = loss_and_gradients(net, dataset.features[sel], targets[sel])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, batch {n_batches}")
            grads = grads_w + grads_b
            for p, g, v in zip(params, grads, velocity):
                v *= hyper.momentum
                v -= hyper.lr * g
                p += v
            epoch_loss += loss
            n_batches += 1
        losses.append(epoch_loss / max(n_batches, 1))
    return net, losses


WEIGHT_MAGIC = "MLPW"
WEIGHT_VERSION = 1


def weights_to_text(net: MLPPolicy) -> str:
    """Serialize: header `MLPW 1 <n_layers> <sizes...>`, then one parameter
    per line (layer-major, row-major, weights before biases), 9 significant
    digits, LF endings."""
    sizes = net.sizes
    lines = [f"{WEIGHT_MAGIC} {WEIGHT_VERSION} {len(net.weights)} " + " ".join(str(s) for s in sizes)]
    for w, b in zip(net.weights, net.biases):
        for value in w.ravel():
            lines.append(format(float(value), ".9g"))
        for value in b.ravel():
            lines.append(format(float(value), ".9g"))
    return "\n".join(lines) + "\n"


def weights_from_text(text: str, robot: RobotParams) -> MLPPolicy:
    """Parse a weight file; raises ParseError with a format diagnostic."""
    lines = [ln for ln in text.splitlines()]
    if not lines:
        raise ParseError("empty weight file")
    header = lines[0].split()
    if len(header) < 4 or header[0] != WEIGHT_MAGIC:
        raise ParseError(f"bad header {lines[0]!r}: expected '{WEIGHT_MAGIC} <version> <n_layers> <sizes...>'")
    try:
        version, n_layers = int(header[1]), int(header[2])
        sizes = [int(s) for s in header[3:]]
    except ValueError:
        raise ParseError(f"non-integer field in header {lines[0]!r}") from None
    if version != WEIGHT_VERSION:
        raise ParseError(f"unsupported weight file version {version}")
    if len(sizes) != n_layers + 1:
        raise ParseError(f"header declares {n_layers} layers but {len(sizes)} sizes")
    expected = sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(n_layers))
    values = []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            values.append(float(raw))
        except ValueError:
            raise ParseError(f"bad parameter value {raw!r}", line=lineno) from None
    if len(values) != expected:
        raise ParseError(f"expected {expected} parameters, found {len(values)}")
    weights, biases = [], []
    pos = 0
    for i in range(n_layers):
        n_in, n_out = sizes[i], sizes[i + 1]
        weights.append(np.array(values[pos:pos + n_in * n_out]).reshape(n_out, n_in))
        pos += n_in * n_out
        biases.append(np.array(values[pos:pos + n_out]))
        pos += n_out
    return MLPPolicy(weights, biases, robot.v_max, robot.omega_max)


def save_weights(net: MLPPolicy, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(weights_to_text(net))


def load_weights(path, robot: RobotParams) -> MLPPolicy:
    with open(path, "r", encoding="utf-8") as fh:
        return weights_from_text(fh.read(), robot)


@dataclass
class LearnedPolicy:
    """Policy-interface adapter around a trained network."""

    net: MLPPolicy
    robot: RobotParams
    goal_tolerance: float = 0.15

    def __call__(self, pin: PolicyInput) -> PolicyOutput:
        if pin.goal_distance < self.goal_tolerance:
            return PolicyOutput(Twist(0.0, 0.0), done=True)
        return PolicyOutput(forward(self.net, extract_features(pin, self.robot)))


def collect_dataset(scenarios, seed: int = 0, timeout: float | None = None) -> Dataset:
    """Run the rule-based expert through scenarios, recording (features, command).

    Ticks where the expert raises AllBlocked (recovery) contribute nothing.
    Deterministic for a fixed scenario list and seed.
    """
    from .runtime import PipelineConfig, run_navigation

    features: list[np.ndarray] = []
    twists: list[tuple[float, float]] = []
    robot = None

    for spec in scenarios:
        robot = spec.robot

        def tap(pin: PolicyInput, out: PolicyOutput):
            if not out.done:
                features.append(extract_features(pin, robot))
                twists.append((out.cmd.v, out.cmd.omega))

        cfg = PipelineConfig(scenario=spec, timeout=timeout)
        run_navigation(cfg, on_policy_tick=tap)

    if robot is None or not features:
        raise ValidationError("no expert ticks recorded; need at least one scenario")
    return Dataset(np.array(features), np.array(twists), robot, seed=seed)
