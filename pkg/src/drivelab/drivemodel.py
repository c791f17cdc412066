"""The driving model (generator), the maneuver discriminator, the composite
loss (accuracy + comfort + adversarial human-likeness), and training.

The generator maps one input window to one (steering, speed) prediction half
a second ahead; a drivelet is the sequence of 5 such predictions from 5
consecutive windows, optimized jointly. The discriminator scores a
normalized drivelet (s-block then v-block, 10 values) as human vs machine.
Training alternates one discriminator step and one generator step per batch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constants import (DISC_INPUT_LEN, DRIVELET_LEN, EGO_VEC_LEN, GRU_HIDDEN,
                        HEADING_VEC_LEN, MAP_BLOCK_FEATURES,
                        MAP_HISTORY_SAMPLES, RATE_HZ, SPEED_RANGE_KMH,
                        STEER_RANGE_DEG)
from . import tensorcore as tc


@dataclass
class LossWeights:
    speed_weight: float = 1.0     # weight of the speed term inside each loss
    comfort_weight: float = 0.1   # weight of the comfort loss
    human_weight: float = 1.0     # weight of the adversarial loss
    rate_hz: float = RATE_HZ

    def __post_init__(self):
        if min(self.speed_weight, self.comfort_weight, self.human_weight) < 0:
            raise ValueError("loss weights must be >= 0")


class Generator:
    """Single-step driving policy: feature window -> (steering deg, speed km/h).

    Outputs are squashed into their valid ranges: steering = 720 tanh(z),
    speed = 180 sigmoid(z). With use_map=False the map branches are absent
    and the model sees only the ego state.
    """

    def __init__(self, rng, use_map: bool = True, fusion_width: int = 32):
        self.use_map = use_map
        fusion_in = 10
        if use_map:
            self.enc_hist = tc.GruEncoder(rng, MAP_BLOCK_FEATURES, GRU_HIDDEN)
            self.enc_junction = tc.MLP(rng, [HEADING_VEC_LEN, 10, 10, 10], "tanh")
            fusion_in += GRU_HIDDEN + 10
        self.enc_ego = tc.MLP(rng, [EGO_VEC_LEN, 10], "tanh")
        self.fusion = tc.Dense(rng, fusion_in, fusion_width, "tanh")
        # small head init keeps initial outputs near mid-range, so early
        # training is not dominated by unwinding init noise
        self.head_steer = tc.Dense(rng, fusion_width, 1, "identity", scale=0.02)
        self.head_speed = tc.Dense(rng, fusion_width, 1, "identity", scale=0.02)

    def forward(self, m14, m56, ego):
        """Batched forward. m14 (B,20,8), m56 (B,7), ego (B,9) -> (B,2) + tape."""
        ego_out, ego_tape = self.enc_ego.forward(ego)
        parts, tapes = [ego_out], {"ego": ego_tape}
        if self.use_map:
            hist_out, hist_tape = self.enc_hist.forward(m14)
            junc_out, junc_tape = self.enc_junction.forward(
                np.asarray(m56, dtype=float) / 180.0)
            parts = [hist_out, junc_out, ego_out]
            tapes.update(hist=hist_tape, junction=junc_tape)
        fused_in = np.concatenate(parts, axis=1)
        fused, fuse_tape = self.fusion.forward(fused_in)
        zs, zs_tape = self.head_steer.forward(fused)
        zv, zv_tape = self.head_speed.forward(fused)
        steer = STEER_RANGE_DEG * np.tanh(zs[:, 0])
        speed = SPEED_RANGE_KMH * tc.sigmoid(zv[:, 0])
        tapes.update(fuse=fuse_tape, zs=zs_tape, zv=zv_tape,
                     steer=steer, speed=speed,
                     split=[p.shape[1] for p in parts])
        return np.column_stack([steer, speed]), tapes

    def backward(self, tape, dout):
        """Gradients of a scalar loss given d loss / d (steering, speed)."""
        dout = np.asarray(dout, dtype=float)
        th = tape["steer"] / STEER_RANGE_DEG
        sg = tape["speed"] / SPEED_RANGE_KMH
        dzs = (dout[:, 0] * STEER_RANGE_DEG * (1.0 - th * th))[:, None]
        dzv = (dout[:, 1] * SPEED_RANGE_KMH * sg * (1.0 - sg))[:, None]
        dfused_s, g_s = self.head_steer.backward(tape["zs"], dzs)
        dfused_v, g_v = self.head_speed.backward(tape["zv"], dzv)
        dfused_in, g_f = self.fusion.backward(tape["fuse"], dfused_s + dfused_v)
        grads = {f"head_s.{k}": v for k, v in g_s.items()}
        grads.update({f"head_v.{k}": v for k, v in g_v.items()})
        grads.update({f"fusion.{k}": v for k, v in g_f.items()})
        splits = np.cumsum(tape["split"])[:-1]
        chunks = np.split(dfused_in, splits, axis=1)
        if self.use_map:
            _, g_h = self.enc_hist.backward(tape["hist"], chunks[0])
            _, g_j = self.enc_junction.backward(tape["junction"], chunks[1])
            grads.update({f"hist.{k}": v for k, v in g_h.items()})
            grads.update({f"junction.{k}": v for k, v in g_j.items()})
        _, g_e = self.enc_ego.backward(tape["ego"], chunks[-1])
        grads.update({f"ego.{k}": v for k, v in g_e.items()})
        return grads

    def params(self):
        out = {}
        if self.use_map:
            out.update({f"hist.{k}": v for k, v in self.enc_hist.params().items()})
            out.update({f"junction.{k}": v for k, v in self.enc_junction.params().items()})
        out.update({f"ego.{k}": v for k, v in self.enc_ego.params().items()})
        out.update({f"fusion.{k}": v for k, v in self.fusion.params().items()})
        out.update({f"head_s.{k}": v for k, v in self.head_steer.params().items()})
        out.update({f"head_v.{k}": v for k, v in self.head_speed.params().items()})
        return out


class Discriminator:
    """Maneuver classifier: drivelet (s-block then v-block, 10 values) -> P(human).

    Inputs are standardized with per-channel stats before the network; the
    default stats scale by the full control ranges, and training replaces
    them with z-scores of the human drivelets so the two control channels
    carry comparable weight.
    """

    def __init__(self, rng):
        self.net = tc.MLP(rng, [DISC_INPUT_LEN, 10, 10, 10, 1], "tanh",
                          out_activation="identity")
        self.in_mean = np.zeros(DISC_INPUT_LEN)
        self.in_std = np.array([STEER_RANGE_DEG] * DRIVELET_LEN
                               + [SPEED_RANGE_KMH] * DRIVELET_LEN)

    def set_input_stats(self, steer_mean, steer_std, speed_mean, speed_std):
        self.in_mean = np.array([steer_mean] * DRIVELET_LEN
                                + [speed_mean] * DRIVELET_LEN)
        self.in_std = np.array([max(steer_std, 1e-9)] * DRIVELET_LEN
                               + [max(speed_std, 1e-9)] * DRIVELET_LEN)

    def forward(self, x):
        """x: raw drivelet vectors (B, 10). Returns (P(human), tape)."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[None, :]
        if x.shape[1] != DISC_INPUT_LEN:
            raise ValueError(f"discriminator expects {DISC_INPUT_LEN} inputs")
        z, tape = self.net.forward((x - self.in_mean) / self.in_std)
        p = tc.sigmoid(z[:, 0])
        return p, (tape, p)

    def backward(self, tape, dp):
        """Input gradients are w.r.t. the raw (unstandardized) drivelet."""
        net_tape, p = tape
        dz = (np.asarray(dp, dtype=float) * p * (1.0 - p))[:, None]
        dx, grads = self.net.backward(net_tape, dz)
        return dx / self.in_std, grads

    def params(self):
        return self.net.params()


def drivelet_vector(pred: np.ndarray) -> np.ndarray:
    """(O,2) drivelet -> raw 10-vector: s-block then v-block."""
    pred = np.asarray(pred, dtype=float)
    return np.concatenate([pred[:, 0], pred[:, 1]])


def predict_drivelet(gen: Generator, windows) -> np.ndarray:
    """Apply the single-step generator to O consecutive windows; (O, 2) result."""
    if len(windows) != DRIVELET_LEN:
        raise ValueError(f"need exactly {DRIVELET_LEN} windows, got {len(windows)}")
    m14 = np.stack([w.m14.reshape(MAP_HISTORY_SAMPLES, MAP_BLOCK_FEATURES)
                    for w in windows])
    m56 = np.stack([w.m56 for w in windows])
    ego = np.stack([w.ego for w in windows])
    out, _ = gen.forward(m14, m56, ego)
    return out


def loss_accuracy(pred, truth, speed_weight: float = 1.0):
    """Summed SmoothL1 of steering and (weighted) speed over a drivelet."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape:
        raise ValueError("prediction / truth shape mismatch")
    vals, dvals = tc.huber(pred - truth)
    w = np.array([1.0, speed_weight])
    return float((vals * w).sum()), dvals * w


def second_difference_terms(series: np.ndarray, rate_hz: float):
    """|x[i-1] - 2 x[i] + x[i+1]| / dt^2 per interior index, with gradients."""
    series = np.asarray(series, dtype=float)
    n = len(series)
    scale = rate_hz * rate_hz
    diffs = (series[:-2] - 2.0 * series[1:-1] + series[2:]) * scale
    terms = np.abs(diffs)
    grad = np.zeros(n)
    signs = np.sign(diffs) * scale
    grad[:-2] += signs
    grad[1:-1] += -2.0 * signs
    grad[2:] += signs
    return terms, grad


def loss_comfort(pred, rate_hz: float, speed_weight: float = 1.0):
    """Summed second-difference magnitudes of the predicted controls."""
    pred = np.asarray(pred, dtype=float)
    if len(pred) < 3:
        raise ValueError("comfort loss needs at least 3 consecutive predictions")
    s_terms, s_grad = second_difference_terms(pred[:, 0], rate_hz)
    v_terms, v_grad = second_difference_terms(pred[:, 1], rate_hz)
    loss = float(s_terms.sum() + speed_weight * v_terms.sum())
    return loss, np.column_stack([s_grad, speed_weight * v_grad])


def loss_human(disc: Discriminator, pred):
    """Adversarial loss -log P(human); gradient flows back into the drivelet."""
    pred = np.asarray(pred, dtype=float)
    p, tape = disc.forward(drivelet_vector(pred))
    loss, dloss_dp = tc.bce(p[0], 1.0)
    dx, _ = disc.backward(tape, np.array([dloss_dp]))
    O = len(pred)
    return loss, np.column_stack([dx[0, :O], dx[0, O:]])


def composite_loss(gen: Generator, disc: Discriminator | None, windows, truth,
                   weights: LossWeights):
    """Total drivelet loss, its components, and gradients w.r.t. gen params."""
    m14 = np.stack([w.m14.reshape(MAP_HISTORY_SAMPLES, MAP_BLOCK_FEATURES)
                    for w in windows])
    m56 = np.stack([w.m56 for w in windows])
    ego = np.stack([w.ego for w in windows])
    pred, tape = gen.forward(m14, m56, ego)
    l_acc, d_acc = loss_accuracy(pred, truth, weights.speed_weight)
    dpred = d_acc.copy()
    l_com = 0.0
    if weights.comfort_weight > 0:
        l_com, d_com = loss_comfort(pred, weights.rate_hz, weights.speed_weight)
        dpred += weights.comfort_weight * d_com
    l_hum = 0.0
    if weights.human_weight > 0 and disc is not None:
        l_hum, d_hum = loss_human(disc, pred)
        dpred += weights.human_weight * d_hum
    total = l_acc + weights.comfort_weight * l_com + weights.human_weight * l_hum
    grads = gen.backward(tape, dpred)
    return total, {"accuracy": l_acc, "comfort": l_com, "human": l_hum}, grads


# ---------------------------------------------------------------------------
# training


@dataclass
class SequenceData:
    """Aligned per-step model inputs and prediction targets for one route.

    Row i holds the window at step i of the usable region and target[i], the
    ground truth (steering, speed) at the moment that window predicts.
    """
    m14: np.ndarray     # (N, 20, 8)
    m56: np.ndarray     # (N, 7)
    ego: np.ndarray     # (N, 9)
    target: np.ndarray  # (N, 2)

    def __len__(self):
        return len(self.target)

    def drivelet_starts(self):
        return range(0, len(self.target) - DRIVELET_LEN + 1)


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log_rows: list = field(default_factory=list)  # per batch


def _gather(sequences, index):
    """Stack drivelet windows for a batch of (sequence, start) pairs."""
    m14, m56, ego, tgt = [], [], [], []
    for si, t in index:
        seq = sequences[si]
        sl = slice(t, t + DRIVELET_LEN)
        m14.append(seq.m14[sl])
        m56.append(seq.m56[sl])
        ego.append(seq.ego[sl])
        tgt.append(seq.target[sl])
    B = len(index)
    return (np.concatenate(m14).reshape(B * DRIVELET_LEN, MAP_HISTORY_SAMPLES,
                                        MAP_BLOCK_FEATURES),
            np.concatenate(m56), np.concatenate(ego),
            np.stack(tgt))


def _batch_disc_inputs(pred_b: np.ndarray) -> np.ndarray:
    """(B, O, 2) drivelets -> (B, 10) raw discriminator inputs."""
    return np.concatenate([pred_b[:, :, 0], pred_b[:, :, 1]], axis=1)


def train(sequences, weights: LossWeights | None = None, epochs: int = 1,
          batch_size: int = 16, seed: int = 0, use_map: bool = True,
          lr: float = 1e-4) -> TrainResult:
    """Alternating discriminator / generator optimization over drivelets."""
    weights = weights or LossWeights()
    for seq in sequences:
        if len(seq) < DRIVELET_LEN:
            raise ValueError("every sequence must cover at least one drivelet")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7124]))
    gen = Generator(rng, use_map=use_map)
    disc = Discriminator(rng)
    human = np.concatenate([seq.target for seq in sequences])
    disc.set_input_stats(float(human[:, 0].mean()), float(human[:, 0].std()),
                         float(human[:, 1].mean()), float(human[:, 1].std()))
    adam_g = tc.AdamState(lr=lr)
    adam_d = tc.AdamState(lr=lr)
    gen_params = gen.params()
    disc_params = disc.params()

    index = [(si, t) for si, seq in enumerate(sequences)
             for t in seq.drivelet_starts()]
    log_rows = []
    batch_no = 0
    adversarial = weights.human_weight > 0
    for _ in range(epochs):
        order = rng.permutation(len(index))
        for lo in range(0, len(order), batch_size):
            chunk = [index[i] for i in order[lo:lo + batch_size]]
            B = len(chunk)
            m14, m56, ego, truth_b = _gather(sequences, chunk)
            pred_flat, tape = gen.forward(m14, m56, ego)
            pred_b = pred_flat.reshape(B, DRIVELET_LEN, 2)

            disc_acc = math.nan
            if adversarial:
                x = np.concatenate([_batch_disc_inputs(truth_b),
                                    _batch_disc_inputs(pred_b)])
                labels = np.concatenate([np.ones(B), np.zeros(B)])
                p, d_tape = disc.forward(x)
                d_loss, dp = tc.bce_batch(p, labels)
                if not math.isfinite(d_loss):
                    raise RuntimeError("non-finite discriminator loss")
                _, d_grads = disc.backward(d_tape, dp)
                tc.adam_step(disc_params, d_grads, adam_d)
                disc_acc = float(np.mean((p > 0.5) == (labels > 0.5)))

            # generator step: mean over the batch of per-drivelet losses
            vals, d_acc_flat = tc.huber(pred_flat - truth_b.reshape(-1, 2))
            w = np.array([1.0, weights.speed_weight])
            l_acc = float((vals * w).sum() / B)
            dpred = d_acc_flat * w / B

            l_com = 0.0
            if weights.comfort_weight > 0:
                scale = weights.rate_hz ** 2
                diffs = (pred_b[:, :-2] - 2.0 * pred_b[:, 1:-1] + pred_b[:, 2:]) * scale
                l_com = float((np.abs(diffs) * w).sum() / B)
                signs = np.sign(diffs) * scale * w / B
                d_com = np.zeros_like(pred_b)
                d_com[:, :-2] += signs
                d_com[:, 1:-1] -= 2.0 * signs
                d_com[:, 2:] += signs
                dpred += (weights.comfort_weight * d_com).reshape(-1, 2)

            l_hum = 0.0
            if adversarial:
                xg = _batch_disc_inputs(pred_b)
                pg, g_tape = disc.forward(xg)
                l_hum, dpg = tc.bce_batch(pg, np.ones(B))
                dxg, _ = disc.backward(g_tape, weights.human_weight * dpg)
                d_hum = np.stack([dxg[:, :DRIVELET_LEN],
                                  dxg[:, DRIVELET_LEN:]], axis=2)
                dpred += d_hum.reshape(-1, 2)

            for name, value in (("accuracy", l_acc), ("comfort", l_com),
                                ("human", l_hum)):
                if not math.isfinite(value):
                    raise RuntimeError(f"non-finite {name} loss in batch {batch_no}")
            g_grads = gen.backward(tape, dpred)
            tc.adam_step(gen_params, g_grads, adam_g)
            log_rows.append((batch_no, l_acc, l_com, l_hum, disc_acc))
            batch_no += 1
    return TrainResult(gen, disc, log_rows)


def predict_series(gen: Generator, seq: SequenceData, chunk: int = 2048) -> np.ndarray:
    """Open-loop predictions for every step of a sequence; (N, 2)."""
    outs = []
    for lo in range(0, len(seq), chunk):
        sl = slice(lo, min(lo + chunk, len(seq)))
        out, _ = gen.forward(seq.m14[sl], seq.m56[sl], seq.ego[sl])
        outs.append(out)
    return np.concatenate(outs) if outs else np.zeros((0, 2))


def save_models(path, gen: Generator, disc: Discriminator, meta=None) -> None:
    params = {f"gen.{k}": v for k, v in gen.params().items()}
    params.update({f"disc.{k}": v for k, v in disc.params().items()})
    params["disc_stats.in_mean"] = disc.in_mean
    params["disc_stats.in_std"] = disc.in_std
    m = {"use_map": gen.use_map}
    m.update(meta or {})
    tc.save_params(path, params, m)


def load_models(path):
    loaded, meta = tc.load_params(path)
    rng = np.random.default_rng(0)
    gen = Generator(rng, use_map=bool(meta.get("use_map", True)))
    disc = Discriminator(rng)
    disc.in_mean = loaded.pop("disc_stats.in_mean")
    disc.in_std = loaded.pop("disc_stats.in_std")
    tc.set_params(gen.params(), {k[4:]: v for k, v in loaded.items()
                                 if k.startswith("gen.")})
    tc.set_params(disc.params(), {k[5:]: v for k, v in loaded.items()
                                  if k.startswith("disc.")})
    return gen, disc, meta
