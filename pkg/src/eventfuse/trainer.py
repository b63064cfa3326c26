"""Three-stage training: series-only pre-training on sliding windows, a
text-only warm-up on the event-aligned set, then joint multimodal
fine-tuning under the combined objective.

Each stage updates only its parameter groups; everything else stays
bit-identical. One Adam instance persists across stages (warm start), one
RNG drives batch order, and both live in the checkpoint, so an interrupted
run resumes bit-for-bit.
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import alignment as al
from . import gating
from . import kernels
from . import tensor as T
from .errors import ConfigError, DataError
from .model import (
    ALL_GROUPS,
    GROUP_DECODER,
    GROUP_TEXT_PROJ,
    GROUP_TS_PROJ,
    ForecastModel,
    ModelConfig,
)
from .tensor import NumericsError, Tape, Tensor

STAGE_TS = "ts_only"
STAGE_TEXT = "text_only"
STAGE_MM = "multimodal"

STAGE_GROUPS = {
    STAGE_TS: (GROUP_TS_PROJ, GROUP_DECODER),
    STAGE_TEXT: (GROUP_TEXT_PROJ, GROUP_DECODER),
    STAGE_MM: ALL_GROUPS,
}


@dataclass
class TrainConfig:
    stage1_epochs: int = 2
    stage2_epochs: int = 2
    stage3_epochs: int = 2
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_align: float = 0.2
    weight_gate: float = 0.1
    grad_clip: float = None
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (in-batch negatives)")
        if self.weight_align < 0 or self.weight_gate < 0:
            raise ConfigError("loss weights must be >= 0")
        if min(self.stage1_epochs, self.stage2_epochs, self.stage3_epochs) < 0:
            raise ConfigError("epoch counts must be >= 0")


@dataclass
class LossBundle:
    forecast: float
    instance_align: float
    token_align: float
    gate: float
    total: float
    mean_openness: float = float("nan")


class TrainLog:
    COLUMNS = (
        "stage",
        "epoch",
        "step",
        "loss_forecast",
        "loss_instance_align",
        "loss_token_align",
        "loss_gate",
        "loss_total",
        "mean_text_gate",
    )

    def __init__(self):
        self.rows = []

    def record(self, stage, epoch, step, bundle):
        self.rows.append(
            (
                stage,
                epoch,
                step,
                bundle.forecast,
                bundle.instance_align,
                bundle.token_align,
                bundle.gate,
                bundle.total,
                bundle.mean_openness,
            )
        )

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(",".join(self.COLUMNS) + "\n")
            for row in self.rows:
                fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def ensure(self, named_params):
        for name, p in named_params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def step(self, named_params, grad_lookup, clip=None):
        self.ensure(named_params)
        self.t += 1
        if clip is not None:
            sq = 0.0
            for name, p in named_params.items():
                g = grad_lookup(p)
                if g is not None:
                    sq += float(np.sum(g * g))
            norm = np.sqrt(sq)
            scale = clip / norm if norm > clip else 1.0
        for name, p in named_params.items():
            g = grad_lookup(p)
            if g is None:
                g = np.zeros_like(p.data)
            elif clip is not None and scale != 1.0:
                g = g * scale
            kernels.adam_update(
                p.data, g, self.m[name], self.v[name],
                self.lr, self.beta1, self.beta2, self.eps, self.t,
            )


@dataclass
class TrainState:
    model: ForecastModel
    adam: Adam
    rng: np.random.Generator
    train_config: TrainConfig
    step: int = 0
    stage: str = "init"
    stage_history: list = field(default_factory=lambda: ["init"])
    val_history: dict = field(default_factory=dict)

    def enter_stage(self, stage):
        if self.stage != stage:
            self.stage_history.append(f"{self.stage}->{stage}")
            self.stage = stage

    def completed(self, stage):
        return any(h.endswith("->" + stage) or h == stage for h in self.stage_history)


def init_state(model_config, scenario, train_config):
    model = ForecastModel(
        model_config,
        vocab_size=scenario.vocab_size,
        d_x=scenario.d_x,
        d_y=scenario.d_y,
        horizon=scenario.horizon,
        seed=train_config.seed,
    )
    adam = Adam(train_config.lr, train_config.beta1, train_config.beta2, train_config.adam_eps)
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence((train_config.seed, 2))))
    return TrainState(model=model, adam=adam, rng=rng, train_config=train_config)


# ---------------------------------------------------------------------------
# losses


def forecast_loss(preds, targets):
    """Mean MSE plus mean MAE over a batch of forecasts."""
    if len(preds) != len(targets) or not preds:
        raise T.ShapeError(f"batch mismatch: {len(preds)} preds vs {len(targets)} targets")
    mses = [T.mse(p, y) for p, y in zip(preds, targets)]
    maes = [T.mae(p, y) for p, y in zip(preds, targets)]
    return T.add(T.tmean(T.stack_rows(mses)), T.tmean(T.stack_rows(maes)))


@dataclass
class Stage3Freeze:
    """Stop-gradient quantities captured at a base point so that finite
    differences see exactly the function the tape differentiates."""

    joints: list  # detached (1, 2F) gate inputs, one per instance
    fuse_weights: list  # detached (1, F) text weights used in the fusion
    attended_ts: list  # detached (L, F) text-attention term of the restricted input
    responsibilities: np.ndarray


def stage3_batch_loss(model, batch, train_cfg, freeze=None, skip_align=False, skip_gate=False):
    """Joint objective on one batch.

    Returns (total_tensor, LossBundle, stats dict, Stage3Freeze). The
    forecast term supervises both the fused decode and the series-only
    decode so the restricted branch stays an honest competitor; the utility
    gap and its responsibility target are detached.
    """
    if len(batch) < 2:
        raise DataError("stage-3 batches need >= 2 instances for in-batch negatives")
    cfg = model.config
    pairs = []
    spaces = []
    profiles = []
    joints = []
    fuse_weights = []
    attended_consts = []
    opens = []
    full_preds = []
    ts_preds = []
    targets = []
    gaps = []
    for idx, inst in enumerate(batch):
        text_states = model.encode_text(inst.script)
        ts_states = model.encode_ts(inst.window)
        mixed_text = al.cross_attention(model.align.ca_text, text_states, ts_states)
        attended_ts = model.align.ca_ts.attend(ts_states, text_states)
        mixed_ts = T.add(ts_states, attended_ts)
        t_emb = al.pool(mixed_text)
        s_emb = al.pool(mixed_ts)
        # the restricted decode sees the same value of s, but its loss may
        # only train the series branch and decoder: the attended-text
        # component is a constant there, so the series-only baseline cannot
        # learn to extract text through it
        if freeze is not None:
            attended_const = Tensor(freeze.attended_ts[idx])
        else:
            attended_const = attended_ts.detach()
        attended_consts.append(attended_const.data)
        s_restricted = al.pool(T.add(ts_states, attended_const))
        pairs.append(al.InstanceEmbeddings(event=t_emb, series=s_emb))
        if not skip_align:
            spaces.append(model.align.spaces(text_states, ts_states))
            profiles.append(model.align.salience(text_states, cfg.top_k_anchors))

        if freeze is not None:
            joint = Tensor(freeze.joints[idx])
        else:
            joint = gating.gate_joint(t_emb, s_emb)
        joints.append(joint.data)
        text_w, ts_w = gating.gate_weights_from_joint(joint, model.gate, cfg.temp_gate)
        # fusion consumes the gate VALUES only: the gate MLP is trained by
        # the distillation loss alone, never dragged around by batch-level
        # forecast noise (its per-feature share of that gradient would dwarf
        # the mean-openness distillation signal)
        if freeze is not None:
            fuse_w = Tensor(freeze.fuse_weights[idx])
        else:
            fuse_w = text_w.detach()
        fuse_weights.append(fuse_w.data)
        fused = gating.fuse(
            t_emb, s_emb, fuse_w, T.sub(Tensor(np.ones_like(fuse_w.data)), fuse_w)
        )
        opens.append(gating.openness(text_w))

        y = Tensor(inst.target.values)
        pred_full = model.forecast(fused)
        pred_ts = model.forecast(s_restricted)
        full_preds.append(pred_full)
        ts_preds.append(pred_ts)
        targets.append(y)
        gaps.append(
            T.mse(pred_ts, y).item() - T.mse(pred_full, y).item()
        )

    loss_forecast = T.add(
        forecast_loss(full_preds, targets), forecast_loss(ts_preds, targets)
    )
    total = loss_forecast
    bundle_ctr = bundle_tok = bundle_gate = 0.0
    if not skip_align:
        ctr, tok, align_total = al.alignment_loss(
            pairs, spaces, profiles, cfg.temp_instance, cfg.temp_token, cfg.temp_align
        )
        total = T.add(total, T.scale(align_total, train_cfg.weight_align))
        bundle_ctr, bundle_tok = ctr.item(), tok.item()
    if freeze is not None:
        resp = freeze.responsibilities
    else:
        resp = gating.responsibility(gaps, cfg.gain, cfg.min_scale, cfg.clip_limit)
    if not skip_gate:
        loss_gate = gating.gate_loss(opens, resp)
        total = T.add(total, T.scale(loss_gate, train_cfg.weight_gate))
        bundle_gate = loss_gate.item()

    bundle = LossBundle(
        forecast=loss_forecast.item(),
        instance_align=bundle_ctr,
        token_align=bundle_tok,
        gate=bundle_gate,
        total=total.item(),
        mean_openness=float(np.mean([o.item() for o in opens])),
    )
    stats = {
        "gaps": np.asarray(gaps),
        "responsibilities": np.asarray(resp),
        "openness": np.asarray([o.item() for o in opens]),
        "full_preds": full_preds,
        "ts_preds": ts_preds,
    }
    freeze_out = Stage3Freeze(
        joints=joints,
        fuse_weights=fuse_weights,
        attended_ts=attended_consts,
        responsibilities=np.asarray(resp),
    )
    return total, bundle, stats, freeze_out


# ---------------------------------------------------------------------------
# stage loops


def _batches(n, batch_size, rng, min_size=1):
    order = rng.permutation(n)
    for lo in range(0, n, batch_size):
        chunk = order[lo : lo + batch_size]
        if len(chunk) >= min_size:
            yield chunk


def _eval_ts_loss(model, instances):
    preds, targets = [], []
    for inst in instances:
        preds.append(model.forecast(model.ts_context(inst.window)))
        targets.append(Tensor(inst.target.values))
    return forecast_loss(preds, targets).item()


def _eval_text_loss(model, instances):
    preds, targets = [], []
    for inst in instances:
        preds.append(model.forecast(model.text_context(inst.script)))
        targets.append(Tensor(inst.target.values))
    return forecast_loss(preds, targets).item()


def _eval_full_loss(model, instances, train_cfg):
    total, n = 0.0, 0
    for lo in range(0, len(instances), train_cfg.batch_size):
        chunk = instances[lo : lo + train_cfg.batch_size]
        if len(chunk) < 2:
            continue
        _, bundle, _, _ = stage3_batch_loss(model, chunk, train_cfg)
        total += bundle.forecast * len(chunk)
        n += len(chunk)
    return total / max(n, 1)


def _sliding_starts(dataset, train_instances):
    """Stride-1 window starts over the portion of the base path covered by
    the training instances (window + target must fit inside it)."""
    L = train_instances[0].window.values.shape[0]
    H = train_instances[0].target.values.shape[0]
    region_end = max(i.script.release_time for i in train_instances) + H
    return L, H, list(range(0, region_end - (L + H) + 2))


def train_stage1(state, dataset, train_insts, val_insts, log=None):
    """Series-only pre-training with stride-1 sliding windows."""
    if not train_insts:
        raise DataError("stage 1 received no training data")
    state.enter_stage(STAGE_TS)
    model = state.model
    cfg = state.train_config
    params = model.group_parameters(STAGE_GROUPS[STAGE_TS])
    history = state.val_history.setdefault(STAGE_TS, [])
    history.append(_eval_ts_loss(model, val_insts) if val_insts else float("nan"))

    if dataset is not None and dataset.base_path is not None:
        L, H, starts = _sliding_starts(dataset, train_insts)
        path = dataset.base_path
        d_y = train_insts[0].target.values.shape[1]

        def example(i):
            s = starts[i]
            return path[s : s + L], path[s + L : s + L + H, :d_y]

        n = len(starts)
    else:
        def example(i):
            inst = train_insts[i]
            return inst.window.values, inst.target.values

        n = len(train_insts)

    for epoch in range(cfg.stage1_epochs):
        for chunk in _batches(n, cfg.batch_size, state.rng):
            with Tape() as tape:
                preds, targets = [], []
                for i in chunk:
                    window, target = example(int(i))
                    preds.append(model.forecast(model.ts_context(window)))
                    targets.append(Tensor(target))
                loss = forecast_loss(preds, targets)
            if not np.isfinite(loss.item()):
                raise NumericsError(f"non-finite stage-1 loss at step {state.step}")
            tape.backward(loss)
            state.adam.step(params, tape.grad, clip=cfg.grad_clip)
            state.step += 1
            if log is not None:
                value = loss.item()
                log.record(STAGE_TS, epoch, state.step,
                           LossBundle(value, 0.0, 0.0, 0.0, value))
        history.append(_eval_ts_loss(model, val_insts) if val_insts else float("nan"))
    return state


def train_stage2(state, train_insts, val_insts, log=None):
    """Text-only warm-up: decode from the pooled projected text embedding."""
    if not train_insts:
        raise DataError("stage 2 received no training data")
    state.enter_stage(STAGE_TEXT)
    model = state.model
    cfg = state.train_config
    params = model.group_parameters(STAGE_GROUPS[STAGE_TEXT])
    history = state.val_history.setdefault(STAGE_TEXT, [])
    history.append(_eval_text_loss(model, val_insts) if val_insts else float("nan"))

    for epoch in range(cfg.stage2_epochs):
        for chunk in _batches(len(train_insts), cfg.batch_size, state.rng):
            with Tape() as tape:
                preds, targets = [], []
                for i in chunk:
                    inst = train_insts[int(i)]
                    preds.append(model.forecast(model.text_context(inst.script)))
                    targets.append(Tensor(inst.target.values))
                loss = forecast_loss(preds, targets)
            if not np.isfinite(loss.item()):
                raise NumericsError(f"non-finite stage-2 loss at step {state.step}")
            tape.backward(loss)
            state.adam.step(params, tape.grad, clip=cfg.grad_clip)
            state.step += 1
            if log is not None:
                value = loss.item()
                log.record(STAGE_TEXT, epoch, state.step,
                           LossBundle(value, 0.0, 0.0, 0.0, value))
        history.append(_eval_text_loss(model, val_insts) if val_insts else float("nan"))
    return state


def train_stage3(state, train_insts, val_insts, log=None):
    """Joint multimodal fine-tuning under the combined objective."""
    if not train_insts:
        raise DataError("stage 3 received no training data")
    state.enter_stage(STAGE_MM)
    model = state.model
    cfg = state.train_config
    params = model.group_parameters(STAGE_GROUPS[STAGE_MM])
    history = state.val_history.setdefault(STAGE_MM, [])
    history.append(_eval_full_loss(model, val_insts, cfg) if val_insts else float("nan"))

    for epoch in range(cfg.stage3_epochs):
        for chunk in _batches(len(train_insts), cfg.batch_size, state.rng, min_size=2):
            batch = [train_insts[int(i)] for i in chunk]
            with Tape() as tape:
                total, bundle, _, _ = stage3_batch_loss(model, batch, cfg)
            if not np.isfinite(bundle.total):
                raise NumericsError(f"non-finite stage-3 loss at step {state.step}")
            tape.backward(total)
            state.adam.step(params, tape.grad, clip=cfg.grad_clip)
            state.step += 1
            if log is not None:
                log.record(STAGE_MM, epoch, state.step, bundle)
        history.append(_eval_full_loss(model, val_insts, cfg) if val_insts else float("nan"))
    return state


def run_training(state, dataset, train_insts, val_insts, log=None):
    train_stage1(state, dataset, train_insts, val_insts, log)
    train_stage2(state, train_insts, val_insts, log)
    train_stage3(state, train_insts, val_insts, log)
    return state


# ---------------------------------------------------------------------------
# checkpointing

_MAGIC = b"EVENTFUSE-CKPT-1\n"
CHECKPOINT_VERSION = 1


def checkpoint_save(state, path):
    """Versioned binary container: magic, little-endian header length, a
    canonical-JSON header, then the raw float64 blobs (param, then its Adam
    moments, in parameter order). Byte-deterministic for identical states."""
    model = state.model
    params = model.named_parameters()
    state.adam.ensure(params)
    from dataclasses import asdict

    header = {
        "version": CHECKPOINT_VERSION,
        "step": state.step,
        "stage": state.stage,
        "stage_history": state.stage_history,
        "val_history": state.val_history,
        "adam": {
            "lr": state.adam.lr,
            "beta1": state.adam.beta1,
            "beta2": state.adam.beta2,
            "eps": state.adam.eps,
            "t": state.adam.t,
        },
        "rng_state": state.rng.bit_generator.state,
        "model_config": asdict(model.config),
        "model_args": model.rebuild_args(),
        "train_config": asdict(state.train_config),
        "params": [
            {"name": name, "shape": list(p.shape)} for name, p in params.items()
        ],
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        for name, p in params.items():
            fh.write(p.data.tobytes())
            fh.write(state.adam.m[name].tobytes())
            fh.write(state.adam.v[name].tobytes())


def checkpoint_load(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        (head_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(head_len))
        if header.get("version") != CHECKPOINT_VERSION:
            raise DataError(
                f"checkpoint version {header.get('version')} unsupported "
                f"(expected {CHECKPOINT_VERSION})"
            )
        model_cfg = ModelConfig(**header["model_config"])
        model = ForecastModel(model_cfg, **header["model_args"])
        train_cfg = TrainConfig(**header["train_config"])
        adam_meta = header["adam"]
        adam = Adam(adam_meta["lr"], adam_meta["beta1"], adam_meta["beta2"], adam_meta["eps"])
        adam.t = adam_meta["t"]
        params = model.named_parameters()

        def read_array(name, shape):
            count = int(np.prod(shape)) if shape else 1
            blob = fh.read(count * 8)
            if len(blob) != count * 8:
                raise DataError(f"checkpoint truncated at parameter {name}")
            return np.frombuffer(blob, dtype=np.float64).reshape(shape).copy()

        for entry in header["params"]:
            name = entry["name"]
            if name not in params:
                raise DataError(f"checkpoint parameter {name} unknown to this model")
            p = params[name]
            p.data[...] = read_array(name, p.data.shape)
            adam.m[name] = read_array(name, p.data.shape)
            adam.v[name] = read_array(name, p.data.shape)
        rng = np.random.default_rng(np.random.PCG64())
        rng.bit_generator.state = header["rng_state"]
        state = TrainState(
            model=model,
            adam=adam,
            rng=rng,
            train_config=train_cfg,
            step=header["step"],
            stage=header["stage"],
            stage_history=list(header["stage_history"]),
            val_history={k: list(v) for k, v in header["val_history"].items()},
        )
        return state
