"""Registered finite-difference checks for every training loss.

Each check builds a micro model (fusion dim 16, horizon 3, two instances),
captures any stop-gradient quantities (responsibility targets, detached
gate inputs) at the base point so central differences see exactly the
function the tape differentiates, and sweeps sampled parameter coordinates.

Targets are re-written to sit clearly away from the MAE kink: the check
probes gradient correctness, not data realism.
"""

import numpy as np

from . import alignment as al
from . import gating
from . import tensor as T
from .datagen import ScenarioConfig, generate
from .gradcheck import grad_check
from .model import ForecastModel, ModelConfig
from .tensor import Tensor
from .trainer import TrainConfig, forecast_loss, stage3_batch_loss

MICRO_MODEL = dict(
    fusion_dim=16,
    text_raw_dim=8,
    ts_raw_dim=8,
    proj_hidden=16,
    align_heads=2,
    gate_hidden=16,
    decoder_blocks=1,
    decoder_heads=2,
    decoder_dim=16,
    head_layers=1,
    top_k_anchors=256,
)


def micro_setup(seed, n_instances=2, horizon=3):
    scenario = ScenarioConfig(
        num_events=n_instances,
        lookback=horizon,
        vocab_size=16,
        script_len_min=3,
        script_len_max=5,
        signal_fraction=0.5,
        seed=seed,
    )
    model = ForecastModel(
        ModelConfig(**MICRO_MODEL),
        vocab_size=scenario.vocab_size,
        d_x=1,
        d_y=1,
        horizon=horizon,
        seed=seed + 1000,
    )
    return model, generate(scenario).instances


def _kink_safe_targets(model, instances, seed):
    """Rewrite targets to sit >= 0.2 above both branch predictions so MAE
    sign patterns cannot flip under the FD perturbation."""
    rng = np.random.default_rng(seed + 77)
    cfg = model.config
    for inst in instances:
        text_states = model.encode_text(inst.script)
        ts_states = model.encode_ts(inst.window)
        mixed_text, mixed_ts = model.align.interleave(text_states, ts_states)
        t_emb, s_emb = al.pool(mixed_text), al.pool(mixed_ts)
        text_w, ts_w = gating.gate_weights(t_emb, s_emb, model.gate, cfg.temp_gate)
        fused = gating.fuse(t_emb, s_emb, text_w, ts_w)
        pred_full = model.forecast(fused).data
        pred_ts = model.forecast(s_emb).data
        base = np.maximum(pred_full, pred_ts)
        inst.target.values = base + 0.2 + rng.uniform(0.0, 0.3, size=base.shape)


def _named(params):
    names, tensors = zip(*sorted(params.items()))
    return list(tensors), list(names)


def check_forecast(seed, tol, sample):
    model, insts = micro_setup(seed)
    _kink_safe_targets(model, insts, seed)
    params = model.group_parameters(("ts_proj", "decoder"))
    tensors, names = _named(params)

    def loss():
        preds = [model.forecast(model.ts_context(i.window.values)) for i in insts]
        return forecast_loss(preds, [Tensor(i.target.values) for i in insts])

    return grad_check(loss, tensors, tol=tol, names=names, sample=sample,
                      rng=np.random.default_rng(seed))


def check_instance_align(seed, tol, sample):
    model, insts = micro_setup(seed)
    params = model.group_parameters(("text_proj", "ts_proj", "align"))
    tensors, names = _named(params)

    def loss():
        pairs = []
        for inst in insts:
            text_states = model.encode_text(inst.script)
            ts_states = model.encode_ts(inst.window)
            mixed_text, mixed_ts = model.align.interleave(text_states, ts_states)
            pairs.append(
                al.InstanceEmbeddings(event=al.pool(mixed_text), series=al.pool(mixed_ts))
            )
        return al.instance_contrastive_loss(pairs, model.config.temp_instance)

    return grad_check(loss, tensors, tol=tol, names=names, sample=sample,
                      rng=np.random.default_rng(seed))


def check_token_align(seed, tol, sample):
    model, insts = micro_setup(seed)
    params = model.group_parameters(("text_proj", "ts_proj", "align"))
    tensors, names = _named(params)

    def loss():
        spaces, profiles = [], []
        for inst in insts:
            text_states = model.encode_text(inst.script)
            ts_states = model.encode_ts(inst.window)
            spaces.append(model.align.spaces(text_states, ts_states))
            profiles.append(model.align.salience(text_states, model.config.top_k_anchors))
        return al.token_contrastive_loss(
            spaces, profiles, model.config.temp_token, model.config.temp_align
        )

    return grad_check(loss, tensors, tol=tol, names=names, sample=sample,
                      rng=np.random.default_rng(seed))


def check_gate(seed, tol, sample):
    model, insts = micro_setup(seed)
    cfg = model.config
    train_cfg = TrainConfig(batch_size=2, seed=seed)
    with T.Tape():
        _, _, _, freeze = stage3_batch_loss(model, insts, train_cfg)
    params = model.group_parameters(("gate",))
    tensors, names = _named(params)
    joints = [Tensor(j) for j in freeze.joints]
    resp = freeze.responsibilities

    def loss():
        opens = []
        for joint in joints:
            text_w, _ = gating.gate_weights_from_joint(joint, model.gate, cfg.temp_gate)
            opens.append(gating.openness(text_w))
        return gating.gate_loss(opens, resp)

    return grad_check(loss, tensors, tol=tol, names=names, sample=sample,
                      rng=np.random.default_rng(seed))


def check_total(seed, tol, sample):
    model, insts = micro_setup(seed)
    _kink_safe_targets(model, insts, seed)
    train_cfg = TrainConfig(batch_size=2, seed=seed)
    with T.Tape():
        _, _, _, freeze = stage3_batch_loss(model, insts, train_cfg)
    params = model.named_parameters()
    tensors, names = _named(params)

    def loss():
        total, _, _, _ = stage3_batch_loss(model, insts, train_cfg, freeze=freeze)
        return total

    return grad_check(loss, tensors, tol=tol, names=names, sample=sample,
                      rng=np.random.default_rng(seed))


LOSS_CHECKS = {
    "forecast": check_forecast,
    "instance_align": check_instance_align,
    "token_align": check_token_align,
    "gate": check_gate,
    "total": check_total,
}


def run_loss_check(name, seeds=20, tol=1e-4, sample=2, verbose=False):
    """Run one registered loss check over several seeds; True iff all pass."""
    check = LOSS_CHECKS[name]
    worst = 0.0
    for seed in range(seeds):
        report = check(seed, tol, sample)
        worst = max(worst, report.max_rel_err)
        if verbose:
            print(f"  {name} seed {seed}: {report}")
        if not report.passed:
            return False, worst
    return True, worst
