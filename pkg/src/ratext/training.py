"""Model assembly, loss aggregation, and the alternating training loop.

One training step has two phases.  First the selector, predictor, shared
head, and guider take a joint Adam step on

    J_total = L_sp + lambda_ib * L_ib + L_adv + lambda_lm * L_lm
    L_adv   = lambda_g * L_g + L_guide + lambda_mi * L_mi

computed from a single forward pass with one relaxed-mask sample and one
Gaussian draw.  Then the features are recomputed through detached
parameters (same noise) and the discriminator alone takes an Adam step
on its separation loss.  The two phases never touch each other's
parameters; the checksum tests rely on that.

Ablation flags skip sub-networks entirely: ``disable_adv`` removes the
guider and discriminator, ``disable_lm`` the fluency term, and
``disable_ib`` the sparsity prior.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .adversarial import VARIANTS, d_loss, g_loss, init_discriminator
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Instance, labels_of
from .errors import ConfigError, ContractViolation, NumericFault
from .guider import guider_forward_batch, guide_loss, init_guider, mi_loss
from .lm import LanguageModel, bilinear_scores, lm_regularizer
from .metrics import RationaleScore, TaskScore, corpus_rationale_score, task_metrics
from .optim import AdamState, adam_step
from .params import ParamStore
from .predictor import init_predictor, predict_masked_batch, sp_loss
from .selector import gumbel, hard_mask, ib_loss, init_selector, sample_mask, select_probs_batch

MODEL_TAG = "model"
CSV_HEADER = "epoch,batch,L_sp,L_ib,L_g,L_guide,L_mi,L_lm,L_d,J_total,sel_pct"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_outputs: int
    mode: str = "classification"
    embed_dim: int = 16
    hidden_dim: int = 16
    lm_embed_dim: int = 16
    lm_hidden_dim: int = 16
    disc_hidden_dim: int | None = None

    @property
    def feature_dim(self) -> int:
        return 2 * self.hidden_dim

    def validate(self) -> None:
        if self.mode not in ("classification", "regression"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.mode == "regression" and self.num_outputs != 1:
            raise ConfigError("regression uses a single output")
        if self.mode == "classification" and self.num_outputs < 2:
            raise ConfigError("classification needs at least two classes")
        if self.vocab_size < 3:
            raise ConfigError("vocabulary too small")
        for name in ("embed_dim", "hidden_dim", "lm_embed_dim", "lm_hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")


@dataclass
class Hyperparams:
    mode: str = "classification"
    lambda_ib: float = 0.05
    lambda_g: float = 1.0
    lambda_mi: float = 0.5
    lambda_lm: float = 0.005
    tau: float = 0.5
    r_select: float = 0.1
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    max_len: int = 64
    disable_adv: bool = False
    disable_lm: bool = False
    disable_ib: bool = False
    d_loss_variant: str = "difference"
    dtype: str = "float64"

    def validate(self) -> None:
        for name in ("lambda_ib", "lambda_g", "lambda_mi", "lambda_lm"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not 0 < self.r_select < 1:
            raise ConfigError("r_select must lie in (0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1 or self.epochs < 0 or self.max_len < 1:
            raise ConfigError("batch_size/epochs/max_len out of range")
        if self.mode not in ("classification", "regression"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.d_loss_variant not in VARIANTS:
            raise ConfigError(f"unknown d_loss_variant {self.d_loss_variant!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64")


# Published starting points for the two task families.
PRESETS: dict[str, dict] = {
    "beer-regression": dict(
        mode="regression", lambda_ib=0.0003, lambda_g=1.0, lambda_mi=0.1,
        lambda_lm=0.005, r_select=0.001,
    ),
    "legal-classification": dict(
        mode="classification", lambda_ib=0.05, lambda_g=1.0, lambda_mi=0.5,
        lambda_lm=0.005, r_select=0.1,
    ),
}


def hyperparams_hash(hp: Hyperparams) -> str:
    return hashlib.md5(json.dumps(asdict(hp), sort_keys=True).encode()).hexdigest()


def build_model(cfg: ModelConfig, seed: int, dtype=np.float64) -> ParamStore:
    """Fresh parameters for all four groups, deterministically from seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    store = ParamStore(dtype=dtype)
    init_selector(store, cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, rng)
    init_predictor(store, cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim,
                   cfg.num_outputs, rng)
    init_guider(store, cfg.vocab_size, cfg.embed_dim, cfg.hidden_dim, rng)
    init_discriminator(store, cfg.feature_dim, rng, hidden_dim=cfg.disc_hidden_dim)
    return store


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    ids: np.ndarray          # (B, n) int64, zero-padded
    labels: np.ndarray       # (B,) int64 or float
    valid: np.ndarray        # (B, n) float 0/1
    lm_scores: np.ndarray | None = None


def collate(instances: list[Instance], mode: str, max_len: int = 64,
            score_rows: list[np.ndarray] | None = None) -> Batch:
    if not instances:
        raise ContractViolation("cannot collate an empty batch")
    lens = [min(len(inst.tokens), max_len) for inst in instances]
    n = max(lens)
    ids = np.zeros((len(instances), n), dtype=np.int64)
    for i, inst in enumerate(instances):
        ids[i, : lens[i]] = inst.tokens[: lens[i]]
    labels = labels_of(instances, mode)
    valid = (ids != 0).astype(float)
    scores = None
    if score_rows is not None:
        scores = np.zeros((len(instances), n))
        for i, row in enumerate(score_rows):
            scores[i, : lens[i]] = row[: lens[i]]
    return Batch(ids=ids, labels=labels, valid=valid, lm_scores=scores)


@dataclass
class BatchNoise:
    g1: np.ndarray
    g0: np.ndarray
    u: np.ndarray | None


def draw_noise(rng: np.random.Generator, mask_shape: tuple, feature_dim: int,
               need_gaussian: bool) -> BatchNoise:
    g1 = gumbel(rng, mask_shape)
    g0 = gumbel(rng, mask_shape)
    u = rng.standard_normal((mask_shape[0], feature_dim)) if need_gaussian else None
    return BatchNoise(g1=g1, g0=g0, u=u)


# ---------------------------------------------------------------------------
# losses


@dataclass
class LossBreakdown:
    L_sp: float
    L_ib: float
    L_g: float
    L_guide: float
    L_mi: float
    L_lm: float
    L_adv: float
    J_total: float
    L_d: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


def compute_losses(store, cfg: ModelConfig, hp: Hyperparams, batch: Batch,
                   noise: BatchNoise | None = None,
                   rng: np.random.Generator | None = None,
                   lm: LanguageModel | None = None):
    """One forward pass producing every loss component.

    Returns (breakdown, J_total tensor, aux).  ``aux`` carries the pieces
    the trainer logs or reuses: selection probabilities, the sampled
    mask, and both feature tensors.  Pass ``noise`` to pin the sampling
    (gradient checks, discriminator recomputation); otherwise it is drawn
    from ``rng``.
    """
    adv_on = not hp.disable_adv
    lm_on = (not hp.disable_lm) and hp.lambda_lm != 0.0
    if noise is None:
        if rng is None:
            raise ContractViolation("compute_losses needs noise or an rng")
        noise = draw_noise(rng, batch.ids.shape, cfg.feature_dim, adv_on)
    if lm_on and batch.lm_scores is None and lm is None:
        raise ContractViolation(
            "lambda_lm > 0 requires a pretrained language model or precomputed scores"
        )

    p, valid = select_probs_batch(store, batch.ids, batch.valid)
    mask = sample_mask(p, hp.tau, noise=(noise.g1, noise.g0))
    z_fake, y_sp = predict_masked_batch(store, batch.ids, mask.m, hp.mode, valid)
    l_sp = sp_loss(y_sp, batch.labels, hp.mode)

    zero = Tensor(np.zeros(()))
    l_ib = zero if hp.disable_ib else ib_loss(p, hp.r_select, valid)

    sample = None
    if adv_on:
        sample, y_guide = guider_forward_batch(
            store, batch.ids, hp.mode, u=noise.u, valid=valid
        )
        l_guide = guide_loss(y_guide, batch.labels, hp.mode)
        l_mi = mi_loss(sample.mu, sample.sigma)
        l_g = g_loss(store, z_fake)
        l_adv = ad.add(
            ad.add(ad.mul(l_g, hp.lambda_g), l_guide), ad.mul(l_mi, hp.lambda_mi)
        )
        l_d_value = d_loss(store, sample.z, z_fake, hp.d_loss_variant).item()
    else:
        l_guide = l_mi = l_g = l_adv = zero
        l_d_value = 0.0

    if lm_on:
        scores = batch.lm_scores
        if scores is None:
            scores = bilinear_scores(lm, batch.ids, valid)
        l_lm = lm_regularizer(lm, batch.ids, mask.m, valid, scores=scores)
    else:
        l_lm = zero

    j = l_sp
    if not hp.disable_ib and hp.lambda_ib != 0.0:
        j = ad.add(j, ad.mul(l_ib, hp.lambda_ib))
    if adv_on:
        j = ad.add(j, l_adv)
    if lm_on:
        j = ad.add(j, ad.mul(l_lm, hp.lambda_lm))

    breakdown = LossBreakdown(
        L_sp=l_sp.item(), L_ib=l_ib.item(), L_g=l_g.item(), L_guide=l_guide.item(),
        L_mi=l_mi.item(), L_lm=l_lm.item(), L_adv=l_adv.item(),
        J_total=j.item(), L_d=l_d_value,
    )
    for name, value in breakdown.as_dict().items():
        if not np.isfinite(value):
            raise NumericFault(f"loss component {name} is not finite")

    sel = hard_mask(p, valid)
    denom = valid.sum()
    aux = {
        "probs": p,
        "mask": mask,
        "z_fake": z_fake,
        "z_real": sample.z if sample is not None else None,
        "sel_pct": float(sel.sum() / denom) if denom else 0.0,
    }
    return breakdown, j, aux


def _features_detached(store, cfg: ModelConfig, hp: Hyperparams, batch: Batch,
                       noise: BatchNoise):
    """Both feature tensors under current weights, with no graph attached."""
    params = store.detached()
    p, valid = select_probs_batch(params, batch.ids, batch.valid)
    mask = sample_mask(p, hp.tau, noise=(noise.g1, noise.g0))
    z_fake, _ = predict_masked_batch(params, batch.ids, mask.m, hp.mode, valid)
    sample, _ = guider_forward_batch(params, batch.ids, hp.mode, u=noise.u, valid=valid)
    return sample.z, z_fake


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    store: ParamStore
    cfg: ModelConfig
    hp: Hyperparams
    batch_log: list[dict] = field(default_factory=list)
    epoch_log: list[dict] = field(default_factory=list)


def precompute_lm_scores(lm: LanguageModel, instances: list[Instance],
                         max_len: int) -> list[np.ndarray]:
    """Per-instance bilinear scores; the model is frozen so these are
    constants for the whole run."""
    rows = []
    for inst in instances:
        ids = np.asarray(inst.tokens[:max_len], dtype=np.int64).reshape(1, -1)
        rows.append(bilinear_scores(lm, ids)[0])
    return rows


def train(train_set: list[Instance], hp: Hyperparams, cfg: ModelConfig,
          lm: LanguageModel | None = None, dev_set: list[Instance] | None = None,
          out_dir: str | Path | None = None,
          save_epoch_checkpoints: bool = False) -> TrainResult:
    """Run the alternating optimization; deterministic given hp.seed.

    A NaN in any loss component aborts the run, restores the last
    completed epoch's parameters, writes them out when ``out_dir`` is
    set, and re-raises the numeric fault.
    """
    hp.validate()
    cfg.validate()
    if hp.mode != cfg.mode:
        raise ConfigError(f"mode mismatch: hyperparams {hp.mode!r} vs model {cfg.mode!r}")
    if not train_set:
        raise ContractViolation("training set is empty")
    lm_on = (not hp.disable_lm) and hp.lambda_lm != 0.0
    if lm_on:
        if lm is None:
            raise ContractViolation("lambda_lm > 0 requires a pretrained language model")
        if not lm.frozen:
            raise ContractViolation("the language model must be frozen before training")
        if lm.vocab_size != cfg.vocab_size:
            raise ContractViolation(
                f"language model vocab {lm.vocab_size} != model vocab {cfg.vocab_size}"
            )

    dtype = np.float32 if hp.dtype == "float32" else np.float64
    ad.set_default_dtype(dtype)
    store = build_model(cfg, hp.seed, dtype=dtype)
    rng = np.random.default_rng(hp.seed)
    adam_main = AdamState(lr=hp.lr)
    adam_disc = AdamState(lr=hp.lr)
    main_groups = ("generator",) if hp.disable_adv else ("generator", "guider")
    main_params = store.group(*main_groups)
    disc_params = store.group("discriminator")

    score_rows = precompute_lm_scores(lm, train_set, hp.max_len) if lm_on else None
    result = TrainResult(store=store, cfg=cfg, hp=hp)
    last_good = store.snapshot()
    out = Path(out_dir) if out_dir is not None else None

    def checkpoint_meta() -> dict:
        return {
            "vocab_size": cfg.vocab_size, "num_outputs": cfg.num_outputs,
            "mode": cfg.mode, "embed_dim": cfg.embed_dim,
            "hidden_dim": cfg.hidden_dim, "lm_embed_dim": cfg.lm_embed_dim,
            "lm_hidden_dim": cfg.lm_hidden_dim,
            "disc_hidden_dim": cfg.disc_hidden_dim,
            "seed": hp.seed, "hyperparams_hash": hyperparams_hash(hp),
        }

    try:
        for epoch in range(hp.epochs):
            order = rng.permutation(len(train_set))
            for b_idx, start in enumerate(range(0, len(order), hp.batch_size)):
                take = order[start:start + hp.batch_size]
                batch = collate(
                    [train_set[i] for i in take], hp.mode, hp.max_len,
                    score_rows=[score_rows[i] for i in take] if score_rows else None,
                )
                noise = draw_noise(rng, batch.ids.shape, cfg.feature_dim,
                                   not hp.disable_adv)
                breakdown, j, aux = compute_losses(store, cfg, hp, batch, noise=noise, lm=lm)

                store.zero_grad()
                ad.backward(j)
                adam_step(main_params, ad.collect_grads(main_params), adam_main)

                if not hp.disable_adv:
                    z_real, z_fake = _features_detached(store, cfg, hp, batch, noise)
                    ld = d_loss(store, z_real, z_fake, hp.d_loss_variant)
                    if not np.isfinite(ld.item()):
                        raise NumericFault("loss component L_d is not finite")
                    store.zero_grad()
                    ad.backward(ld)
                    adam_step(disc_params, ad.collect_grads(disc_params), adam_disc)

                row = {"epoch": epoch, "batch": b_idx, "sel_pct": aux["sel_pct"]}
                row.update(breakdown.as_dict())
                result.batch_log.append(row)

            last_good = store.snapshot()
            epoch_row: dict = {"epoch": epoch}
            if dev_set:
                epoch_row.update(evaluate(dev_set, store, cfg, hp.mode, hp.max_len))
            result.epoch_log.append(epoch_row)
            if out is not None and save_epoch_checkpoints:
                save_checkpoint(store, out / f"epoch_{epoch:03d}.ckpt", MODEL_TAG,
                                meta=checkpoint_meta())
    except NumericFault:
        store.load_values(last_good)
        if out is not None:
            save_checkpoint(store, out / "model.ckpt", MODEL_TAG, meta=checkpoint_meta())
        raise

    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(store, out / "model.ckpt", MODEL_TAG, meta=checkpoint_meta())
        write_batch_log(result.batch_log, out / "metrics.csv")
        write_epoch_log(result.epoch_log, out / "epochs.csv")
    return result


def write_batch_log(rows: list[dict], path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    cols = CSV_HEADER.split(",")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(repr(row[c]) if isinstance(row[c], float) else str(row[c])
                              for c in cols) + "\n")


def write_epoch_log(rows: list[dict], path: str | Path) -> None:
    if not rows:
        return
    cols = sorted({k for row in rows for k in row}, key=lambda k: (k != "epoch", k))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(repr(row.get(c, "")) if isinstance(row.get(c), float)
                              else str(row.get(c, "")) for c in cols) + "\n")


# ---------------------------------------------------------------------------
# inference


@dataclass
class ExtractionRecord:
    tokens: list[int]
    mask: list[int]
    pred: float | int
    sel_pct: float


def extract(instances: list[Instance], store, cfg: ModelConfig,
            batch_size: int = 64, max_len: int = 64) -> list[ExtractionRecord]:
    """Deterministic hard-mask extraction plus predictions."""
    max_id = max((max(inst.tokens) for inst in instances if inst.tokens), default=0)
    if max_id >= cfg.vocab_size:
        raise ContractViolation(
            f"corpus token id {max_id} does not fit checkpoint vocab {cfg.vocab_size}"
        )
    records: list[ExtractionRecord] = []
    params = store.detached() if isinstance(store, ParamStore) else store
    for start in range(0, len(instances), batch_size):
        chunk = instances[start:start + batch_size]
        batch = collate(chunk, cfg.mode, max_len)
        p, valid = select_probs_batch(params, batch.ids, batch.valid)
        m = hard_mask(p, valid)
        _, y = predict_masked_batch(
            params, batch.ids, Tensor(m.astype(p.data.dtype)), cfg.mode, valid
        )
        for i, inst in enumerate(chunk):
            n = min(len(inst.tokens), max_len)
            mask_row = m[i, :n].astype(int).tolist()
            if cfg.mode == "classification":
                pred: float | int = int(np.argmax(y.data[i]))
            else:
                pred = float(y.data[i, 0])
            records.append(ExtractionRecord(
                tokens=list(inst.tokens), mask=mask_row, pred=pred,
                sel_pct=float(sum(mask_row) / n) if n else 0.0,
            ))
    return records


def evaluate(instances: list[Instance], store, cfg: ModelConfig, mode: str,
             max_len: int = 64) -> dict:
    """Task metrics plus rationale metrics (when gold masks exist)."""
    records = extract(instances, store, cfg, max_len=max_len)
    preds = [r.pred for r in records]
    golds = labels_of(instances, mode)
    task = task_metrics(preds, golds, mode)
    out: dict = {}
    if mode == "classification":
        out.update(accuracy=task.accuracy, macro_precision=task.macro_precision,
                   macro_recall=task.macro_recall, macro_f1=task.macro_f1)
    else:
        out.update(mse=task.mse)
    pairs = [
        (r.mask, inst.gold_mask[:len(r.mask)])
        for r, inst in zip(records, instances) if inst.gold_mask is not None
    ]
    if pairs:
        score = corpus_rationale_score(pairs)
        out.update(rationale_precision=score.precision, rationale_recall=score.recall,
                   rationale_f1=score.f1, sel_pct=score.selection_pct)
    else:
        out["sel_pct"] = float(np.mean([r.sel_pct for r in records])) if records else 0.0
    return out


def load_model(path: str | Path, dtype=np.float64):
    """Rebuild a ParamStore and its ModelConfig from a checkpoint."""
    values, manifest = load_checkpoint(path, expect_tag=MODEL_TAG)
    meta = manifest["meta"]
    cfg = ModelConfig(
        vocab_size=meta["vocab_size"], num_outputs=meta["num_outputs"],
        mode=meta["mode"], embed_dim=meta["embed_dim"], hidden_dim=meta["hidden_dim"],
        lm_embed_dim=meta["lm_embed_dim"], lm_hidden_dim=meta["lm_hidden_dim"],
        disc_hidden_dim=meta["disc_hidden_dim"],
    )
    store = build_model(cfg, seed=0, dtype=dtype)
    store.load_values(values)
    return store, cfg


# ---------------------------------------------------------------------------
# verification


def full_model_gradcheck(fd_step: float = 1e-5, tolerance: float = 1e-4,
                         seed: int = 0):
    """Finite-difference audit of the complete objective at tiny dims.

    Builds a fresh model (vocab 20, embed 4, hidden 4, K=3), a frozen
    random language model, and a two-instance batch (one padded), pins
    all sampling noise, and compares reverse-mode gradients of J_total
    against central differences for every non-frozen parameter.  The
    language model's own weights are constants by contract and are not
    audited.
    """
    from .lm import lm_init
    from .optim import grad_check

    ad.set_default_dtype(np.float64)
    cfg = ModelConfig(vocab_size=20, num_outputs=3, mode="classification",
                      embed_dim=4, hidden_dim=4, lm_embed_dim=4, lm_hidden_dim=4)
    store = build_model(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    ids = rng.integers(2, cfg.vocab_size, size=(2, 6))
    ids[1, 4:] = 0
    labels = np.array([0, 2], dtype=np.int64)
    valid = (ids != 0).astype(float)
    lm = lm_init(cfg.vocab_size, cfg.lm_embed_dim, cfg.lm_hidden_dim, rng)
    lm.frozen = True
    batch = Batch(ids=ids, labels=labels, valid=valid,
                  lm_scores=bilinear_scores(lm, ids, valid))
    hp = Hyperparams(mode="classification", lambda_ib=0.05, lambda_g=1.0,
                     lambda_mi=0.5, lambda_lm=0.01, tau=0.5, r_select=0.1)
    noise = draw_noise(np.random.default_rng(seed + 2), ids.shape,
                       cfg.feature_dim, True)

    def loss_fn():
        _, j, _ = compute_losses(store, cfg, hp, batch, noise=noise)
        return j

    return grad_check(loss_fn, store.params, fd_step=fd_step, tolerance=tolerance)
