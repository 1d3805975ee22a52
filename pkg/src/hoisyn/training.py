"""Training loop, checkpoint persistence and resumable state.

Determinism contract: model init is seeded once; every optimization step
reseeds torch from (seed, global step), and all noise/timestep draws come
from a per-step generator. Resuming from a checkpoint therefore replays
the exact step stream an uninterrupted run would have produced.

Checkpoints are single container files holding the model weights, Adam
state, normalization stats, vocabulary, both config JSONs and counters.
"""

import json
import os

import numpy as np
import torch

from .archive import SCHEMA_VERSION, SchemaMismatchError, read_container, write_container
from .body import ToyBodyModel
from .config import RunConfig
from .dataset import CorpusLoader, denormalize_human, denormalize_objects
from .denoiser import DenoiserConfig, DualBranchDenoiser, FrozenTextEncoder
from .diffusion import build_condition_mask, make_schedule, q_sample
from .losses import LossWeights, body_sdf_grid, loss_dis, loss_pen, loss_pos, loss_vel, total_loss
from .text import Vocabulary


class TrainingDiverged(RuntimeError):
    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


def step_seed(seed, step):
    return (seed * 1000003 + step * 7919 + 13) % (2**31 - 1)


def masked_mse(pred, target, mask):
    diff2 = ((pred - target) ** 2).mean(dim=-1)  # (B, T)
    return (diff2 * mask).sum() / mask.sum().clamp(min=1.0)


def save_checkpoint(path, model, optimizer, run_config, vocab, epoch, step,
                    extra=None):
    tensors = {}
    meta = {
        "schema_version": SCHEMA_VERSION,
        "run_config": run_config.to_json(),
        "denoiser_config": model.config.to_json(),
        "vocab": vocab.to_json(),
        "epoch": epoch,
        "step": step,
        "extra": extra or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    tensors["meta.json_utf8"] = np.frombuffer(blob, dtype=np.uint8).astype(np.int64)
    for name, tensor in model.state_dict().items():
        tensors[f"model.{name}"] = tensor.detach().cpu().numpy()
    if optimizer is not None:
        sd = optimizer.state_dict()
        tensors["opt.param_groups_utf8"] = np.frombuffer(
            json.dumps(sd["param_groups"], sort_keys=True).encode("utf-8"), dtype=np.uint8
        ).astype(np.int64)
        for idx, state in sd["state"].items():
            for key, val in state.items():
                arr = val.detach().cpu().numpy() if isinstance(val, torch.Tensor) else np.asarray(val)
                tensors[f"opt.state.{idx}.{key}"] = arr
    write_container(path, tensors)


def load_checkpoint(path):
    """Rebuild (model, meta dict, optimizer state) from a checkpoint file."""
    tensors = read_container(path)
    if "meta.json_utf8" not in tensors:
        raise SchemaMismatchError("checkpoint missing meta.json_utf8")
    meta = json.loads(bytes(tensors["meta.json_utf8"].astype(np.uint8)).decode("utf-8"))
    if meta.get("schema_version") != SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"checkpoint schema_version {meta.get('schema_version')}, expected {SCHEMA_VERSION}"
        )
    run_config = RunConfig.from_json(meta["run_config"])
    den_config = DenoiserConfig.from_json(meta["denoiser_config"])
    vocab = Vocabulary.from_json(meta["vocab"])
    text_encoder = None
    if run_config.text_encoder.startswith("frozen:"):
        text_encoder = FrozenTextEncoder(run_config.text_encoder[7:], den_config.width)
    model = DualBranchDenoiser(den_config, text_encoder=text_encoder)
    state = {}
    for name, arr in tensors.items():
        if name.startswith("model."):
            state[name[6:]] = torch.as_tensor(arr)
    model.load_state_dict(state)
    opt_state = None
    if "opt.param_groups_utf8" in tensors:
        groups = json.loads(
            bytes(tensors["opt.param_groups_utf8"].astype(np.uint8)).decode("utf-8")
        )
        states = {}
        for name, arr in tensors.items():
            if not name.startswith("opt.state."):
                continue
            _, _, idx, key = name.split(".", 3)
            states.setdefault(int(idx), {})[key] = torch.as_tensor(arr)
        opt_state = {"state": states, "param_groups": groups}
    return model, meta, run_config, vocab, opt_state


class Trainer:
    def __init__(self, config, out_dir, body_model=None, loader=None):
        config.validate()
        self.config = config
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        self.body_model = body_model if body_model is not None else ToyBodyModel()
        self.loader = loader if loader is not None else CorpusLoader(
            config.corpus_dir,
            mode=config.mode,
            max_len=config.max_len or None,
            max_text_len=config.max_text_len or None,
            k_max=config.k_max,
        )
        self.vocab = self.loader.vocab
        sample_seq = self.loader.split_sequences("train")[0]
        num_joints = sample_seq.human.num_joints
        bps_points = sample_seq.objects[0].geometry.bps_code.shape[0]
        self.den_config = DenoiserConfig(
            num_joints=num_joints,
            num_objects=self.loader.manifest.num_objects,
            width=config.width,
            blocks=config.blocks,
            heads=config.heads,
            ff_mult=config.ff_mult,
            dropout=config.dropout,
            geom_embed=config.geom_embed,
            bps_points=bps_points,
            vocab_size=len(self.vocab),
            max_text_len=self.loader.max_text_len,
            max_seq_len=max(self.loader.max_len, 32),
        )
        torch.manual_seed(config.seed)
        text_encoder = None
        if config.text_encoder.startswith("frozen:"):
            text_encoder = FrozenTextEncoder(config.text_encoder[7:], config.width)
        self.model = DualBranchDenoiser(self.den_config, text_encoder=text_encoder)
        self.model.set_norm_stats(self.loader.norm_stats)
        self.schedule = make_schedule(config.schedule, config.timesteps)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(), lr=config.lr, weight_decay=config.weight_decay
        )
        self.weights = LossWeights(
            lambda_vel=config.lambda_vel,
            lambda_pos=config.lambda_pos,
            lambda_pen=config.lambda_pen,
            lambda_dis=config.lambda_dis,
        )
        self.capsules = self.body_model.capsules()
        if self.body_model.num_joints != num_joints:
            raise ValueError(
                f"body model has {self.body_model.num_joints} joints, corpus has {num_joints}"
            )
        self.epoch = 0
        self.step = 0
        self.best_val = float("inf")
        self.log_path = os.path.join(out_dir, "train_log.jsonl")
        self.last_checkpoint = None

    # ---------------- loss assembly ----------------

    def _condition_channels(self, batch):
        B, T = batch.mask.shape
        d_h = batch.human.shape[-1]
        d_o = batch.objects.shape[-2] * batch.objects.shape[-1]
        h_cond = batch.human.new_zeros(B, T, d_h + 1)
        o_cond = batch.human.new_zeros(B, T, d_o + 1)
        obj_flat = batch.objects.reshape(B, T, d_o)
        for i in range(B):
            k = int(batch.cond_k[i])
            h_cond[i] = build_condition_mask(T, k, batch.human[i, :k])
            o_cond[i] = build_condition_mask(T, k, obj_flat[i, :k])
        return h_cond, o_cond, obj_flat

    def _compute_losses(self, batch, gen):
        cfg = self.config
        model = self.model
        stats = self.loader.norm_stats
        B, T = batch.mask.shape
        J = self.den_config.num_joints
        n_obj = self.den_config.num_objects

        h_cond, o_cond, obj_flat = self._condition_channels(batch)
        t = torch.randint(0, self.schedule.num_steps, (B,), generator=gen)
        noise_h = torch.randn(batch.human.shape, generator=gen)
        noise_o = torch.randn(obj_flat.shape, generator=gen)
        x_h = q_sample(batch.human, t, noise_h, self.schedule)
        x_o = q_sample(obj_flat, t, noise_o, self.schedule)
        drop = torch.rand(B, generator=gen) < cfg.cond_dropout

        h0, o0 = model(
            x_h, x_o, t,
            human_cond=h_cond, object_cond=o_cond,
            geometry=batch.geometry, tokens=batch.tokens,
            frame_mask=batch.mask, drop_text=drop,
        )

        rec = masked_mse(h0, batch.human, batch.mask) + masked_mse(o0, obj_flat, batch.mask)

        pred_h_raw = denormalize_human(h0, stats)
        gt_h_raw = denormalize_human(batch.human, stats)
        pred_o_raw = denormalize_objects(o0.reshape(B, T, n_obj, -1), stats)
        gt_o_raw = denormalize_objects(batch.objects, stats)

        l_pos = h0.new_zeros(())
        l_vel = h0.new_zeros(())
        l_dis = h0.new_zeros(())
        l_pen = h0.new_zeros(())
        for i in range(B):
            L = int(batch.lengths[i])
            pred_joints = pred_h_raw[i, :L, : 3 * J].reshape(L, J, 3)
            gt_joints = gt_h_raw[i, :L, : 3 * J].reshape(L, J, 3)
            l_pos = l_pos + loss_pos(pred_joints, gt_joints)
            l_vel = l_vel + loss_vel(pred_joints, gt_joints)
            samples = [batch.samples[i, o] for o in range(n_obj)]
            l_dis = l_dis + loss_dis(pred_o_raw[i, :L], gt_o_raw[i, :L], samples)
            if cfg.lambda_pen > 0 and cfg.pen_frames > 0:
                n_pick = min(cfg.pen_frames, L)
                frames = torch.randperm(L, generator=gen)[:n_pick]
                pts = min(cfg.pen_sample_points, samples[0].shape[0])
                sub = [s[:pts] for s in samples]
                grids = [
                    body_sdf_grid(pred_joints[f].detach(), self.capsules, frame_index=int(f))
                    for f in frames
                ]
                l_pen = l_pen + loss_pen(pred_o_raw[i, frames], sub, grids)
        l_pos, l_vel, l_dis, l_pen = (x / B for x in (l_pos, l_vel, l_dis, l_pen))
        parts = {"vel": l_vel, "pos": l_pos, "pen": l_pen, "dis": l_dis}
        eq6 = total_loss(parts, self.weights)
        objective = eq6 + cfg.lambda_rec * rec
        detail = {
            "loss_total": float(eq6.detach()),
            "loss_pos": float(l_pos.detach()),
            "loss_vel": float(l_vel.detach()),
            "loss_pen": float(l_pen.detach()),
            "loss_dis": float(l_dis.detach()),
            "loss_rec": float(rec.detach()),
            "objective": float(objective.detach()),
        }
        return objective, detail

    # ---------------- loop ----------------

    def _set_lr(self, epoch):
        lr = self.config.effective_lr(epoch)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        return lr

    def train_step(self, batch):
        seed = step_seed(self.config.seed, self.step)
        torch.manual_seed(seed)  # dropout determinism
        gen = torch.Generator().manual_seed(seed)
        self.model.train()
        self.optimizer.zero_grad()
        objective, detail = self._compute_losses(batch, gen)
        if not torch.isfinite(objective):
            raise TrainingDiverged(
                f"non-finite loss at step {self.step}", self.last_checkpoint
            )
        objective.backward()
        self.optimizer.step()
        self.step += 1
        return detail

    def validation_loss(self):
        try:
            batch = self.loader.load_batch(
                "val", self.config.batch_size, seed=self.config.seed, epoch=0
            )
        except ValueError:
            return None
        self.model.eval()
        gen = torch.Generator().manual_seed(step_seed(self.config.seed, 999983))
        with torch.no_grad():
            _, detail = self._compute_losses(batch, gen)
        return detail["objective"]

    def log(self, record):
        with open(self.log_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")

    def checkpoint_path(self, tag):
        return os.path.join(self.out_dir, f"checkpoint_{tag}.bin")

    def save(self, tag, extra=None):
        path = self.checkpoint_path(tag)
        save_checkpoint(
            path, self.model, self.optimizer, self.config, self.vocab,
            self.epoch, self.step, extra=extra,
        )
        self.last_checkpoint = path
        return path

    def train(self):
        """Run the configured number of epochs; returns the last checkpoint path."""
        cfg = self.config
        overfit_batch = None
        if cfg.overfit:
            if not cfg.max_steps:
                raise ValueError("overfit mode needs max_steps to bound the run")
            overfit_batch = self.loader.load_batch("train", cfg.batch_size, seed=cfg.seed)
        history = []
        done = False
        while self.epoch < cfg.epochs and not done:
            lr = self._set_lr(self.epoch)
            epoch_details = []
            if cfg.overfit:
                per_epoch = max(1, cfg.max_steps // cfg.epochs)
                batches = [overfit_batch] * per_epoch
            else:
                batches = self.loader.batches(
                    "train", cfg.batch_size, seed=cfg.seed, epoch=self.epoch
                )
            for batch in batches:
                detail = self.train_step(batch)
                epoch_details.append(detail)
                history.append(detail)
                if cfg.max_steps and self.step >= cfg.max_steps:
                    done = True
                    break
            means = {
                k: float(np.mean([d[k] for d in epoch_details]))
                for k in epoch_details[0]
            }
            val = self.validation_loss()
            record = {"epoch": self.epoch, "step": self.step, "lr": lr, **means}
            if val is not None:
                record["val_objective"] = val
                if val < self.best_val:
                    self.best_val = val
                    self.save("best", extra={"val_objective": val})
            self.log(record)
            self.epoch += 1
            if self.epoch % cfg.save_every == 0 or self.epoch == cfg.epochs or done:
                self.save("last")
        path = self.save("last")
        return path, history

    @classmethod
    def resume(cls, checkpoint_path, out_dir=None, body_model=None):
        model, meta, run_config, vocab, opt_state = load_checkpoint(checkpoint_path)
        trainer = cls.__new__(cls)
        trainer.config = run_config
        trainer.out_dir = out_dir or os.path.dirname(checkpoint_path)
        trainer.body_model = body_model if body_model is not None else ToyBodyModel()
        trainer.loader = CorpusLoader(
            run_config.corpus_dir,
            mode=run_config.mode,
            max_len=run_config.max_len or None,
            max_text_len=run_config.max_text_len or None,
            k_max=run_config.k_max,
            vocab=vocab,
        )
        trainer.vocab = vocab
        trainer.den_config = model.config
        trainer.model = model
        trainer.model.set_norm_stats(trainer.loader.norm_stats)
        trainer.schedule = make_schedule(run_config.schedule, run_config.timesteps)
        trainer.optimizer = torch.optim.Adam(
            model.parameters(), lr=run_config.lr, weight_decay=run_config.weight_decay
        )
        if opt_state is not None:
            trainer.optimizer.load_state_dict(opt_state)
        trainer.weights = LossWeights(
            lambda_vel=run_config.lambda_vel,
            lambda_pos=run_config.lambda_pos,
            lambda_pen=run_config.lambda_pen,
            lambda_dis=run_config.lambda_dis,
        )
        trainer.capsules = trainer.body_model.capsules()
        trainer.epoch = meta["epoch"]
        trainer.step = meta["step"]
        trainer.best_val = meta.get("extra", {}).get("val_objective", float("inf"))
        trainer.log_path = os.path.join(trainer.out_dir, "train_log.jsonl")
        trainer.last_checkpoint = checkpoint_path
        return trainer
