"""Two-stage adversarial training loop.

One outer iteration: encode the image batch once and draw z; run t critic
updates on the sparse stage (generated vs ground-truth sparse clouds),
then one generator+encoder update; run t critic updates on the dense
stage (upsampled vs ground-truth dense clouds), then one
upsampler+encoder update with the combined adversarial / KL / Chamfer /
EMD objective.  Everything stochastic draws from named, checkpointed RNG
streams, so runs are reproducible and resumable bit-for-bit.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import losses, metrics
from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig, config_digest, config_from_text, config_to_text
from .critic import Critic, gradient_penalty_batch
from .data import load_dataset, random_subsample
from .encoder import Z_DIM, ImageEncoder
from .errors import CheckpointError, ContractViolation, TrainingDiverged
from .optim import Adam
from .stage1 import Stage1Generator, TreeLayerSpec, default_widths
from .stage2 import Stage2Generator, UpsampleConfig

RNG_STREAMS = ("data", "z", "gp", "emd")


class Models:
    """Encoder, both generators and both critics built from one config."""

    def __init__(self, cfg: TrainConfig, seed_seq=None):
        if seed_seq is None:
            seed_seq = np.random.SeedSequence(cfg.seed)
        enc_ss, g1_ss, g2_ss, c1_ss, c2_ss = seed_seq.spawn(5)
        widths = cfg.stage1_widths or default_widths(cfg.degrees, z_dim=Z_DIM)
        self.spec = TreeLayerSpec(cfg.degrees, widths, support=cfg.support)
        self.encoder = ImageEncoder(np.random.default_rng(enc_ss),
                                    image_size=cfg.image_size,
                                    attn_lam=cfg.attn_lam)
        self.gen1 = Stage1Generator(np.random.default_rng(g1_ss), self.spec)
        self.gen2 = Stage2Generator(
            np.random.default_rng(g2_ss),
            UpsampleConfig(ratio=cfg.ratio, feature_width=cfg.feature_width,
                           block_widths=cfg.extractor_widths,
                           expand_blocks=cfg.expand_blocks,
                           support=cfg.support,
                           recon_hidden=cfg.recon_hidden))
        self.critic1 = Critic(np.random.default_rng(c1_ss))
        self.critic2 = Critic(np.random.default_rng(c2_ss))
        self.nets = {"enc": self.encoder, "g1": self.gen1, "g2": self.gen2,
                     "c1": self.critic1, "c2": self.critic2}

    def named_tensors(self):
        out = {}
        for net, model in self.nets.items():
            for name, p in model.params.items():
                out[f"{net}/{name}"] = p.data
        return out

    def load_tensors(self, table):
        own = {}
        for net, model in self.nets.items():
            for name, p in model.params.items():
                own[f"{net}/{name}"] = p
        missing = [n for n in own if n not in table]
        if missing:
            raise CheckpointError(f"checkpoint lacks tensors: {missing[:4]}...")
        for name, p in own.items():
            arr = table[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise CheckpointError(
                    f"tensor {name}: checkpoint shape {arr.shape} does not "
                    f"match architecture {p.shape}")
            p.data = arr.astype(p.data.dtype)


def duplicate_upsample(sparse, ratio):
    """Baseline 'upsampler': repeat every sparse point ratio times."""
    sparse = np.asarray(sparse)
    return np.repeat(sparse, ratio, axis=0)


class Trainer:
    def __init__(self, cfg: TrainConfig, data_dir, out_dir, resume=None,
                 quiet=False):
        cfg.validate()
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.quiet = quiet
        data_dir = data_dir or cfg.data_dir
        if not data_dir:
            raise ContractViolation("no dataset directory given")
        self.train_recs = load_dataset(data_dir, split="train")
        self.test_recs = load_dataset(data_dir, split="test")
        self._check_data()

        root = np.random.SeedSequence(cfg.seed)
        params_ss, ss_data, ss_z, ss_gp, ss_emd = root.spawn(5)
        self.models = Models(cfg, params_ss)
        self.rngs = {
            "data": np.random.default_rng(ss_data),
            "z": np.random.default_rng(ss_z),
            "gp": np.random.default_rng(ss_gp),
            "emd": np.random.default_rng(ss_emd),
        }
        self.weights = losses.LossWeights(
            lam_gp=cfg.lam_gp, w_adv=cfg.w_adv, w_kl=cfg.w_kl,
            w_cd=cfg.w_cd, w_emd=cfg.w_emd, stage1_cd=cfg.stage1_cd)
        self.opts = {
            net: Adam(model.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
            for net, model in self.models.nets.items()
        }
        self.updates = {net: 0 for net in self.models.nets}
        self.iteration = 0
        self.resumed = False
        if resume is not None:
            self._load(resume)

    # -- plumbing --------------------------------------------------------------

    def _check_data(self):
        cfg = self.cfg
        for rec in self.train_recs + self.test_recs:
            if rec["sparse"].shape != (cfg.sparse_points, 3):
                raise ContractViolation(
                    f"sample {rec['id']}: sparse cloud {rec['sparse'].shape} "
                    f"does not match configured {cfg.sparse_points} points")
            if rec["dense"].shape != (cfg.dense_points, 3):
                raise ContractViolation(
                    f"sample {rec['id']}: dense cloud {rec['dense'].shape} "
                    f"does not match configured {cfg.dense_points} points")
            if rec["image"].shape != (cfg.image_size, cfg.image_size):
                raise ContractViolation(
                    f"sample {rec['id']}: image {rec['image'].shape} does not "
                    f"match configured size {cfg.image_size}")

    def _header(self):
        return {
            "config": config_to_text(self.cfg, comments=False),
            "config_digest": config_digest(self.cfg),
            "iteration": self.iteration,
            "rng": {k: _state_to_json(v) for k, v in self.rngs.items()},
            "opt_steps": {k: self.opts[k].state.get("t", 0) for k in self.opts},
            "updates": dict(self.updates),
        }

    def save(self, path):
        tensors = self.models.named_tensors()
        for net, opt in self.opts.items():
            tensors.update(opt.state_tensors(f"adam/{net}"))
        save_checkpoint(path, self._header(), tensors)

    def _load(self, path):
        header, tensors = load_checkpoint(path)
        if header.get("config_digest") != config_digest(self.cfg):
            raise CheckpointError(
                "checkpoint was trained with a different configuration "
                f"(digest {header.get('config_digest', '?')[:12]} vs "
                f"{config_digest(self.cfg)[:12]})")
        self.models.load_tensors(tensors)
        for net, opt in self.opts.items():
            t = header["opt_steps"].get(net, 0)
            if t:
                opt.load_state_tensors(f"adam/{net}", tensors, t)
        for name in RNG_STREAMS:
            self.rngs[name].bit_generator.state = _state_from_json(
                header["rng"][name])
        self.iteration = int(header["iteration"])
        self.updates = {k: int(v) for k, v in header["updates"].items()}
        self.resumed = True

    # -- batch assembly -----------------------------------------------------------

    def _next_batch(self):
        cfg = self.cfg
        n = len(self.train_recs)
        idx = self.rngs["data"].choice(n, size=cfg.batch_size,
                                       replace=n < cfg.batch_size)
        images = np.stack([self.train_recs[i]["image"] for i in idx])[..., None]
        sparse = np.concatenate([self.train_recs[i]["sparse"] for i in idx])
        dense = np.concatenate([self.train_recs[i]["dense"] for i in idx])
        return images.astype(np.float32), sparse, dense

    # -- one critic update -----------------------------------------------------------

    def _critic_update(self, net, fake_rows, real_rows):
        cfg = self.cfg
        critic = self.models.nets[net]
        opt = self.opts[net]
        opt.zero_grad()
        s_fake = critic.score_batch(fake_rows, cfg.batch_size)
        s_real = critic.score_batch(real_rows, cfg.batch_size)
        gp = gradient_penalty_batch(real_rows, fake_rows, critic, cfg.lam_gp,
                                    self.rngs["gp"], cfg.batch_size)
        lc = losses.loss_critic(s_fake, s_real, gp)
        lc.backward()
        opt.step()
        self.updates[net] += 1
        return float(lc.data), float(gp.data)

    # -- one outer iteration -----------------------------------------------------------

    def _step(self):
        cfg = self.cfg
        m = self.models
        B = cfg.batch_size
        images, sparse_rows, dense_rows = self._next_batch()

        mu, log_std = m.encoder.forward(images)
        eps = self.rngs["z"].standard_normal((B, Z_DIM)).astype(np.float32)
        z_graph = T.add(mu, T.mul(T.exp(log_std), T.Tensor(eps)))
        z_np = z_graph.data.copy()

        row = {}
        run1 = cfg.stage in ("1", "both")
        run2 = cfg.stage in ("2", "both")

        if run1:
            fake1 = m.gen1.generate_np(z_np)
            for _ in range(cfg.critic_iters):
                row["c1"], row["gp1"] = self._critic_update("c1", fake1, sparse_rows)
            self.opts["g1"].zero_grad()
            self.opts["enc"].zero_grad()
            y1 = m.gen1.generate(z_graph)
            adv = losses.loss_generator_adv(m.critic1.score_batch(y1, B))
            cd = losses.chamfer_loss_batch(y1, sparse_rows, B)
            l1 = losses.loss_stage1(adv, cd, self.weights)
            l1.backward()
            self.opts["g1"].step()
            self.opts["enc"].step()
            self.updates["g1"] += 1
            self.updates["enc"] += 1
            row["g1"] = float(l1.data)

        if run2:
            with T.no_grad():
                fake1b = m.gen1.generate_np(z_np)
                fake2 = m.gen2.upsample_np(fake1b, B)
            for _ in range(cfg.critic_iters):
                row["c2"], row["gp2"] = self._critic_update("c2", fake2, dense_rows)
            self.opts["g2"].zero_grad()
            self.opts["enc"].zero_grad()
            self.opts["g1"].zero_grad()  # path to the encoder runs through g1
            y1 = m.gen1.generate(z_graph)
            y2 = m.gen2.upsample(y1, B)
            adv2 = losses.loss_generator_adv(m.critic2.score_batch(y2, B))
            kl = losses.loss_kl(mu, log_std)
            cd2 = losses.chamfer_loss_batch(y2, dense_rows, B)
            emd2 = self._emd_loss(y2, dense_rows, B)
            lu = losses.loss_stage2(adv2, kl, cd2, emd2, self.weights)
            lu.backward()
            self.opts["g2"].step()
            self.opts["enc"].step()
            self.updates["g2"] += 1
            self.updates["enc"] += 1
            row.update(gu=float(lu.data), adv2=float(adv2.data),
                       kl=float(kl.data), cd2=float(cd2.data),
                       emd2=float(emd2.data))

        bad = [k for k, v in row.items() if not np.isfinite(v)]
        if bad:
            raise TrainingDiverged(self.iteration,
                                   f"non-finite loss terms: {', '.join(bad)}")
        return row

    def _emd_loss(self, y2, dense_rows, batch):
        cfg = self.cfg
        nh = cfg.dense_points
        k = min(cfg.emd_loss_subset, nh)
        total = None
        for b in range(batch):
            pi = self.rngs["emd"].choice(nh, size=k, replace=False) + b * nh
            gi = self.rngs["emd"].choice(nh, size=k, replace=False) + b * nh
            term = losses.emd_loss(T.gather_rows(y2, pi), dense_rows[gi],
                                   rel_accuracy=0.05)
            total = term if total is None else T.add(total, term)
        return T.mul(total, 1.0 / batch)

    # -- held-out probe -----------------------------------------------------------

    def probe(self):
        """Mean-form CD and subset EMD of upsampled outputs on held-out data."""
        cfg = self.cfg
        m = self.models
        recs = self.test_recs[:cfg.probe_size]
        cds, emds = [], []
        k = min(256, cfg.dense_points)
        with T.no_grad():
            for rec in recs:
                mu, _ = m.encoder.forward(rec["image"][None, :, :, None])
                y1 = m.gen1.generate_np(mu.data)
                y2 = m.gen2.upsample_np(y1, 1)
                cds.append(metrics.chamfer(y2, rec["dense"])[1])
                a = random_subsample(y2, k, seed=rec["seed"] % (2 ** 31))
                bsub = random_subsample(rec["dense"], k, seed=rec["seed"] % (2 ** 31) + 1)
                emds.append(metrics.emd(a, bsub, mode="approx", rel_accuracy=0.01))
        return float(np.mean(cds)), float(np.mean(emds))

    # -- main loop -----------------------------------------------------------

    def train(self):
        cfg = self.cfg
        self.out_dir.mkdir(parents=True, exist_ok=True)
        log_path = self.out_dir / "metrics.log"
        mode = "a" if self.resumed else "w"
        t_start = time.time()
        with open(log_path, mode, encoding="utf-8") as log:
            if not self.resumed:
                self.save(self.out_dir / "initial.sgpc")
                cd0, emd0 = self.probe()
                log.write(f"iter=0 probe_cd={cd0:.6g} probe_emd={emd0:.6g}\n")
                log.flush()
            while self.iteration < cfg.iterations:
                self.iteration += 1
                row = self._step()
                if self.iteration % cfg.log_interval == 0 \
                        or self.iteration == cfg.iterations:
                    cd, em = self.probe()
                    row.update(probe_cd=cd, probe_emd=em)
                    fields = " ".join(f"{k}={v:.6g}" for k, v in row.items())
                    log.write(f"iter={self.iteration} {fields}\n")
                    log.flush()
                    if not self.quiet:
                        dt = time.time() - t_start
                        print(f"[{dt:7.1f}s] iter {self.iteration}/{cfg.iterations} "
                              f"probe_cd={cd:.5f} probe_emd={em:.4f}", flush=True)
                if self.iteration % cfg.checkpoint_interval == 0:
                    self.save(self.out_dir / "latest.sgpc")
            self.save(self.out_dir / "latest.sgpc")
            self.save(self.out_dir / "final.sgpc")
        return self.out_dir / "final.sgpc"


def _state_to_json(gen):
    return gen.bit_generator.state


def _state_from_json(state):
    return state


def load_models(path):
    """Rebuild Models (and the saved RNG streams) from a checkpoint."""
    header, tensors = load_checkpoint(path)
    cfg = config_from_text(header["config"])
    models = Models(cfg)
    models.load_tensors(tensors)
    rngs = {}
    for name in RNG_STREAMS:
        g = np.random.default_rng(0)
        g.bit_generator.state = _state_from_json(header["rng"][name])
        rngs[name] = g
    return cfg, models, header, rngs
