"""Losses and the staged training procedure.

Training maximizes the likelihood the reduced model assigns to observed
transitions (kinetic part) and to the marginal of the frames (equilibrium
part). It runs in three phases: the flow is first pre-trained against pure
diffusion in the reaction coordinate, the mixture potential is then fitted
on the frozen flow's coordinates, and finally all parameters are optimized
jointly with a step-decayed learning rate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .bridge import BridgeConfig, draw_bridge_noise, log_euler_density, log_transition_density
from .errors import ConfigError, DataError, NumericError
from .flow import FlowModel, build_flow, flow_forward, log_noise_factor
from .nets import AdamState, ParamVector, adam_step
from .potential import GmmPotential, build_gmm
from .trajectory import Trajectory

LOG_2PI = float(np.log(2.0 * np.pi))
LOSS_GUARD = 1e6


@dataclass
class TransitionDataset:
    """Lagged frame pairs pooled over trajectories (never across boundaries)."""

    frames: np.ndarray          # all trajectories concatenated, (N, D)
    pair_starts: np.ndarray     # global index of x_t for every usable pair
    tau_steps: int
    tau_phys: float
    frame_dt: float
    n_trajectories: int

    @classmethod
    def from_trajectories(cls, trajs, tau_steps: int,
                          tau_phys: float | None = None) -> "TransitionDataset":
        """Index every in-trajectory pair at the given lag.

        The physical lag of the reduced dynamics defaults to lag times frame
        spacing; trajectories without time units (frame_dt == 1) default to a
        unit lag instead, making the learned timescale unit the lag itself.
        """
        if isinstance(trajs, Trajectory):
            trajs = [trajs]
        if tau_steps < 1:
            raise ConfigError("lag must be at least one frame")
        arrays = [t.frames if isinstance(t, Trajectory) else np.asarray(t, dtype=np.float64)
                  for t in trajs]
        dts = {float(t.frame_dt) for t in trajs if isinstance(t, Trajectory)}
        if len(dts) > 1:
            raise ConfigError(f"trajectories disagree on frame spacing: {sorted(dts)}")
        frame_dt = dts.pop() if dts else 1.0
        starts = []
        offset = 0
        for arr in arrays:
            n = arr.shape[0]
            if n > tau_steps:
                starts.append(np.arange(offset, offset + n - tau_steps))
            offset += n
        if not starts:
            raise DataError(f"no trajectory exceeds the lag of {tau_steps} frames")
        if tau_phys is None:
            tau_phys = tau_steps * frame_dt if frame_dt != 1.0 else 1.0
        return cls(frames=np.concatenate(arrays, axis=0),
                   pair_starts=np.concatenate(starts),
                   tau_steps=tau_steps, tau_phys=float(tau_phys),
                   frame_dt=frame_dt, n_trajectories=len(arrays))

    @property
    def n_pairs(self) -> int:
        return self.pair_starts.size

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def gather(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        starts = self.pair_starts[idx]
        return self.frames[starts], self.frames[starts + self.tau_steps]


@dataclass(frozen=True)
class FlowConfig:
    n_blocks: int = 12
    hidden_widths: tuple[int, ...] = (128, 128, 128)
    scale_bound: float = 2.0


@dataclass(frozen=True)
class GmmConfig:
    n_per_axis: int = 40
    hidden_widths: tuple[int, ...] = (64, 64, 64)
    margin: float = 0.05
    sigma_floor: float = 1e-3


@dataclass(frozen=True)
class TrainConfig:
    """Everything the fit pipeline needs, serializable to one JSON object."""

    rc_dim: int = 1
    tau_steps: int = 10
    tau_phys: float | None = None
    alpha: float = 0.1
    batch_size: int = 256
    learning_rate: float = 1e-3
    lr_decay: float = 0.1
    lr_decay_every: int = 5
    epochs_pretrain: int = 5
    epochs_gmm: int = 5
    epochs_joint: int = 20
    seed: int = 0
    tica_lag: int | None = None
    tica_rank: int | None = None
    flow: FlowConfig = field(default_factory=FlowConfig)
    gmm: GmmConfig = field(default_factory=GmmConfig)
    bridge: BridgeConfig = field(default_factory=BridgeConfig)

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError("equilibrium weight must be non-negative")
        for name in ("batch_size", "epochs_pretrain", "epochs_gmm", "epochs_joint"):
            if getattr(self, name) < 0 or (name == "batch_size" and self.batch_size < 1):
                raise ConfigError(f"{name} must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["flow"]["hidden_widths"] = list(self.flow.hidden_widths)
        out["gmm"]["hidden_widths"] = list(self.gmm.hidden_widths)
        return out

    @staticmethod
    def from_dict(d: dict) -> "TrainConfig":
        d = dict(d)
        flow = d.pop("flow", {})
        gmm = d.pop("gmm", {})
        bridge = d.pop("bridge", {})
        return TrainConfig(
            **d,
            flow=FlowConfig(n_blocks=int(flow.get("n_blocks", 12)),
                            hidden_widths=tuple(flow.get("hidden_widths", (128, 128, 128))),
                            scale_bound=float(flow.get("scale_bound", 2.0))),
            gmm=GmmConfig(n_per_axis=int(gmm.get("n_per_axis", 40)),
                          hidden_widths=tuple(gmm.get("hidden_widths", (64, 64, 64))),
                          margin=float(gmm.get("margin", 0.05)),
                          sigma_floor=float(gmm.get("sigma_floor", 1e-3))),
            bridge=BridgeConfig(int(bridge.get("n_subintervals", 10)),
                                int(bridge.get("n_path_samples", 20))),
        )


# -- losses ---------------------------------------------------------------------


def loss_kin(flow: FlowModel, potential, x_t, x_tau, tau_phys: float,
             bridge_cfg: BridgeConfig, noise: np.ndarray | None) -> Tensor:
    """Negative mean log-likelihood of the observed transitions.

    Each pair contributes the reduced transition log-density between the
    projected endpoints plus the noise-factor log-density of the later
    frame. ``potential=None`` means pure diffusion in the reaction
    coordinate (the pre-training objective), for which the transition
    density is an exact Gaussian.
    """
    z_t, _, _ = flow_forward(flow, x_t)
    z_tau, v_tau, logdet_tau = flow_forward(flow, x_tau)
    if potential is None:
        log_p = log_euler_density(None, z_t, z_tau, tau_phys)
    else:
        log_p = log_transition_density(potential, z_t, z_tau, tau_phys, bridge_cfg, noise)
    noise_dim = flow.noise_dim
    log_s = ad.square(v_tau).sum(axis=1) * (-0.5) - 0.5 * noise_dim * LOG_2PI + logdet_tau
    return -(log_p + log_s).mean()


def loss_eq(flow: FlowModel, potential: GmmPotential, frames) -> Tensor:
    """Negative mean log-likelihood of frames under the stationary model."""
    z, v, logdet = flow_forward(flow, frames)
    log_s = ad.square(v).sum(axis=1) * (-0.5) - 0.5 * flow.noise_dim * LOG_2PI + logdet
    return -(potential.log_mu(z) + log_s).mean()


def loss_total(flow: FlowModel, potential: GmmPotential, x_t, x_tau, eq_frames,
               tau_phys: float, bridge_cfg: BridgeConfig, noise, alpha: float
               ) -> tuple[Tensor, Tensor, Tensor]:
    """Weighted objective; returns (total, kinetic, equilibrium)."""
    kin = loss_kin(flow, potential, x_t, x_tau, tau_phys, bridge_cfg, noise)
    eq = loss_eq(flow, potential, eq_frames)
    return kin + eq * alpha, kin, eq


def _batch_losses(flow: FlowModel, potential, x_t, x_tau, tau_phys, bridge_cfg,
                  noise, alpha: float, want_eq: bool) -> tuple[Tensor, Tensor | None, Tensor | None]:
    """Shared-forward version of the losses used by the training loop.

    Runs the flow once on the stacked batch; the equilibrium term is taken
    over the union of both pair endpoints, which covers every frame across
    an epoch at no extra forward cost.
    """
    n = x_t.shape[0]
    stacked = Tensor(np.concatenate([x_t, x_tau], axis=0))
    z, v, logdet = flow_forward(flow, stacked)
    log_s = ad.square(v).sum(axis=1) * (-0.5) - 0.5 * flow.noise_dim * LOG_2PI + logdet
    z_t = ad.slice_rows(z, 0, n)
    z_tau = ad.slice_rows(z, n, 2 * n)
    if potential is None:
        log_p = log_euler_density(None, z_t, z_tau, tau_phys)
    else:
        log_p = log_transition_density(potential, z_t, z_tau, tau_phys, bridge_cfg, noise)
    kin = -(log_p + ad.slice_rows(log_s, n, 2 * n)).mean()
    if not want_eq:
        return kin, kin, None
    eq = -(potential.log_mu(z) + log_s).mean()
    return kin + eq * alpha, kin, eq


# -- training loop ----------------------------------------------------------------


def iterate_batches(n_items: int, batch_size: int, rng: np.random.Generator):
    """Yield disjoint shuffled index batches covering every item once."""
    perm = rng.permutation(n_items)
    for lo in range(0, n_items, batch_size):
        yield perm[lo : lo + batch_size]


@dataclass
class EpochRecord:
    phase: str
    epoch: int
    loss_kin: float
    loss_eq: float
    loss_total: float
    learning_rate: float

    def to_dict(self) -> dict:
        return asdict(self)


class _GmmFrozenFlowDataset:
    """Pre-projected dataset for the potential-initialization phase.

    With the flow frozen its outputs are constants, so they are computed
    once and the phase trains only the mixture networks.
    """

    def __init__(self, flow: FlowModel, dataset: TransitionDataset):
        with ad.no_grad():
            chunks = []
            for lo in range(0, dataset.frames.shape[0], 16384):
                z, v, logdet = flow_forward(flow, dataset.frames[lo : lo + 16384])
                noise_term = (-0.5 * (v.data**2).sum(axis=1)
                              - 0.5 * flow.noise_dim * LOG_2PI + logdet.data)
                chunks.append((z.data, noise_term))
        self.z = np.concatenate([c[0] for c in chunks], axis=0)
        self.log_s = np.concatenate([c[1] for c in chunks])
        self.starts = dataset.pair_starts
        self.tau_steps = dataset.tau_steps

    def gather(self, idx):
        s = self.starts[idx]
        return (self.z[s], self.z[s + self.tau_steps],
                self.log_s[s], self.log_s[s + self.tau_steps])


_PHASE_IDS = {"pretrain": 1, "gmm_init": 2, "joint": 3}


def _run_phase(phase: str, dataset: TransitionDataset, cfg: TrainConfig,
               n_epochs: int, base_lr_schedule, batch_step, params: ParamVector,
               history: list[EpochRecord], epoch_offset: int = 0) -> None:
    """Generic epoch/batch loop with Adam and the divergence guard."""
    if n_epochs == 0:
        return
    adam = AdamState.initialize(params.size, learning_rate=base_lr_schedule(0))
    for epoch in range(n_epochs):
        lr = base_lr_schedule(epoch)
        adam = replace(adam, learning_rate=lr)
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, _PHASE_IDS[phase], epoch_offset + epoch]))
        kin_sum = eq_sum = tot_sum = 0.0
        n_batches = 0
        for batch_idx in iterate_batches(dataset.n_pairs, cfg.batch_size, rng):
            total, kin, eq = batch_step(batch_idx, rng)
            value = float(total.data)
            if not np.isfinite(value) or abs(value) > LOSS_GUARD:
                raise NumericError(
                    f"{phase} diverged at epoch {epoch_offset + epoch + 1}, "
                    f"batch {n_batches + 1}: loss {value:g}")
            params.zero_grad()
            total.backward()
            adam, new_values = adam_step(adam, params.flat(), params.flat_grad())
            params.set_flat(new_values)
            kin_sum += float(kin.data)
            eq_sum += 0.0 if eq is None else float(eq.data)
            tot_sum += value
            n_batches += 1
        history.append(EpochRecord(
            phase=phase, epoch=epoch_offset + epoch + 1,
            loss_kin=kin_sum / n_batches, loss_eq=eq_sum / n_batches,
            loss_total=tot_sum / n_batches, learning_rate=lr))


def pretrain_flow(flow: FlowModel, dataset: TransitionDataset, cfg: TrainConfig,
                  history: list[EpochRecord] | None = None) -> list[EpochRecord]:
    """Phase one: train the flow against pure reaction-coordinate diffusion."""
    history = history if history is not None else []
    params = flow.parameters()

    def step(batch_idx, rng):
        x_t, x_tau = dataset.gather(batch_idx)
        return _batch_losses(flow, None, x_t, x_tau, dataset.tau_phys,
                             cfg.bridge, None, cfg.alpha, want_eq=False)

    _run_phase("pretrain", dataset, cfg, cfg.epochs_pretrain,
               lambda _e: cfg.learning_rate, step, params, history)
    return history


def rc_bounds(flow: FlowModel, dataset: TransitionDataset, margin: float) -> tuple[np.ndarray, np.ndarray]:
    """Min/max of the projected data per axis, widened by the relative margin."""
    with ad.no_grad():
        mins, maxs = None, None
        for lo in range(0, dataset.frames.shape[0], 16384):
            z, _, _ = flow_forward(flow, dataset.frames[lo : lo + 16384])
            lo_chunk = z.data.min(axis=0)
            hi_chunk = z.data.max(axis=0)
            mins = lo_chunk if mins is None else np.minimum(mins, lo_chunk)
            maxs = hi_chunk if maxs is None else np.maximum(maxs, hi_chunk)
    pad = margin * (maxs - mins)
    return mins - pad, maxs + pad


def init_gmm(flow: FlowModel, dataset: TransitionDataset, cfg: TrainConfig,
             history: list[EpochRecord] | None = None,
             rng: np.random.Generator | None = None) -> GmmPotential:
    """Phase two: grid the projected data and fit the mixture, flow frozen."""
    history = history if history is not None else []
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + 1)
    lb, ub = rc_bounds(flow, dataset, cfg.gmm.margin)
    potential = build_gmm(lb, ub, cfg.gmm.n_per_axis, cfg.gmm.hidden_widths,
                          rng=rng, sigma_floor=cfg.gmm.sigma_floor)
    projected = _GmmFrozenFlowDataset(flow, dataset)
    params = potential.parameters()

    def step(batch_idx, batch_rng):
        z_t, z_tau, log_s_t, log_s_tau = projected.gather(batch_idx)
        noise = draw_bridge_noise(batch_rng, z_t.shape[0], cfg.bridge, potential.rc_dim)
        log_p = log_transition_density(potential, Tensor(z_t), Tensor(z_tau),
                                       dataset.tau_phys, cfg.bridge, noise)
        kin = -(log_p + Tensor(log_s_tau)).mean()
        stacked_z = np.concatenate([z_t, z_tau], axis=0)
        # the frozen-flow noise factors are constants; only log mu trains here
        eq = (-potential.log_mu(stacked_z).mean()
              - float(np.concatenate([log_s_t, log_s_tau]).mean()))
        return kin + eq * cfg.alpha, kin, eq

    _run_phase("gmm_init", dataset, cfg, cfg.epochs_gmm,
               lambda _e: cfg.learning_rate, step, params, history)
    return potential


def train_joint(flow: FlowModel, potential: GmmPotential, dataset: TransitionDataset,
                cfg: TrainConfig, history: list[EpochRecord] | None = None,
                epoch_offset: int = 0) -> list[EpochRecord]:
    """Phase three: all parameters together, learning rate decayed stepwise."""
    history = history if history is not None else []
    params = ParamVector.concat(flow.parameters(), potential.parameters())

    def lr_at(epoch: int) -> float:
        return cfg.learning_rate * cfg.lr_decay ** ((epoch_offset + epoch) // cfg.lr_decay_every)

    def step(batch_idx, rng):
        x_t, x_tau = dataset.gather(batch_idx)
        noise = draw_bridge_noise(rng, x_t.shape[0], cfg.bridge, potential.rc_dim)
        return _batch_losses(flow, potential, x_t, x_tau, dataset.tau_phys,
                             cfg.bridge, noise, cfg.alpha, want_eq=True)

    _run_phase("joint", dataset, cfg, cfg.epochs_joint, lr_at, step, params,
               history, epoch_offset=epoch_offset)
    return history


def fit_pipeline(trajs, cfg: TrainConfig):
    """Run preprocessing and all three phases; returns a checkpoint bundle."""
    from .checkpoint import Checkpoint
    from .tica import fit_reconstruction, fit_tica, tica_transform

    if isinstance(trajs, Trajectory):
        trajs = [trajs]
    if not trajs:
        raise DataError("no training trajectories")
    tica_model = None
    if cfg.tica_lag is not None:
        tica_model = fit_tica(trajs, cfg.tica_lag, rank=cfg.tica_rank)
        tica_model = fit_reconstruction(tica_model, trajs)
        trajs = [tica_transform(tica_model, t) for t in trajs]
    dataset = TransitionDataset.from_trajectories(trajs, cfg.tau_steps, cfg.tau_phys)
    if cfg.rc_dim >= dataset.dim:
        raise ConfigError(
            f"rc_dim {cfg.rc_dim} must be smaller than the data dimension {dataset.dim}")
    rng = np.random.default_rng(cfg.seed)
    flow = build_flow(dataset.dim, cfg.rc_dim, cfg.flow.n_blocks,
                      cfg.flow.hidden_widths, cfg.flow.scale_bound, rng)
    history: list[EpochRecord] = []
    pretrain_flow(flow, dataset, cfg, history)
    potential = init_gmm(flow, dataset, cfg, history, rng)
    train_joint(flow, potential, dataset, cfg, history)
    return Checkpoint(config=cfg, tica=tica_model, flow=flow, potential=potential,
                      history=[h.to_dict() for h in history],
                      tau_phys=dataset.tau_phys, frame_dt=dataset.frame_dt)
