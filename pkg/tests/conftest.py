import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from survdpm import dataset as dsm
from survdpm import synthetic, target_space
from survdpm.denoiser import DenoiserNet, FeatureLayout, NetConfig
from survdpm.schedule import cosine_schedule
from survdpm.training import TrainConfig, train


def make_cox_weibull(target_rate=0.5, n=500, d=6, master=2026):
    """Calibrated synthetic survival dataset plus its generator."""
    rng = np.random.default_rng(np.random.SeedSequence(master, spawn_key=(int(target_rate * 100),)))
    xs = synthetic.gaussian_features(n, d, rng)
    model = synthetic.random_model(d, rng)
    c_max = synthetic.calibrate_censoring(model, xs, target_rate, rng)
    model = synthetic.with_c_max(model, c_max)
    ds = synthetic.generate_dataset(model, xs, rng)
    return ds, model, xs


SMALL_NET = NetConfig(
    hidden_layers=2, hidden_dim=64, activation="silu", norm_mode="none",
    dropout_rate=0.2, fourier_m=8, fourier_init_scale=0.05,
    cat_embed_dim=8, step_embed_dim=16, noise_embed=False,
)
STUDY_NET = NetConfig(
    hidden_layers=3, hidden_dim=128, activation="silu", norm_mode="none",
    dropout_rate=0.2, fourier_m=8, fourier_init_scale=0.05,
    cat_embed_dim=8, step_embed_dim=16, noise_embed=False,
)
STUDY_TRAIN = TrainConfig(
    batch_size=64, learning_rate=1e-3, weight_decay=1e-4, epochs=1500,
    seed=0, patience=200, val_replicas=16,
)


@pytest.fixture(scope="session")
def trained_half_rate():
    """One trained model on the 50%-event synthetic regime, shared by the
    slower acceptance checks."""
    ds, model, xs = make_cox_weibull(0.5)
    split = dsm.stratified_split(ds, (0.7, 0.15, 0.15), seed=2027)
    tf = target_space.fit(ds.times[split.train])
    sched = cosine_schedule(20)
    net = DenoiserNet(FeatureLayout.from_specs(ds.specs), STUDY_NET, np.random.default_rng(11))
    cfg = TrainConfig(
        batch_size=64, learning_rate=1e-3, weight_decay=1e-4, epochs=1500,
        seed=13, patience=200, val_replicas=16,
    )
    net, history = train(net, dsm.subset(ds, split.train), dsm.subset(ds, split.validation),
                         tf, sched, cfg)
    return {
        "ds": ds, "model": model, "xs": xs, "split": split,
        "tf": tf, "sched": sched, "net": net, "history": history,
    }
