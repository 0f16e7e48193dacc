"""scikit-learn style wrapper: fit on scenarios, predict multi-mode futures.

The estimator exposes every architecture and training knob as a constructor
parameter (so ``get_params`` / ``set_params`` / ``clone`` work) and validates
its inputs the way sklearn transformers do.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import training
from .model import ModelConfig
from .scene import Scenario


def check_scenarios(X, min_count=1):
    """Validate that X is a non-empty sequence of Scenario records."""
    if isinstance(X, Scenario):
        X = [X]
    X = list(X)
    if len(X) < min_count:
        raise ValueError(f"need at least {min_count} scenario(s), got {len(X)}")
    for i, s in enumerate(X):
        if not isinstance(s, Scenario):
            raise TypeError(f"X[{i}] is {type(s).__name__}, expected Scenario")
    return X


class TrajectoryForecaster(BaseEstimator):
    """Multi-mode trajectory forecaster with decoupled intention/state queries.

    fit(X) trains on a list of Scenario records; predict(X) returns one
    ScenarioPrediction per scenario (global-frame trajectories available via
    ``global_trajectories``); score(X) is the negative refined minFDE over
    the configured mode count.
    """

    def __init__(
        self,
        width=128,
        heads=8,
        num_modes=6,
        state_queries=60,
        attn_depth=3,
        decoder_mamba_depth=2,
        encoder_mamba_depth=3,
        encoder_attn_depth=2,
        refine_radius_m=50.0,
        dropout=0.2,
        scan_expand=2,
        scan_state=16,
        cross_scene=True,
        epochs=60,
        batch_size=16,
        base_lr=3e-3,
        weight_decay=1e-2,
        warmup_epochs=10,
        seed=0,
        n_sub=3,
        history_steps=30,
        radius_m=150.0,
        clip_norm=5.0,
        verbose=False,
    ):
        self.width = width
        self.heads = heads
        self.num_modes = num_modes
        self.state_queries = state_queries
        self.attn_depth = attn_depth
        self.decoder_mamba_depth = decoder_mamba_depth
        self.encoder_mamba_depth = encoder_mamba_depth
        self.encoder_attn_depth = encoder_attn_depth
        self.refine_radius_m = refine_radius_m
        self.dropout = dropout
        self.scan_expand = scan_expand
        self.scan_state = scan_state
        self.cross_scene = cross_scene
        self.epochs = epochs
        self.batch_size = batch_size
        self.base_lr = base_lr
        self.weight_decay = weight_decay
        self.warmup_epochs = warmup_epochs
        self.seed = seed
        self.n_sub = n_sub
        self.history_steps = history_steps
        self.radius_m = radius_m
        self.clip_norm = clip_norm
        self.verbose = verbose

    def _model_config(self):
        return ModelConfig(
            width=self.width,
            heads=self.heads,
            num_modes=self.num_modes,
            state_queries=self.state_queries,
            attn_depth=self.attn_depth,
            decoder_mamba_depth=self.decoder_mamba_depth,
            encoder_mamba_depth=self.encoder_mamba_depth,
            encoder_attn_depth=self.encoder_attn_depth,
            refine_radius_m=self.refine_radius_m,
            dropout=self.dropout,
            scan_expand=self.scan_expand,
            scan_state=self.scan_state,
            cross_scene=self.cross_scene,
        )

    def _settings(self):
        return training.TrainSettings(
            epochs=self.epochs,
            batch_size=self.batch_size,
            base_lr=self.base_lr,
            weight_decay=self.weight_decay,
            warmup_epochs=self.warmup_epochs,
            seed=self.seed,
            n_sub=self.n_sub,
            history_steps=self.history_steps,
            radius_m=self.radius_m,
            clip_norm=self.clip_norm,
        )

    def fit(self, X, y=None):
        X = check_scenarios(X)
        log = print if self.verbose else None
        self.net_, self.history_ = training.train(X, self._model_config(), self._settings(), log)
        return self

    def _check_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("this TrajectoryForecaster is not fitted; call fit first")

    def predict(self, X):
        self._check_fitted()
        X = check_scenarios(X)
        return training.predict(self.net_, X, self._settings())

    def evaluate(self, X, ks=(1, 6)):
        self._check_fitted()
        X = check_scenarios(X)
        report, cv = training.evaluate(self.net_, X, self._settings(), ks=ks)
        return report, cv

    def score(self, X, y=None):
        """Negative refined minFDE over all modes (higher is better)."""
        report, _ = self.evaluate(X, ks=(self.num_modes,))
        return -report.means()[f"refined.minFDE_{self.num_modes}"]

    def save(self, path):
        self._check_fitted()
        training.save_model(path, self.net_)

    def load(self, path):
        """Attach weights from a checkpoint; architecture params must match."""
        net = training.load_model(path)
        cfg = net.cfg
        for name in (
            "width", "heads", "num_modes", "state_queries", "attn_depth",
            "decoder_mamba_depth", "encoder_mamba_depth", "encoder_attn_depth",
            "scan_expand", "scan_state",
        ):
            setattr(self, name, getattr(cfg, name))
        self.refine_radius_m = cfg.refine_radius_m
        self.dropout = cfg.dropout
        self.cross_scene = cfg.cross_scene
        self.net_ = net
        self.history_ = []
        return self
