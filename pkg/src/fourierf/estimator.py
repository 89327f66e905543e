"""scikit-learn style wrappers around the training loop and the spectral clip."""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array, check_fraction
from .data import SceneDataset
from .metrics import evaluate_images
from .spectra import clip_array
from .train import TrainConfig, train


def _as_dataset(X, background):
    if isinstance(X, SceneDataset):
        return X
    pairs = list(X)
    if not pairs:
        raise ValueError("expected a SceneDataset or a non-empty list of (camera, image) pairs")
    cameras = [c for c, _ in pairs]
    images = [np.asarray(i, dtype=np.float64) for _, i in pairs]
    return SceneDataset(cameras, images, ["train"] * len(pairs), background)


class FourieRF(BaseEstimator):
    """Few-shot radiance field regressor.

    ``fit`` takes a :class:`SceneDataset` (its ``train`` split is used) or a
    list of ``(camera, image)`` pairs. ``predict`` maps cameras to images.
    Keys of ``extra`` override any remaining :class:`TrainConfig` field.
    """

    def __init__(self, preset="synthetic", iterations=2000, batch_size=4096, decomp="vm",
                 grid=32, f0=None, delta=None, curriculum=True, n_samples=128, seed=0,
                 extra=None):
        self.preset = preset
        self.iterations = iterations
        self.batch_size = batch_size
        self.decomp = decomp
        self.grid = grid
        self.f0 = f0
        self.delta = delta
        self.curriculum = curriculum
        self.n_samples = n_samples
        self.seed = seed
        self.extra = extra

    def make_config(self):
        overrides = dict(iterations=self.iterations, batch_size=self.batch_size,
                         decomp=self.decomp, grid=self.grid, curriculum=self.curriculum,
                         n_samples=self.n_samples, seed=self.seed, eval_every=0,
                         checkpoint_every=0)
        if self.f0 is not None:
            overrides["f0"] = self.f0
        if self.delta is not None:
            overrides["delta"] = self.delta
        overrides.update(self.extra or {})
        return TrainConfig.from_preset(self.preset, **overrides)

    def fit(self, X, y=None, out_dir=None):
        cfg = self.make_config()
        dataset = _as_dataset(X, cfg.background_rgb)
        self.config_ = cfg
        self.model_, self.log_ = train(dataset, cfg, out_dir=out_dir)
        return self

    def predict(self, cameras):
        check_is_fitted(self, "model_")
        return np.stack([self.model_.render(cam)[0] for cam in cameras])

    def score(self, X, y=None):
        """Mean PSNR (dB) over ``X``: a dataset's test split, or ``(camera, image)`` pairs."""
        if isinstance(X, SceneDataset):
            X = X.test if len(X.test) else X
            pairs = list(zip(X.cameras, X.images))
        else:
            pairs = list(X)
        renders = self.predict([c for c, _ in pairs])
        return evaluate_images(list(renders), [np.asarray(i) for _, i in pairs]).mean_psnr


class FourierClip(TransformerMixin, BaseEstimator):
    """Stateless low-pass projection of factor stacks.

    ``X`` is ``(R, d)`` (vectors, clipped along the last axis) or
    ``(R, d1, d2)`` (matrices, clipped with the 2D disc).
    """

    def __init__(self, f=1.0):
        self.f = f

    def fit(self, X, y=None):
        check_array(X, name="X")
        self.f_ = check_fraction(self.f, "f")
        return self

    def transform(self, X):
        check_is_fitted(self, "f_")
        X = check_array(X, name="X")
        if X.ndim not in (2, 3):
            raise ValueError(f"X must be (R, d) or (R, d1, d2), got shape {X.shape}")
        return clip_array(X, self.f_)
