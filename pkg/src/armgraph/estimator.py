"""scikit-learn style wrappers around tagging and the mean-field classifier.

    from sklearn.pipeline import make_pipeline
    clf = make_pipeline(CallGraphTagger(), S2VClassifier(num_epochs=50))
    clf.fit(recoveries, labels)

``CallGraphTagger`` consumes :class:`~armgraph.cfg.Recovery` objects and
emits :class:`~armgraph.prep.LabeledGraph`; ``S2VClassifier`` consumes
those graphs.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import model
from .prep import UNKNOWN_TAG, TagDictionary, extend_tag_dictionary, graph_blocks, recovery_to_graph
from .validation import check_graphs, check_labels, map_unknown_tags


class CallGraphTagger(TransformerMixin, BaseEstimator):
    """Learn a block-bytes tag dictionary and turn recoveries into graphs.

    Parameters
    ----------
    source : {"call_graph", "cfg"}
        Which recovered graph becomes the classifier input.
    include_libraries : bool
        Keep functions that live in loaded shared libraries.
    """

    def __init__(self, source="call_graph", include_libraries=False):
        self.source = source
        self.include_libraries = include_libraries

    def fit(self, X, y=None):
        if self.source not in ("call_graph", "cfg"):
            raise ValueError(f"unknown source {self.source!r}")
        tags = TagDictionary()
        for recovery in X:
            extend_tag_dictionary(graph_blocks(recovery, self.source, self.include_libraries), tags)
        self.tag_dictionary_ = tags
        self.n_tags_ = len(tags)
        return self

    def transform(self, X):
        check_is_fitted(self, "tag_dictionary_")
        return [
            recovery_to_graph(r, self.tag_dictionary_, self.source, self.include_libraries,
                              unknown_tag=UNKNOWN_TAG)
            for r in X
        ]


class S2VClassifier(ClassifierMixin, BaseEstimator):
    """Mean-field structure2vec graph classifier.

    Parameter names follow the original structure2vec command line.
    ``feat_dim`` and ``num_class`` left at 0 are inferred during ``fit``.
    Labels are used directly as class indices, so ``classes_`` is
    ``arange(num_class)``. At prediction time node tags above ``feat_dim``
    are mapped to the unknown tag 0 unless ``unknown_tags="error"``.
    """

    def __init__(self, gm="mean_field", batch_size=50, seed=1, feat_dim=0, num_class=0,
                 num_epochs=1000, latent_dim=64, out_dim=1024, hidden=100, max_lv=4,
                 learning_rate=0.0001, optimizer="adam", mode="cpu", unknown_tags="map"):
        self.gm = gm
        self.batch_size = batch_size
        self.seed = seed
        self.feat_dim = feat_dim
        self.num_class = num_class
        self.num_epochs = num_epochs
        self.latent_dim = latent_dim
        self.out_dim = out_dim
        self.hidden = hidden
        self.max_lv = max_lv
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.mode = mode
        self.unknown_tags = unknown_tags

    def _hyperparams(self) -> model.Hyperparams:
        names = {f.name for f in dataclasses.fields(model.Hyperparams)}
        return model.Hyperparams(**{k: v for k, v in self.get_params().items() if k in names})

    def fit(self, X, y=None):
        graphs = check_graphs(X)
        y = check_labels(y, graphs)
        self.params_, self.train_report_, self.hyperparams_ = model.train(
            graphs, self._hyperparams(), labels=y)
        self.classes_ = np.arange(self.hyperparams_.num_class)
        self.feat_dim_ = self.hyperparams_.feat_dim
        return self

    def _graphs(self, X):
        check_is_fitted(self, "params_")
        return map_unknown_tags(check_graphs(X), self.feat_dim_, self.unknown_tags)

    def predict_proba(self, X):
        graphs = self._graphs(X)
        out = np.empty((len(graphs), len(self.classes_)))
        for i, g in enumerate(graphs):
            out[i] = model.classify(g, self.params_, self.hyperparams_.max_lv).p
        return out

    def predict(self, X):
        proba = self.predict_proba(X)
        if not len(proba):
            return np.empty(0, dtype=np.int64)
        return self.classes_[np.argmax(proba, axis=1)]

    def save(self, path):
        check_is_fitted(self, "params_")
        model.save_checkpoint(path, self.params_, self.hyperparams_)

    @classmethod
    def load(cls, path) -> S2VClassifier:
        params, hp = model.load_checkpoint(path)
        return cls.from_params(params, hp)

    @classmethod
    def from_params(cls, params: model.ModelParams, hp: model.Hyperparams) -> S2VClassifier:
        params.check()
        names = set(cls._get_param_names())
        est = cls(**{k: v for k, v in dataclasses.asdict(hp).items() if k in names})
        est.params_ = params
        est.hyperparams_ = dataclasses.replace(hp, feat_dim=params.feat_dim, num_class=params.num_class)
        est.train_report_ = model.TrainReport()
        est.classes_ = np.arange(params.num_class)
        est.feat_dim_ = params.feat_dim
        return est
