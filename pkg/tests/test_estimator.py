import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from mbcrnet.estimator import EcgPreprocessor, MBCRNetClassifier
from mbcrnet.synth import SynthConfig, generate


def test_get_set_params_and_clone():
    clf = MBCRNetClassifier(variant="T", epochs=3)
    params = clf.get_params()
    assert params["variant"] == "T" and params["epochs"] == 3
    copy = clone(clf).set_params(seed=9)
    assert copy.seed == 9 and clf.seed == 0


def test_unfitted_predict():
    with pytest.raises(NotFittedError):
        MBCRNetClassifier().predict(np.zeros((1, 8, 200)))


def test_fit_predict_on_preprocessed(synth_small):
    _, X, y = synth_small
    clf = MBCRNetClassifier(epochs=2, batch_size=16).fit(X, y)
    proba = clf.predict_proba(X)
    assert proba.shape == (len(X), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    assert set(np.unique(clf.predict(X))) <= {0, 1}
    assert 0.0 <= clf.score(X, y) <= 1.0
    assert len(clf.loss_trace_) == 2


def test_single_lead_selects_lead(synth_small):
    _, X, y = synth_small
    clf = MBCRNetClassifier(variant="single", lead="V1", epochs=1).fit(X, y)
    assert clf.model_.spec.n_leads == 1
    assert clf.predict(X[:, 2:3, :]).tolist() == clf.predict(X).tolist()


def test_rejects_bad_shapes(synth_small):
    _, X, y = synth_small
    with pytest.raises(ValueError):
        MBCRNetClassifier(epochs=1).fit(X[:, :, :1999], y)
    with pytest.raises(ValueError):
        MBCRNetClassifier(epochs=1).fit(X[:, 0, :], y)


def test_pipeline_from_records():
    records = generate(SynthConfig(seed=1, n_records=12))
    y = EcgPreprocessor.labels(records)
    pipe = make_pipeline(EcgPreprocessor(), MBCRNetClassifier(epochs=1, batch_size=4))
    pipe.fit(records, y)
    assert pipe.predict(records).shape == (12,)
