import pytest

from deep_bow.errors import LeakageError
from deep_bow.services.ledger import FitLedger


def test_records_are_sorted_and_scoped():
    ledger = FitLedger()
    ledger.record("cv/rep000", "codebook", ["s3", "s1"])
    ledger.record("cv/rep001", "svm", ["s2"])
    ledger.record("heldout/round0/m00", "svm", ["s1"])
    assert ledger.records[0].subject_ids == ("s1", "s3")
    assert [r.stage for r in ledger.within("cv/rep000")] == ["codebook"]
    assert len(ledger.within("heldout/round0")) == 1
    assert ledger.within("cv/rep00") == []


def test_audit_passes_on_disjoint_fits():
    ledger = FitLedger()
    ledger.record("cv/rep000", "normalizer", ["a", "b"])
    ledger.record("cv/rep000", "svm", ["a", "b"])
    ledger.record("pool", "autoencoder", ["a", "b", "c"])
    assert ledger.audit({"cv/rep000": ["c"]}) == 2


def test_audit_catches_held_out_subjects():
    ledger = FitLedger()
    ledger.record("heldout/round1/pool", "autoencoder", ["a", "b"])
    with pytest.raises(LeakageError, match="heldout/round1/pool"):
        ledger.audit({"heldout/round1": ["b"]})


def test_extend_and_rows():
    a, b = FitLedger(), FitLedger()
    a.record("cv/rep000", "grid", ["x"])
    b.record("cv/rep001", "grid", ["y", "z"])
    a.extend(b)
    assert len(a) == 2
    assert a.to_rows()[1] == {"scope": "cv/rep001", "stage": "grid", "n_subjects": 2, "subject_ids": "y z"}
