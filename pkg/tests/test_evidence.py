import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specmap.compare import LegendRelation
from specmap.errors import ConfigError, DataError
from specmap.evidence import (
    EvidenceVector,
    combine,
    read_evidence_csv,
    write_scores_csv,
)


def relation():
    return LegendRelation(
        ("green", "white", "unknown"),
        ("forest", "water", "roof"),
        np.array([[1, 0, 0], [0, 0, 1], [1, 1, 1]], dtype=np.int8),
    )


def vector(color, shape, texture, spatial):
    return EvidenceVector(color, np.array(shape), np.array(texture), np.array(spatial))


class TestCombine:
    def test_barred_class_scores_zero_regardless(self):
        ev = vector("green", [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], [1.0, 1.0, 1.0])
        scores = combine(ev, relation())
        assert scores.values.tolist() == [1.0, 0.0, 0.0]

    def test_all_ones_scores_one(self):
        ev = vector("unknown", [1, 1, 1], [1, 1, 1], [1, 1, 1])
        assert combine(ev, relation()).values.tolist() == [1.0, 1.0, 1.0]

    def test_min_arithmetic(self):
        ev = vector("green", [0.6, 1, 1], [0.9, 1, 1], [0.7, 1, 1])
        assert combine(ev, relation()).values[0] == pytest.approx(0.6)

    def test_unknown_color_rejected(self):
        ev = vector("purple", [1, 1, 1], [1, 1, 1], [1, 1, 1])
        with pytest.raises(ConfigError):
            combine(ev, relation())

    def test_membership_out_of_range_rejected(self):
        with pytest.raises(DataError):
            vector("green", [1.5, 0, 0], [1, 1, 1], [1, 1, 1])

    def test_wrong_length_rejected(self):
        ev = vector("green", [1, 1], [1, 1], [1, 1])
        with pytest.raises(DataError):
            combine(ev, relation())

    _memberships = st.lists(
        st.floats(0, 1, allow_nan=False), min_size=3, max_size=3
    )

    @given(color=st.sampled_from(("green", "white", "unknown")),
           shape=_memberships, texture=_memberships, spatial=_memberships)
    @settings(max_examples=100, deadline=None)
    def test_selectivity_and_stratification(self, color, shape, texture, spatial):
        ev = vector(color, shape, texture, spatial)
        rel = relation()
        scores = combine(ev, rel).values
        assert (scores >= 0).all() and (scores <= 1).all()
        row = rel.matrix[rel.test_names.index(color)]
        for c in range(3):
            assert scores[c] <= shape[c]
            assert scores[c] <= texture[c]
            assert scores[c] <= spatial[c]
            if row[c] == 0:
                assert scores[c] == 0.0

    @given(shape=_memberships, texture=_memberships, spatial=_memberships,
           bump=st.floats(0, 1, allow_nan=False))
    @settings(max_examples=100, deadline=None)
    def test_monotonicity(self, shape, texture, spatial, bump):
        rel = relation()
        low = combine(vector("unknown", shape, texture, spatial), rel).values
        raised = np.minimum(1.0, np.asarray(shape) + bump)
        high = combine(vector("unknown", raised, texture, spatial), rel).values
        assert (high >= low).all()


class TestEvidenceCsv:
    def test_round_trip(self, tmp_path):
        rel = relation()
        p = tmp_path / "ev.csv"
        p.write_text(
            "id,color_name,class_name,shape,texture,spatial\n"
            "v1,green,forest,0.6,0.9,0.7\n"
            "v1,green,water,1.0,1.0,1.0\n"
            "v1,green,roof,1.0,1.0,1.0\n"
        )
        vectors = read_evidence_csv(p, rel)
        assert len(vectors) == 1
        vid, ev = vectors[0]
        scores = combine(ev, rel)
        out = tmp_path / "scores.csv"
        write_scores_csv(out, [(vid, scores)])
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "id,class_name,score"
        assert lines[1] == "v1,forest,0.6"

    def test_missing_class_rejected(self, tmp_path):
        p = tmp_path / "ev.csv"
        p.write_text(
            "id,color_name,class_name,shape,texture,spatial\n"
            "v1,green,forest,0.6,0.9,0.7\n"
        )
        with pytest.raises(DataError):
            read_evidence_csv(p, relation())
