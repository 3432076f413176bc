import pytest
from hypothesis import given
from hypothesis import strategies as st

from pacn.errors import IngestionError
from pacn.manifest import (COLUMNS, LABEL_INDEX, SCENE_LABELS, ManifestRow,
                           parse_manifest, write_manifest)


def make_rows():
    return [
        ManifestRow("audio/a0.wav", "airport", "a", "barcelona"),
        ManifestRow("audio/tr3.wav", "tram", "s1", "helsinki"),
        ManifestRow("clips/x.wav", "metro_station", "b", "lyon"),
    ]


class TestLabelSet:
    def test_ten_labels_sorted(self):
        assert len(SCENE_LABELS) == 10
        assert list(SCENE_LABELS) == sorted(SCENE_LABELS)

    def test_index_mapping(self):
        assert LABEL_INDEX["airport"] == 0
        assert LABEL_INDEX["tram"] == 9
        assert ManifestRow("f.wav", "metro", "a", "paris").label_index == 2

    def test_every_label_distinct(self):
        assert len(set(SCENE_LABELS)) == 10


class TestRoundtrip:
    def test_rows_survive(self, tmp_path):
        path = tmp_path / "m.tsv"
        rows = make_rows()
        write_manifest(path, rows)
        assert parse_manifest(path) == rows

    def test_bytes_stable(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        write_manifest(a, make_rows())
        write_manifest(b, parse_manifest(a))
        assert a.read_bytes() == b.read_bytes()

    def test_header_only_is_empty(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("\t".join(COLUMNS) + "\n")
        assert parse_manifest(path) == []

    @given(tuples=st.lists(
        st.tuples(
            st.text(alphabet=st.characters(blacklist_characters="\t\n\r",
                                           blacklist_categories=("Cs",)),
                    min_size=1, max_size=30),
            st.sampled_from(SCENE_LABELS),
            st.text(alphabet="abcs123", min_size=1, max_size=4),
            st.sampled_from(["lisbon", "milan", "prague"]),
        ), min_size=0, max_size=8))
    def test_arbitrary_fields_roundtrip(self, tuples, tmp_path_factory):
        path = tmp_path_factory.mktemp("m") / "m.tsv"
        rows = [ManifestRow(*t) for t in tuples]
        write_manifest(path, rows)
        assert parse_manifest(path) == rows


class TestErrors:
    def test_unknown_label_named_with_line(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("\t".join(COLUMNS) + "\n"
                        "a.wav\tairport\ta\tparis\n"
                        "b.wav\tcathedral\ta\tparis\n")
        with pytest.raises(IngestionError, match=r"3.*cathedral|cathedral.*3"):
            parse_manifest(path)

    def test_field_count_mismatch_reports_line(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("\t".join(COLUMNS) + "\n"
                        "a.wav\tairport\ta\n")
        with pytest.raises(IngestionError, match=r":2"):
            parse_manifest(path)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("file,label,dev,city\n")
        with pytest.raises(IngestionError, match="header"):
            parse_manifest(path)

    def test_extra_column_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("\t".join(COLUMNS) + "\n"
                        "a.wav\tbus\ta\tparis\textra\n")
        with pytest.raises(IngestionError, match=r":2"):
            parse_manifest(path)
