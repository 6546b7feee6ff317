"""CSV ingestion, writers and the SVG plot."""
import numpy as np
import pytest

from gplsim.errors import DuplicateVisit, ParseError, SchemaError
from gplsim.io import (band_svg, ingest_csv, normalize_curve, read_rows, standardize_columns,
                       write_dataset_csv, write_rows)


def _write(path, text):
    path.write_text(text)
    return path


class TestIngest:
    def test_two_subjects(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,x1,z1,z2\n"
                   "a,1,0.5,1,0.1,0.2\na,2,0.7,0,0.3,0.4\nb,1,1.5,1,0.5,0.6\nb,2,2.5,0,0.7,0.8\n")
        data = ingest_csv(f)
        assert data.n == 2 and list(data.sizes) == [2, 2]
        assert data.p == 1 and data.q == 2
        np.testing.assert_array_equal(data.subjects[1].Z, [[0.5, 0.6], [0.7, 0.8]])

    def test_rows_sorted_by_visit(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,z1\n"
                   "s,2,2.0,0\nt,1,5.0,0\ns,1,1.0,0\n")
        data = ingest_csv(f)
        assert [s.id for s in data.subjects] == ["s", "t"]
        np.testing.assert_array_equal(data.subjects[0].y, [1.0, 2.0])
        assert data.p == 0

    def test_missing_y(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,x1,z1\na,1,0,0\n")
        with pytest.raises(SchemaError) as exc:
            ingest_csv(f)
        assert "y" in exc.value.missing

    def test_gap_in_numbering(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,x1,x3,z1\na,1,0,0,0,0\n")
        with pytest.raises(SchemaError) as exc:
            ingest_csv(f)
        assert exc.value.missing == ["x2"]

    def test_no_index_columns(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,x1\na,1,0,0\n")
        with pytest.raises(SchemaError) as exc:
            ingest_csv(f)
        assert "z1" in exc.value.missing

    def test_non_numeric_line_reported(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,z1\na,1,0,0\na,2,abc,0\n")
        with pytest.raises(ParseError) as exc:
            ingest_csv(f)
        assert exc.value.line == 3

    def test_wrong_field_count(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,z1\na,1,0\n")
        with pytest.raises(ParseError) as exc:
            ingest_csv(f)
        assert exc.value.line == 2

    def test_duplicate_visit(self, tmp_path):
        f = _write(tmp_path / "d.csv", "subject_id,visit,y,z1\na,1,0,0\na,1,1,0\nb,1,0,0\n")
        with pytest.raises(DuplicateVisit):
            ingest_csv(f)

    def test_empty(self, tmp_path):
        with pytest.raises(ParseError):
            ingest_csv(_write(tmp_path / "d.csv", ""))

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(42)
        ids = np.repeat([3, 1, 2], 2)
        visit = np.tile([1.0, 2.0], 3)
        y, X, Z = rng.standard_normal(6), rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
        write_dataset_csv(tmp_path / "d.csv", ids, visit, y, X, Z)
        data = ingest_csv(tmp_path / "d.csv")
        np.testing.assert_array_equal(data.packed.y, y)
        np.testing.assert_array_equal(data.packed.X, X)
        assert [s.id for s in data.subjects] == ["3", "1", "2"]

    def test_standardize(self):
        M = np.column_stack([[0, 1, 1, 0], [1.0, 2.0, 3.0, 6.0]])
        S = standardize_columns(M)
        np.testing.assert_array_equal(S[:, 0], M[:, 0])
        assert S[:, 1].mean() == pytest.approx(0.0)
        assert S[:, 1].std(ddof=1) == pytest.approx(1.0)


class TestWriters:
    def test_floats_round_trip_exactly(self, tmp_path):
        vals = [0.1, 1 / 3, np.float64(2.0) ** -40]
        write_rows(tmp_path / "r.csv", ["v"], [[v] for v in vals])
        back = [float(r["v"]) for r in read_rows(tmp_path / "r.csv")]
        assert back == [float(v) for v in vals]

    def test_normalize_curve(self):
        g = np.linspace(0, 1, 11)
        eta = -(g ** 2) + 3.0
        out, lo, hi = normalize_curve(g, eta, eta - 0.1, eta + 0.2)
        assert out.mean() == pytest.approx(0.0)
        assert out[6] > out[4]
        assert np.all(lo <= out) and np.all(out <= hi)

    def test_svg(self):
        g = np.linspace(0, 1, 5)
        svg = band_svg(g, g, g - 1, g + 1, overlays=[("poly", g ** 2)], title="t")
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert "<polygon" in svg and svg.count("<polyline") == 2
