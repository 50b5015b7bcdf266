"""Dataset I/O, feature scaling, synthetic generation, seeded RNG plumbing."""

import io
import pathlib

import numpy as np
import pytest
import scipy.sparse as sp

from scaledopt.data import (
    Dataset,
    ParseError,
    SeededRng,
    apply_feature_scaling,
    derive_seed,
    generate_synthetic,
    parse_libsvm,
    serialize_libsvm,
)

FIXTURE = pathlib.Path(__file__).parent / "data" / "fixture50.libsvm"
GOLDEN = pathlib.Path(__file__).parent / "data" / "fixture50.golden"


class TestParse:
    def test_single_line(self):
        ds = parse_libsvm(io.StringIO("-1 5:1 12:0.5\n"))
        assert ds.m == 1 and ds.n == 12
        assert ds.labels[0] == -1
        row = ds.features.toarray()[0]
        nz = {(j, row[j]) for j in np.flatnonzero(row)}
        assert nz == {(4, 1.0), (11, 0.5)}

    def test_malformed_label(self):
        with pytest.raises(ParseError, match="line 1"):
            parse_libsvm(io.StringIO("x 1:1\n"))

    def test_label_mapping(self):
        ds = parse_libsvm(io.StringIO("+1 1:1\n1 1:1\n-1 1:1\n0 1:1\n"))
        np.testing.assert_array_equal(ds.labels, [1, 1, -1, -1])

    def test_nonincreasing_indices(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_libsvm(io.StringIO("+1 1:1\n-1 3:1 3:2\n"))
        with pytest.raises(ParseError, match="increasing"):
            parse_libsvm(io.StringIO("+1 5:1 2:1\n"))

    def test_empty_file(self):
        with pytest.raises(ParseError, match="no data rows"):
            parse_libsvm(io.StringIO(""))

    def test_comments_rejected(self):
        with pytest.raises(ParseError, match="line 2"):
            parse_libsvm(io.StringIO("+1 1:1\n# not allowed\n"))

    def test_crlf_and_blank_lines(self):
        ds = parse_libsvm(io.BytesIO(b"+1 2:1\r\n\r\n-1 1:0.5\r\n"))
        assert ds.m == 2 and ds.n == 2
        np.testing.assert_array_equal(ds.labels, [1, -1])

    def test_malformed_tokens(self):
        for bad in ("+1 1\n", "+1 a:1\n", "+1 1:b\n", "+1 0:1\n", "+1 1:inf\n"):
            with pytest.raises(ParseError):
                parse_libsvm(io.StringIO(bad))

    def test_n_features_hint(self):
        ds = parse_libsvm(io.StringIO("+1 3:1\n"), n_features=10)
        assert ds.n == 10
        # hint below the observed max index is overridden by the data
        ds = parse_libsvm(io.StringIO("+1 7:1\n"), n_features=3)
        assert ds.n == 7


class TestFixtureGolden:
    def test_fixture_shape(self):
        ds = parse_libsvm(FIXTURE)
        assert ds.m == 50
        assert ds.n == 25
        assert ds.features.nnz == 173
        assert int(ds.labels.sum()) == 6

    def test_normalized_form_matches_golden(self):
        ds = parse_libsvm(FIXTURE)
        assert serialize_libsvm(ds) == GOLDEN.read_text()

    def test_round_trip_exact(self):
        ds = parse_libsvm(FIXTURE)
        ds2 = parse_libsvm(io.StringIO(serialize_libsvm(ds)))
        assert ds2.m == ds.m and ds2.n == ds.n
        np.testing.assert_array_equal(ds2.labels, ds.labels)
        np.testing.assert_array_equal(ds2.features.indptr, ds.features.indptr)
        np.testing.assert_array_equal(ds2.features.indices, ds.features.indices)
        # %.17g preserves every float64 bit, so this is equality not tolerance
        np.testing.assert_array_equal(ds2.features.data, ds.features.data)

    def test_serialize_to_path(self, tmp_path):
        ds = parse_libsvm(FIXTURE)
        out = tmp_path / "copy.libsvm"
        assert serialize_libsvm(ds, out) is None
        assert out.read_text() == GOLDEN.read_text()


class TestDatasetType:
    def test_bad_labels(self):
        X = sp.csr_matrix(np.eye(2))
        with pytest.raises(ValueError, match="labels"):
            Dataset(X, np.array([1, 2]))
        with pytest.raises(ValueError):
            Dataset(X, np.array([1.0]))

    def test_scale_length(self):
        X = sp.csr_matrix(np.eye(2))
        with pytest.raises(ValueError, match="scale"):
            Dataset(X, np.array([1, -1]), scale=np.ones(3))

    def test_defaults(self):
        ds = Dataset(sp.csr_matrix(np.eye(3)), np.array([1, -1, 1]))
        np.testing.assert_array_equal(ds.scale, np.ones(3))
        assert ds.amplitude == 0.0
        assert ds.m == 3 and ds.n == 3


class TestFeatureScaling:
    def _base(self, m=6, n=5, seed=3):
        ds, _ = generate_synthetic(m, n, SeededRng(seed))
        return ds

    def test_deterministic(self):
        ds = self._base()
        a = apply_feature_scaling(ds, 1.0, SeededRng(7))
        b = apply_feature_scaling(ds, 1.0, SeededRng(7))
        np.testing.assert_array_equal(a.scale, b.scale)
        np.testing.assert_array_equal(a.features.data, b.features.data)

    def test_amplitude_zero_warns(self):
        ds = self._base()
        with pytest.warns(UserWarning, match="amplitude 0"):
            zeroed = apply_feature_scaling(ds, 0.0, SeededRng(7))
        np.testing.assert_array_equal(zeroed.scale, np.zeros(ds.n))
        assert zeroed.features.nnz == ds.features.nnz  # structure kept, values zero
        np.testing.assert_array_equal(zeroed.features.data, np.zeros(ds.features.nnz))

    def test_amplitudes_proportional(self):
        # U[-A,A] = A * U[-1,1] with the underlying unit draws shared
        ds = self._base()
        lo = apply_feature_scaling(ds, 0.1, SeededRng(11))
        hi = apply_feature_scaling(ds, 50.0, SeededRng(11))
        np.testing.assert_allclose(hi.scale, 500.0 * lo.scale, rtol=1e-15)
        np.testing.assert_allclose(hi.features.data, 500.0 * lo.features.data, rtol=1e-15)

    def test_structure_preserved(self):
        ds = self._base(m=30, n=12)
        out = apply_feature_scaling(ds, 2.0, SeededRng(5))
        np.testing.assert_array_equal(out.features.indices, ds.features.indices)
        np.testing.assert_array_equal(out.features.indptr, ds.features.indptr)
        assert out.amplitude == 2.0

    def test_rescaling_rejected(self):
        ds = self._base()
        once = apply_feature_scaling(ds, 1.0, SeededRng(7))
        with pytest.raises(ValueError, match="already scaled"):
            apply_feature_scaling(once, 1.0, SeededRng(7))

    def test_ranges(self):
        ds = self._base(n=500, m=2)
        out = apply_feature_scaling(ds, 3.0, SeededRng(9))
        assert np.all(np.abs(out.scale) <= 3.0)
        assert np.std(out.scale) > 1.0  # actually spread out, not constant


class TestSynthetic:
    def test_minimal(self):
        ds, w = generate_synthetic(1, 1, SeededRng(0))
        assert ds.m == 1 and ds.n == 1 and w.shape == (1,)

    def test_seed_reproducible(self):
        a, wa = generate_synthetic(50, 10, SeededRng(77))
        b, wb = generate_synthetic(50, 10, SeededRng(77))
        np.testing.assert_array_equal(a.features.toarray(), b.features.toarray())
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(wa, wb)

    def test_binary_entries_and_density(self):
        ds, _ = generate_synthetic(500, 40, SeededRng(5))
        assert set(np.unique(ds.features.toarray())) <= {0.0, 1.0}
        dens = ds.features.nnz / (500 * 40)
        assert 0.07 < dens < 0.13

    def test_validation(self):
        with pytest.raises(ValueError):
            generate_synthetic(0, 5, SeededRng(1))
        with pytest.raises(ValueError):
            generate_synthetic(5, 5, SeededRng(1), density=0.0)

    def test_planted_model_learnable(self):
        # the toolkit's own optimizer is the oracle: a logistic fit must
        # classify the train set well above chance
        from scaledopt.config import load_config, build_dataset, build_problem
        from scaledopt.optim import run

        doc = {
            "dataset": {"synthetic": {"m": 2000, "n": 50, "seed": 21}},
            "algo": "lsvrg",
            "T": 250,
            "batch_size": 100,
            "p": 0.9,
            "eta": {"kind": "local-smoothness"},
            "seed": 4,
        }
        cfg = load_config(doc)
        prob = build_problem(cfg)
        res = run(prob, cfg.algo_config())
        margins = prob.X @ res.x_final
        acc = np.mean(np.where(margins >= 0, 1, -1) == prob.b)
        assert acc >= 0.70, f"train accuracy {acc:.3f} below 0.70"


class TestSeededRng:
    def test_same_seed_same_stream(self):
        a = SeededRng(123).standard_normal(16)
        b = SeededRng(123).standard_normal(16)
        np.testing.assert_array_equal(a, b)

    def test_substreams_differ(self):
        root = SeededRng(123)
        a = root.substream("batch").standard_normal(16)
        b = root.substream("probe").standard_normal(16)
        assert not np.array_equal(a, b)

    def test_substream_deterministic(self):
        a = SeededRng(9).substream("probe").random(8)
        b = SeededRng(9).substream("probe").random(8)
        np.testing.assert_array_equal(a, b)

    def test_rademacher(self):
        z = SeededRng(5).rademacher(4000)
        assert set(np.unique(z)) == {-1.0, 1.0}
        assert abs(z.mean()) < 0.08  # 3+ sigma band is ~0.047; loose

    def test_batch_indices(self):
        r = SeededRng(6)
        with_rep = r.batch_indices(10, 50, with_replacement=True)
        assert with_rep.min() >= 0 and with_rep.max() < 10
        without = SeededRng(6).batch_indices(20, 15, with_replacement=False)
        assert len(np.unique(without)) == 15

    def test_derive_seed_stable(self):
        assert derive_seed(1, "a", 2) == derive_seed(1, "a", 2)
        assert derive_seed(1, "a", 2) != derive_seed(1, "a", 3)
        assert derive_seed(1, "a") != derive_seed(2, "a")
        assert 0 <= derive_seed(0) < 2**63
