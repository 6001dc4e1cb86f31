import json
import time

import numpy as np
import numpy.testing as npt
import pytest

from specal import io
from specal.baselines import fit_pcr, predict_multivariate
from specal.calibrate import fit_ols
from specal.cli import main
from specal.errors import AlignmentError, ParseError
from specal.model import ConcentrationMatrix, SpectraSet, assemble_design
from specal.predict import predict_concentrations
from specal.simulate import SimConfig, generate_dataset, WEAK_PHI


@pytest.fixture
def dataset(tmp_path):
    cfg = SimConfig(seed=3, num_samples=12, phi=WEAK_PHI)
    spectra, conc, truth = generate_dataset(cfg)
    ids = tuple(f"s{i + 1:02d}" for i in range(12))
    spectra = SpectraSet(grid=spectra.grid, absorbance=spectra.absorbance,
                         sample_ids=ids)
    conc = ConcentrationMatrix(values=conc.values, sample_ids=ids,
                               analytes=("a", "b", "c"))
    spath = tmp_path / "spectra.csv"
    cpath = tmp_path / "conc.csv"
    io.save_spectra(spectra, spath)
    io.save_concentrations(conc, cpath)
    return spectra, conc, truth, spath, cpath


class TestSpectraIo:
    def test_round_trip_exact(self, dataset):
        spectra, _, _, spath, _ = dataset
        loaded = io.load_spectra(spath)
        npt.assert_array_equal(loaded.grid, spectra.grid)
        npt.assert_array_equal(loaded.absorbance, spectra.absorbance)
        assert loaded.sample_ids == spectra.sample_ids

    def test_three_point_round_trip_bytes(self, tmp_path):
        spectra = SpectraSet(
            grid=np.array([1.0, 2.5, 4.0]),
            absorbance=np.array([[0.1, 0.2, 0.3], [1 / 3, 2 / 7, 0.5]]).T.T,
            sample_ids=("u", "v"),
        )
        first = tmp_path / "a.csv"
        second = tmp_path / "b.csv"
        io.save_spectra(spectra, first)
        io.save_spectra(io.load_spectra(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_duplicate_wavelength_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("wavelength,s1\n1.0,0.5\n1.0,0.6\n2.0,0.7\n")
        with pytest.raises(ParseError, match="entry 1"):
            io.load_spectra(path)

    def test_non_numeric_cell_location(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("wavelength,s1,s2\n1.0,0.5,0.1\n2.0,oops,0.2\n")
        with pytest.raises(ParseError, match="row 3, column 2"):
            io.load_spectra(path)

    def test_transpose_layout(self, tmp_path, dataset):
        spectra, _, _, _, _ = dataset
        path = tmp_path / "flipped.csv"
        header = ["sample"] + [repr(float(w)) for w in spectra.grid]
        lines = [",".join(header)]
        for i, sid in enumerate(spectra.sample_ids):
            lines.append(
                ",".join([sid] + [repr(float(v)) for v in spectra.absorbance[i]])
            )
        path.write_text("\n".join(lines) + "\n")
        loaded = io.load_spectra(path, transpose=True)
        npt.assert_array_equal(loaded.absorbance, spectra.absorbance)
        npt.assert_array_equal(loaded.grid, spectra.grid)

    def test_tecator_shaped_load_is_fast(self, tmp_path):
        rng = np.random.default_rng(0)
        grid = np.linspace(850.0, 1050.0, 100)
        spectra = SpectraSet(grid=grid, absorbance=rng.standard_normal((240, 100)))
        path = tmp_path / "big.csv"
        io.save_spectra(spectra, path)
        start = time.perf_counter()
        loaded = io.load_spectra(path)
        elapsed = time.perf_counter() - start
        assert loaded.absorbance.shape == (240, 100)
        assert elapsed < 1.0


class TestConcentrationIo:
    def test_permuted_ids_realign(self, dataset, tmp_path):
        spectra, conc, _, _, _ = dataset
        path = tmp_path / "permuted.csv"
        order = np.random.default_rng(1).permutation(12)
        lines = ["sample,a,b,c"]
        for i in order:
            lines.append(
                ",".join([conc.sample_ids[i]]
                         + [repr(float(v)) for v in conc.values[i]])
            )
        path.write_text("\n".join(lines) + "\n")
        loaded = io.load_concentrations(path, spectra)
        npt.assert_array_equal(loaded.values, conc.values)
        assert loaded.sample_ids == spectra.sample_ids

    def test_unknown_id_raises_alignment(self, dataset, tmp_path):
        spectra, conc, _, _, cpath = dataset
        text = cpath.read_text().replace("s05", "zz")
        bad = tmp_path / "bad.csv"
        bad.write_text(text)
        with pytest.raises(AlignmentError):
            io.load_concentrations(bad, spectra)

    def test_negative_concentration_warns_but_loads(self, tmp_path):
        path = tmp_path / "neg.csv"
        path.write_text("sample,a\ns1,-0.2\ns2,0.4\ns3,0.6\n")
        with pytest.warns(UserWarning):
            conc = io.load_concentrations(path)
        assert conc.values[0, 0] == -0.2


class TestModelIo:
    def test_functional_round_trip(self, dataset, tmp_path):
        spectra, conc, truth, _, _ = dataset
        model = fit_ols(assemble_design(spectra, conc, truth.basis))
        path = tmp_path / "model.json"
        io.save_model(model, path)
        loaded = io.load_model(path)
        target = SpectraSet(grid=spectra.grid, absorbance=spectra.absorbance[:3],
                            role="prediction")
        a = predict_concentrations(model, target, sum_to=1.0)
        b = predict_concentrations(loaded, target, sum_to=1.0)
        npt.assert_allclose(a, b, atol=1e-12)
        assert loaded.method == model.method
        assert loaded.diagnostics.rss == model.diagnostics.rss

    def test_multivariate_round_trip(self, dataset, tmp_path):
        spectra, conc, _, _, _ = dataset
        model = fit_pcr(spectra.absorbance, conc.values, components=3)
        path = tmp_path / "pcr.json"
        io.save_model(model, path)
        loaded = io.load_model(path)
        npt.assert_allclose(
            predict_multivariate(model, spectra.absorbance),
            predict_multivariate(loaded, spectra.absorbance),
            atol=1e-12,
        )

    def test_schema_version_checked(self, tmp_path):
        path = tmp_path / "model.json"
        path.write_text(json.dumps({"schema": 99, "kind": "functional"}))
        with pytest.raises(ParseError):
            io.load_model(path)


class TestValueTable:
    def test_column_subset_skips_non_numeric(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text(
            "sample,a,a_lo,flag,b\np1,0.1,0.0,false,0.9\np2,0.2,0.1,true,0.8\n"
        )
        ids, names, values = io.load_value_table(path, columns=("a", "b"))
        assert ids == ("p1", "p2")
        npt.assert_array_equal(values, [[0.1, 0.9], [0.2, 0.8]])

    def test_missing_column_raises(self, tmp_path):
        path = tmp_path / "preds.csv"
        path.write_text("sample,a\np1,0.1\np2,0.2\n")
        with pytest.raises(AlignmentError):
            io.load_value_table(path, columns=("a", "zz"))


class TestCli:
    def test_calibrate_jackknife_predict_sep(self, dataset, tmp_path):
        _, _, _, spath, cpath = dataset
        model = tmp_path / "model.json"
        curves = tmp_path / "curves.csv"
        spread = tmp_path / "s.csv"
        pred = tmp_path / "pred.csv"
        sep_out = tmp_path / "sep.csv"
        assert main(["calibrate", "--spectra", str(spath), "--concentrations",
                     str(cpath), "--method", "ols-k", "--num-basis", "14",
                     "--model-out", str(model), "--curves-out", str(curves)]) == 0
        assert main(["jackknife", "--spectra", str(spath), "--concentrations",
                     str(cpath), "--method", "ols-k", "--num-basis", "14",
                     "--out", str(spread)]) == 0
        assert main(["predict", "--model", str(model), "--spectra", str(spath),
                     "--s-file", str(spread), "--out", str(pred)]) == 0
        assert main(["sep", "--truth", str(cpath), "--predictions", str(pred),
                     "--out", str(sep_out)]) == 0
        rows = sep_out.read_text().strip().splitlines()
        assert rows[0] == "component,sep"
        assert rows[-1].startswith("overall,")

    def test_inputs_never_mutated(self, dataset, tmp_path):
        _, _, _, spath, cpath = dataset
        before = (spath.read_bytes(), cpath.read_bytes())
        main(["calibrate", "--spectra", str(spath), "--concentrations",
              str(cpath), "--method", "ols-k", "--model-out",
              str(tmp_path / "m.json")])
        assert (spath.read_bytes(), cpath.read_bytes()) == before

    def test_manual_lambda_override(self, dataset, tmp_path):
        _, _, _, spath, cpath = dataset
        model = tmp_path / "ss.json"
        assert main(["calibrate", "--spectra", str(spath), "--concentrations",
                     str(cpath), "--method", "ols-ss", "--lambda", "330",
                     "--model-out", str(model)]) == 0
        payload = json.loads(model.read_text())
        assert payload["lambda"] == 330.0

    def test_error_line_is_machine_parsable(self, tmp_path, capsys):
        missing = tmp_path / "nope.csv"
        code = main(["calibrate", "--spectra", str(missing), "--concentrations",
                     str(missing), "--method", "ols-k", "--model-out",
                     str(tmp_path / "m.json")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error[parse]:")

    def test_unknown_flag_exits_two(self, dataset, tmp_path):
        _, _, _, spath, cpath = dataset
        with pytest.raises(SystemExit) as excinfo:
            main(["calibrate", "--spectra", str(spath), "--concentrations",
                  str(cpath), "--method", "ols-k", "--model-out",
                  str(tmp_path / "m.json"), "--frobnicate"])
        assert excinfo.value.code == 2

    def test_cli_is_a_thin_shell(self, dataset, tmp_path):
        # Values written by predict must equal the library computation.
        spectra, conc, truth, spath, cpath = dataset
        model_path = tmp_path / "model.json"
        spread = tmp_path / "s.csv"
        pred = tmp_path / "pred.csv"
        main(["calibrate", "--spectra", str(spath), "--concentrations",
              str(cpath), "--method", "ols-ss", "--lambda", "gcv",
              "--model-out", str(model_path)])
        main(["jackknife", "--spectra", str(spath), "--concentrations",
              str(cpath), "--method", "ols-ss", "--out", str(spread)])
        main(["predict", "--model", str(model_path), "--spectra", str(spath),
              "--s-file", str(spread), "--out", str(pred)])
        _, _, written = io.load_value_table(pred, columns=("a", "b", "c"))
        model = io.load_model(model_path)
        expected = predict_concentrations(
            model,
            SpectraSet(grid=spectra.grid, absorbance=spectra.absorbance,
                       role="prediction"),
            sum_to=1.0,
        )
        npt.assert_allclose(written, expected, atol=1e-15)

    def test_predict_with_jackknife_flag(self, dataset, tmp_path):
        _, _, _, spath, cpath = dataset
        model = tmp_path / "model.json"
        pred = tmp_path / "pred.csv"
        main(["calibrate", "--spectra", str(spath), "--concentrations",
              str(cpath), "--method", "ols-k", "--model-out", str(model)])
        assert main(["predict", "--model", str(model), "--spectra", str(spath),
                     "--jackknife", "--cal-spectra", str(spath),
                     "--cal-concentrations", str(cpath),
                     "--out", str(pred)]) == 0
        assert pred.exists()
