#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "permflow/assign.hpp"
#include "permflow/dsp.hpp"
#include "permflow/flow.hpp"
#include "permflow/harness.hpp"
#include "permflow/kosc.hpp"
#include "permflow/metrics.hpp"
#include "permflow/param2tok.hpp"

namespace py = pybind11;
using namespace permflow;

namespace {

std::vector<double> to_vec(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-D array");
  return std::vector<double>(a.data(), a.data() + a.size());
}

Tensor to_matrix(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D array");
  Tensor t({a.shape(0), a.shape(1)});
  std::copy(a.data(), a.data() + a.size(), t.data());
  return t;
}

py::array_t<double> from_vec(const std::vector<double>& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::array_t<double> from_tensor2(const Tensor& t) {
  py::array_t<double> out({t.dim(0), t.dim(1)});
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

py::array_t<double> frames_to_array(const dsp::FrameSeries& f) {
  py::array_t<double> out({f.n_frames, f.n_features});
  std::copy(f.values.begin(), f.values.end(), out.mutable_data());
  return out;
}

dsp::FrameSeries frames_from_array(
    const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("expected a 2-D frame array");
  dsp::FrameSeries f;
  f.n_frames = a.shape(0);
  f.n_features = a.shape(1);
  f.values.assign(a.data(), a.data() + a.size());
  return f;
}

AudioSignal signal_from(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                        double sr) {
  AudioSignal y;
  y.samples = to_vec(a);
  y.sample_rate = sr;
  return y;
}

}  // namespace

PYBIND11_MODULE(_permflow, m) {
  m.doc() = "k-oscillator synthesizer inversion: synthesis, metrics, assignment, "
            "flow sampling and experiment drivers";

  // ---- synthesizer ----
  m.def("param_count",
        [](int k, const std::string& variant) {
          return kosc::param_count(k, kosc::variant_from_name(variant));
        },
        py::arg("k"), py::arg("variant") = "symmetric");
  m.def("scale_frequencies",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> omega_raw, int k,
           const std::string& variant, double gate_c) {
          return from_vec(kosc::scale_frequencies(to_vec(omega_raw), k,
                                                  kosc::variant_from_name(variant), gate_c));
        },
        py::arg("omega_raw"), py::arg("k"), py::arg("variant") = "symmetric",
        py::arg("gate_c") = 1.0);
  m.def("osc_sample", &kosc::osc_sample, py::arg("phase"), py::arg("dphase"),
        py::arg("gamma_raw"), py::arg("antialias") = true);
  m.def("render",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x, int k,
           const std::string& variant, int n_samples, bool antialias, double sample_rate) {
          AudioSignal y = kosc::render(to_vec(x), k, kosc::variant_from_name(variant), n_samples,
                                       antialias, sample_rate);
          return from_vec(y.samples);
        },
        py::arg("x"), py::arg("k"), py::arg("variant") = "symmetric",
        py::arg("n_samples") = kDefaultSignalLength, py::arg("antialias") = true,
        py::arg("sample_rate") = kDefaultSampleRate);
  m.def("sample_params",
        [](int k, const std::string& variant, uint64_t seed) {
          return from_vec(kosc::sample_params(k, kosc::variant_from_name(variant), seed));
        },
        py::arg("k"), py::arg("variant") = "symmetric", py::arg("seed") = 0);
  m.def("generate_dataset",
        [](int k, const std::string& variant, int64_t count, uint64_t seed, int n_samples,
           const std::string& out_dir) {
          kosc::DatasetConfig c;
          c.k = k;
          c.variant = kosc::variant_from_name(variant);
          c.count = count;
          c.seed = seed;
          c.n_samples = n_samples;
          kosc::generate_dataset(c, out_dir);
        },
        py::arg("k"), py::arg("variant"), py::arg("count"), py::arg("seed"),
        py::arg("n_samples"), py::arg("out_dir"));

  // ---- spectral transforms ----
  m.def("dft_mag",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> y, double sr) {
          return from_vec(dsp::dft_mag(signal_from(y, sr)).bins);
        },
        py::arg("y"), py::arg("sample_rate") = kDefaultSampleRate);
  m.def("stft_mag",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> y, int win, int hop,
           double sr) { return frames_to_array(dsp::stft_mag(signal_from(y, sr), win, hop)); },
        py::arg("y"), py::arg("win_samples"), py::arg("hop_samples"),
        py::arg("sample_rate") = kDefaultSampleRate);
  m.def("mel_spectrogram",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> y, double sr,
           double win_ms, double hop_ms, int n_mels) {
          return frames_to_array(dsp::mel_spectrogram(signal_from(y, sr), sr, win_ms, hop_ms, n_mels));
        },
        py::arg("y"), py::arg("sample_rate"), py::arg("win_ms") = 25.0, py::arg("hop_ms") = 10.0,
        py::arg("n_mels") = 64);
  m.def("mfcc",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> y, double sr,
           int n_coeffs, double win_ms, double hop_ms) {
          return frames_to_array(dsp::mfcc(signal_from(y, sr), sr, n_coeffs, win_ms, hop_ms));
        },
        py::arg("y"), py::arg("sample_rate"), py::arg("n_coeffs") = 20, py::arg("win_ms") = 25.0,
        py::arg("hop_ms") = 10.0);
  m.def("rms_envelope",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> y, int frame, int hop,
           double sr) {
          return frames_to_array(dsp::rms_envelope(signal_from(y, sr), frame, hop));
        },
        py::arg("y"), py::arg("frame_samples"), py::arg("hop_samples"),
        py::arg("sample_rate") = kDefaultSampleRate);

  // ---- assignment ----
  m.def("hungarian",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> cost) {
          if (cost.ndim() != 2 || cost.shape(0) != cost.shape(1))
            throw std::invalid_argument("cost must be square");
          int n = static_cast<int>(cost.shape(0));
          std::vector<double> c(cost.data(), cost.data() + cost.size());
          auto r = assign::hungarian(c, n);
          return py::make_tuple(r.permutation, r.cost);
        },
        py::arg("cost"));
  m.def("brute_force_assignment",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> cost) {
          if (cost.ndim() != 2 || cost.shape(0) != cost.shape(1))
            throw std::invalid_argument("cost must be square");
          int n = static_cast<int>(cost.shape(0));
          std::vector<double> c(cost.data(), cost.data() + cost.size());
          auto r = assign::brute_force_assignment(c, n);
          return py::make_tuple(r.permutation, r.cost);
        },
        py::arg("cost"));
  m.def("ot_pair_minibatch",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> source,
           py::array_t<double, py::array::c_style | py::array::forcecast> target) {
          return assign::ot_pair_minibatch(to_matrix(source), to_matrix(target));
        },
        py::arg("source"), py::arg("target"));

  // ---- metrics ----
  m.def("mse", [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
                  py::array_t<double, py::array::c_style | py::array::forcecast> b) {
    return metrics::mse(to_vec(a), to_vec(b));
  });
  m.def("lac",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b, int k) {
          return metrics::lac(to_vec(a), to_vec(b), k);
        },
        py::arg("x"), py::arg("x_hat"), py::arg("k"));
  m.def("lsd",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b, double sr) {
          return metrics::lsd(signal_from(a, sr), signal_from(b, sr));
        },
        py::arg("y"), py::arg("y_hat"), py::arg("sample_rate") = kDefaultSampleRate);
  m.def("chamfer", [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
                      py::array_t<double, py::array::c_style | py::array::forcecast> b) {
    return metrics::chamfer(to_vec(a), to_vec(b));
  });
  m.def("dtw_l1", [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
                     py::array_t<double, py::array::c_style | py::array::forcecast> b) {
    return metrics::dtw_l1(frames_from_array(a), frames_from_array(b));
  });
  m.def("wmfcc",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b, double sr) {
          return metrics::wmfcc(signal_from(a, sr), signal_from(b, sr), sr);
        },
        py::arg("y"), py::arg("y_hat"), py::arg("sample_rate") = kDefaultSampleRate);
  m.def("sot",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b, double sr,
           double win_ms, double hop_ms) {
          return metrics::sot(signal_from(a, sr), signal_from(b, sr), sr, win_ms, hop_ms);
        },
        py::arg("y"), py::arg("y_hat"), py::arg("sample_rate") = kDefaultSampleRate,
        py::arg("win_ms") = 25.0, py::arg("hop_ms") = 10.0);
  m.def("w1_spectrum", [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
                          py::array_t<double, py::array::c_style | py::array::forcecast> b) {
    return metrics::w1_spectrum(to_vec(a), to_vec(b));
  });
  m.def("mss",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b, double sr) {
          return metrics::mss(signal_from(a, sr), signal_from(b, sr), sr);
        },
        py::arg("y"), py::arg("y_hat"), py::arg("sample_rate") = kDefaultSampleRate);
  m.def("rms_cosine",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> a,
           py::array_t<double, py::array::c_style | py::array::forcecast> b, double sr) {
          return metrics::rms_cosine(signal_from(a, sr), signal_from(b, sr));
        },
        py::arg("y"), py::arg("y_hat"), py::arg("sample_rate") = kDefaultSampleRate);

  // ---- parameter/token projection ----
  py::class_<p2t::Param2TokParams>(m, "Param2TokParams")
      .def_property_readonly("Z", [](const p2t::Param2TokParams& p) { return from_tensor2(p.Z); })
      .def_property_readonly("Zp", [](const p2t::Param2TokParams& p) { return from_tensor2(p.Zp); })
      .def_property_readonly("A", [](const p2t::Param2TokParams& p) { return from_tensor2(p.A); })
      .def_property_readonly("k", &p2t::Param2TokParams::k)
      .def_property_readonly("n", &p2t::Param2TokParams::n)
      .def_property_readonly("d", &p2t::Param2TokParams::d);
  m.def("p2t_init", &p2t::p2t_init, py::arg("k"), py::arg("n"), py::arg("d"), py::arg("seed"));
  m.def("p2t_forward",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x,
           const p2t::Param2TokParams& p) { return from_tensor2(p2t::p2t_forward(to_vec(x), p)); },
        py::arg("x"), py::arg("params"));
  m.def("p2t_inverse",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> tokens,
           const p2t::Param2TokParams& p) {
          return from_vec(p2t::p2t_inverse(to_matrix(tokens), p));
        },
        py::arg("tokens"), py::arg("params"));
  m.def("l1_penalty", [](py::array_t<double, py::array::c_style | py::array::forcecast> a) {
    return p2t::l1_penalty(to_matrix(a));
  });
  m.def("conditional_symmetry_fixture", [] {
    p2t::FixtureReport r = p2t::conditional_symmetry_fixture();
    py::dict d;
    d["equal_branch_max_abs_diff"] = r.equal_branch_max_abs_diff;
    d["unequal_branch_max_abs_diff"] = r.unequal_branch_max_abs_diff;
    d["stabilizer_max_abs_diff"] = r.stabilizer_max_abs_diff;
    d["passed"] = r.passed;
    return d;
  });

  // ---- flow ----
  m.def("sample_path",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> x0,
           py::array_t<double, py::array::c_style | py::array::forcecast> x1,
           std::vector<double> t) {
          auto p = flow::sample_path(to_matrix(x0), to_matrix(x1), t);
          return py::make_tuple(from_tensor2(p.x_t), from_tensor2(p.u_target));
        },
        py::arg("x0"), py::arg("x1"), py::arg("t"));
  m.def("guided_field",
        [](py::array_t<double, py::array::c_style | py::array::forcecast> vc,
           py::array_t<double, py::array::c_style | py::array::forcecast> vu, double s) {
          return from_tensor2(flow::guided_field(to_matrix(vc), to_matrix(vu), s));
        },
        py::arg("v_cond"), py::arg("v_uncond"), py::arg("scale"));

  // ---- experiment drivers ----
  m.def("train",
        [](const std::string& config_path, const std::string& out_ckpt,
           const py::dict& overrides) {
          harness::ExperimentConfig cfg;
          if (!config_path.empty()) cfg = harness::parse_config_file(config_path);
          for (auto item : overrides)
            harness::apply_config_kv(cfg, py::str(item.first), py::str(item.second));
          auto res = harness::train(cfg, out_ckpt, nullptr);
          py::dict d;
          d["steps_run"] = res.steps_run;
          d["final_loss"] = res.final_loss;
          d["checkpoint"] = res.checkpoint_path;
          return d;
        },
        py::arg("config_path"), py::arg("out_ckpt"), py::arg("overrides") = py::dict());
  m.def("evaluate",
        [](const std::string& ckpt, const std::string& data_dir, const std::string& out_csv,
           uint64_t seed, int64_t max_items) {
          harness::EvalOptions eo;
          eo.eval_seed = seed;
          eo.max_items = max_items;
          auto rep = harness::evaluate(ckpt, data_dir, out_csv, eo);
          py::dict d;
          for (size_t c = 0; c < rep.columns.size(); ++c) {
            d[rep.columns[c].c_str()] = from_vec(rep.column(rep.columns[c]));
            d[(rep.columns[c] + "_mean").c_str()] = rep.mean[c];
            d[(rep.columns[c] + "_ci95").c_str()] = rep.ci95[c];
          }
          return d;
        },
        py::arg("ckpt"), py::arg("data_dir"), py::arg("out_csv") = "", py::arg("seed") = 0,
        py::arg("max_items") = 0);
  m.def("run_check_suite",
        [](const std::string& suite, const std::string& work_dir) {
          py::list out;
          for (const auto& r : harness::run_check_suite(suite, work_dir)) {
            py::dict d;
            d["name"] = r.name;
            d["passed"] = r.passed;
            d["detail"] = r.detail;
            out.append(d);
          }
          return out;
        },
        py::arg("suite"), py::arg("work_dir") = "check_work");
}
