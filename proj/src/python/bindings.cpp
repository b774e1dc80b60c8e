#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "tsmini/checkpoint.hpp"
#include "tsmini/commands.hpp"
#include "tsmini/config.hpp"
#include "tsmini/errors.hpp"
#include "tsmini/eval.hpp"
#include "tsmini/loss.hpp"

namespace py = pybind11;
using namespace tsmini;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Trajectory to_trajectory(const DoubleArray& a, std::string id = "t") {
  if (a.ndim() != 2 || a.shape(1) != 2) throw std::invalid_argument("trajectory must be an (n, 2) array");
  Trajectory t{std::move(id), {}};
  const auto r = a.unchecked<2>();
  t.points.reserve(static_cast<std::size_t>(a.shape(0)));
  for (py::ssize_t i = 0; i < a.shape(0); ++i) t.points.push_back({r(i, 0), r(i, 1)});
  return t;
}

std::vector<Trajectory> to_trajectories(const std::vector<DoubleArray>& arrays) {
  std::vector<Trajectory> out;
  out.reserve(arrays.size());
  for (std::size_t i = 0; i < arrays.size(); ++i) out.push_back(to_trajectory(arrays[i], std::to_string(i)));
  return out;
}

py::array_t<double> to_array(const Trajectory& t) {
  py::array_t<double> a({static_cast<py::ssize_t>(t.size()), py::ssize_t{2}});
  auto w = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < t.size(); ++i) {
    w(i, 0) = t.points[i].x;
    w(i, 1) = t.points[i].y;
  }
  return a;
}

std::vector<double> square_matrix(const DoubleArray& a, const char* name) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw std::invalid_argument(std::string(name) + " must be square");
  return {a.data(), a.data() + a.size()};
}

GroundTruthMatrix to_gt(const FloatArray& a) {
  if (a.ndim() != 2 || a.shape(0) != a.shape(1)) throw std::invalid_argument("ground truth must be square");
  return {static_cast<std::size_t>(a.shape(0)), std::vector<float>(a.data(), a.data() + a.size())};
}

py::array_t<float> gt_array(const GroundTruthMatrix& m) {
  py::array_t<float> a({static_cast<py::ssize_t>(m.n), static_cast<py::ssize_t>(m.n)});
  std::copy(m.values.begin(), m.values.end(), a.mutable_data());
  return a;
}

Embeddings to_embeddings(const FloatArray& a) {
  if (a.ndim() != 2) throw std::invalid_argument("embeddings must be a 2-d array");
  return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
          std::vector<float>(a.data(), a.data() + a.size())};
}

py::array_t<float> embeddings_array(const Embeddings& e) {
  py::array_t<float> a({static_cast<py::ssize_t>(e.count), static_cast<py::ssize_t>(e.d)});
  std::copy(e.values.begin(), e.values.end(), a.mutable_data());
  return a;
}

py::dict metrics_dict(const MetricsReport& r) {
  py::dict d;
  d["hr10"] = r.hr10 ? py::cast(*r.hr10) : py::none();
  d["hr50"] = r.hr50 ? py::cast(*r.hr50) : py::none();
  d["r10_50"] = r.r10_50 ? py::cast(*r.r10_50) : py::none();
  d["queries"] = r.queries;
  d["notes"] = r.notes;
  return d;
}

// A trained encoder loaded from a checkpoint; inputs are lon/lat arrays.
class Encoder {
 public:
  explicit Encoder(const std::filesystem::path& path) : loaded_(load_checkpoint(path)) {}

  py::array_t<float> embed(const std::vector<DoubleArray>& lonlat) {
    std::vector<Trajectory> xy;
    xy.reserve(lonlat.size());
    for (std::size_t i = 0; i < lonlat.size(); ++i)
      xy.push_back(project_to_local_plane(to_trajectory(lonlat[i], std::to_string(i)), loaded_.frame));
    Embeddings e;
    {
      py::gil_scoped_release release;
      e = embed_trajectories(loaded_.model, std::span<const Trajectory>(xy), loaded_.stats);
    }
    return embeddings_array(e);
  }

  std::size_t dim() const { return loaded_.model.config().d; }
  std::string measure() const { return std::string(to_string(loaded_.scale.kind)); }
  double scale() const { return loaded_.scale.s; }

 private:
  LoadedModel loaded_;
};

}  // namespace

PYBIND11_MODULE(_tsmini, m) {
  m.doc() = "Trajectory similarity learning: measures, ground truth, encoder and retrieval metrics.";

  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  // Measures and ground truth.
  m.def(
      "measure",
      [](const std::string& kind, const DoubleArray& a, const DoubleArray& b) {
        return measure(parse_measure_kind(kind), to_trajectory(a), to_trajectory(b));
      },
      py::arg("kind"), py::arg("a"), py::arg("b"), "Distance between two planar (n, 2) trajectories.");
  m.def(
      "ground_truth",
      [](const std::vector<DoubleArray>& trajs, const std::string& kind, std::uint64_t seed, std::size_t threads) {
        const auto ts = to_trajectories(trajs);
        const MeasureKind k = parse_measure_kind(kind);
        SimilarityScale s;
        GroundTruthMatrix g;
        {
          py::gil_scoped_release release;
          s = estimate_scale(ts, k, seed);
          GtBuildOptions opts;
          opts.threads = threads;
          g = build_gt_matrix(ts, k, s, opts);
        }
        return py::make_tuple(gt_array(g), s.s);
      },
      py::arg("trajectories"), py::arg("kind") = "frechet", py::arg("seed") = 0, py::arg("threads") = 0,
      "Similarity matrix exp(-d / s) and the scale s.");

  // Data.
  m.def(
      "synth",
      [](std::size_t count, std::uint64_t seed, std::size_t n_min, std::size_t n_max) {
        SynthConfig sc;
        sc.count = count;
        sc.seed = seed;
        sc.n_min = n_min;
        sc.n_max = n_max;
        std::vector<py::array_t<double>> out;
        for (const auto& t : synth_generate(sc)) out.push_back(to_array(t));
        return out;
      },
      py::arg("count"), py::arg("seed") = 7, py::arg("n_min") = 20, py::arg("n_max") = 80,
      "Planar synthetic random-walk trajectories in meters.");
  m.def(
      "read_trajectories",
      [](const std::filesystem::path& path) {
        std::vector<std::pair<std::string, py::array_t<double>>> out;
        for (const auto& t : read_trajectory_file(path)) out.emplace_back(t.id, to_array(t));
        return out;
      },
      py::arg("path"));

  // Loss.
  m.def(
      "knn_loss",
      [](const DoubleArray& x, const DoubleArray& y, bool include_n_scale, bool exclude_self) {
        const auto xv = square_matrix(x, "x"), yv = square_matrix(y, "y");
        if (xv.size() != yv.size()) throw std::invalid_argument("x and y differ in shape");
        LossConfig cfg;
        cfg.include_N_scale = include_n_scale;
        cfg.exclude_self = exclude_self;
        const std::size_t n = static_cast<std::size_t>(x.shape(0));
        return knn_loss(ad::Tensor<double>::constant(ad::Shape{n, n}, xv), yv, cfg).item();
      },
      py::arg("x"), py::arg("y"), py::arg("include_n_scale") = true, py::arg("exclude_self") = true,
      "Ranking loss of predicted similarities x against targets y, averaged over anchors.");
  m.def(
      "weighted_mse",
      [](const DoubleArray& x, const DoubleArray& y, bool exclude_self) {
        const auto xv = square_matrix(x, "x"), yv = square_matrix(y, "y");
        const std::size_t n = static_cast<std::size_t>(x.shape(0));
        return weighted_mse(yv, ad::Tensor<double>::constant(ad::Shape{n, n}, xv), exclude_self).item();
      },
      py::arg("x"), py::arg("y"), py::arg("exclude_self") = true);

  // Metrics.
  m.def("hr_at_k", &hr_at_k, py::arg("gt_rank"), py::arg("pred_rank"), py::arg("k"));
  m.def("r10_at_50", &r10_at_50, py::arg("gt_rank"), py::arg("pred_rank"));
  m.def(
      "evaluate_embeddings",
      [](const FloatArray& emb, const FloatArray& gt) {
        const Embeddings e = to_embeddings(emb);
        return metrics_dict(evaluate_embeddings(e, e, to_gt(gt)));
      },
      py::arg("embeddings"), py::arg("gt"));
  m.def(
      "evaluate_oracle", [](const FloatArray& gt) { return metrics_dict(evaluate_oracle(to_gt(gt))); }, py::arg("gt"));

  py::class_<Encoder>(m, "Encoder")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def("embed", &Encoder::embed, py::arg("trajectories"), "Embed lon/lat (n, 2) arrays; returns (count, d).")
      .def_property_readonly("dim", &Encoder::dim)
      .def_property_readonly("measure", &Encoder::measure)
      .def_property_readonly("scale", &Encoder::scale);

  // Commands.
  m.def(
      "preprocess",
      [](const std::filesystem::path& in, const std::filesystem::path& out, std::size_t min_len, std::size_t max_len) {
        const auto s = cmd::preprocess(in, out, LengthBounds{min_len, max_len});
        return py::make_tuple(s.accepted, s.rejected);
      },
      py::arg("input"), py::arg("output"), py::arg("min_len") = 20, py::arg("max_len") = 200);
  m.def(
      "compute_gt",
      [](const std::filesystem::path& dataset, const std::string& kind, const std::filesystem::path& out,
         std::uint64_t seed) {
        py::gil_scoped_release release;
        return cmd::ground_truth(dataset, parse_measure_kind(kind), out, seed).matrix_path;
      },
      py::arg("dataset"), py::arg("kind"), py::arg("out"), py::arg("seed") = 0);
  m.def(
      "train",
      [](const std::filesystem::path& config) {
        const RunConfig rc = load_run_config(config);
        TrainReport rep;
        {
          py::gil_scoped_release release;
          rep = cmd::train(rc);
        }
        py::list epochs;
        for (const auto& e : rep.epochs) epochs.append(py::make_tuple(e.epoch, e.train_loss, e.val_hr));
        py::dict d;
        d["epochs"] = epochs;
        d["best_epoch"] = rep.best_epoch;
        d["best_val_hr"] = rep.best_val_hr;
        d["stop"] = std::string(to_string(rep.stop));
        return d;
      },
      py::arg("config"), "Run a training config; writes the checkpoint and log under its output directory.");
  m.def(
      "evaluate",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& dataset, double mask, double shift,
         bool oracle) {
        cmd::EvalOptions opts;
        opts.robustness.mask_ratio = mask;
        opts.robustness.shift_meters = shift;
        opts.oracle = oracle;
        MetricsReport r;
        {
          py::gil_scoped_release release;
          r = cmd::evaluate(checkpoint, dataset, opts);
        }
        return metrics_dict(r);
      },
      py::arg("checkpoint"), py::arg("dataset"), py::arg("mask") = 0.0, py::arg("shift") = 0.0,
      py::arg("oracle") = false);
}
