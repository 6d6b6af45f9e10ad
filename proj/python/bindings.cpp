// Python view of the szlab core: array-level numerics and the experiment driver.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "szlab/analysis.hpp"
#include "szlab/attack.hpp"
#include "szlab/config.hpp"
#include "szlab/dataset.hpp"
#include "szlab/defense.hpp"
#include "szlab/errors.hpp"
#include "szlab/experiment.hpp"
#include "szlab/schedule.hpp"
#include "szlab/tensor_io.hpp"

namespace py = pybind11;
using namespace szlab;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

FloatArray to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  FloatArray out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

py::list to_arrays(const std::vector<Tensor>& ts) {
  py::list out;
  for (const auto& t : ts) out.append(to_array(t));
  return out;
}

std::vector<Tensor> to_tensors(const std::vector<FloatArray>& as) {
  std::vector<Tensor> out;
  out.reserve(as.size());
  for (const auto& a : as) out.push_back(to_tensor(a));
  return out;
}

py::dict stats_dict(const NoiseStats& s) {
  py::dict d;
  d["mean"] = s.mean;
  d["covariance"] = s.covariance;
  if (s.mean_se.size() > 0) {
    d["mean_se"] = s.mean_se;
    d["error_variance"] = s.error_variance;
    d["accepted"] = s.accepted;
  }
  return d;
}

}  // namespace

PYBIND11_MODULE(_szlab, m) {
  m.doc() = "Toy diffusion lab for poisoning and safe-zone training";

  // Later registrations are tried first, so subclasses follow their bases.
  auto& invalid = py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", invalid.ptr());
  py::register_exception<StageFailure>(m, "StageFailure", PyExc_RuntimeError);
  py::register_exception<NumericFailure>(m, "NumericFailure", PyExc_ArithmeticError);
  py::register_exception<SingularMatrix>(m, "SingularMatrix", PyExc_ArithmeticError);
  py::register_exception<UndefinedRatio>(m, "UndefinedRatio", PyExc_ArithmeticError);
  py::register_exception<InsufficientSamples>(m, "InsufficientSamples", PyExc_RuntimeError);

  // ---------------------------------------------------------------- schedule
  py::class_<Schedule>(m, "Schedule")
      .def_static("linear", &Schedule::linear, py::arg("steps") = 1000, py::arg("beta_start") = 1e-4,
                  py::arg("beta_end") = 0.02)
      .def_property_readonly("steps", &Schedule::steps)
      .def("beta", &Schedule::beta, py::arg("t"))
      .def("alpha_bar", &Schedule::alpha_bar, py::arg("t"))
      .def_property_readonly("alpha_bars", &Schedule::alpha_bars);

  m.def(
      "sampler_cdf",
      [](const std::string& kind, double rho, double s) {
        return TimestepSampler::make(sampler_kind_from_string(kind), rho).cdf(s);
      },
      py::arg("kind"), py::arg("rho"), py::arg("s"), "CDF of a timestep sampler on normalised time s in [0,1].");

  // ---------------------------------------------------------------- images
  m.def(
      "generate_concepts",
      [](std::uint64_t seed, std::size_t n_concepts, std::size_t images_per_concept, std::size_t side) {
        DatasetParams p;
        p.n_concepts = n_concepts;
        p.images_per_concept = images_per_concept;
        p.image_side = side;
        const ConceptDataset d = generate_concepts(p, {seed, 1});
        return py::make_tuple(to_arrays(d.images), to_arrays(d.masks));
      },
      py::arg("seed"), py::arg("n_concepts") = 10, py::arg("images_per_concept") = 5, py::arg("side") = 32,
      "Synthetic concept images and their object masks, concept-major.");

  m.def(
      "jpeg_compress", [](const FloatArray& image, int quality) { return to_array(jpeg_compress(to_tensor(image), {quality})); },
      py::arg("image"), py::arg("quality") = 25);
  m.def(
      "project_linf",
      [](const FloatArray& delta, const FloatArray& x, double kappa) {
        return to_array(project_linf(to_tensor(delta), to_tensor(x), kappa));
      },
      py::arg("delta"), py::arg("x"), py::arg("kappa"));
  m.def("read_tensor", [](const std::filesystem::path& p) { return to_array(read_tensor(p)); }, py::arg("path"));
  m.def(
      "write_tensor", [](const std::filesystem::path& p, const FloatArray& a) { write_tensor(p, to_tensor(a)); },
      py::arg("path"), py::arg("array"));

  // ---------------------------------------------------------------- analysis
  m.def("rapsd", [](const FloatArray& f) { return rapsd(to_tensor(f)); }, py::arg("field"));
  m.def("total_power", [](const FloatArray& f) { return total_power(to_tensor(f)); }, py::arg("field"));
  m.def("quantile", &quantile, py::arg("values"), py::arg("q"));
  m.def("timestep_grid", &timestep_grid, py::arg("steps"), py::arg("points") = 21);
  m.def(
      "perturbation_histogram",
      [](const std::vector<FloatArray>& deltas, std::size_t bins, double range) {
        const Histogram h = perturbation_histogram(to_tensors(deltas), bins, range);
        py::dict d;
        d["counts"] = h.counts;
        d["edge_mass"] = h.edge_mass;
        d["center_mass"] = h.center_mass;
        d["total"] = h.total;
        return d;
      },
      py::arg("deltas"), py::arg("bins") = 32, py::arg("range") = 0.0625);

  m.def(
      "conditional_noise_stats",
      [](const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, double alpha_bar, const Eigen::VectorXd& z_t) {
        return stats_dict(conditional_noise_stats(GaussianLatentSpec{mean, cov}, alpha_bar, z_t));
      },
      py::arg("mean"), py::arg("covariance"), py::arg("alpha_bar"), py::arg("z_t"),
      "Closed-form mean and covariance of the noise given the noisy latent, for a Gaussian latent.");
  m.def(
      "monte_carlo_noise_stats",
      [](const Eigen::VectorXd& mean, const Eigen::VectorXd& variances, double alpha_bar, const Eigen::VectorXd& z_t,
         double bin_width, std::size_t samples, std::uint64_t seed) {
        return stats_dict(monte_carlo_noise_stats(GaussianLatentSpec::diagonal(mean, variances), alpha_bar, z_t,
                                                  bin_width, samples, {seed, 1}));
      },
      py::arg("mean"), py::arg("variances"), py::arg("alpha_bar"), py::arg("z_t"), py::arg("bin_width") = 0.25,
      py::arg("samples") = 100000, py::arg("seed") = 1);
  m.def("expected_noise_norm", &expected_noise_norm, py::arg("dim"));
  m.def("exact_noise_norm", &exact_noise_norm, py::arg("dim"));

  // ---------------------------------------------------------------- experiments
  m.def(
      "validate_config", [](const std::string& text) { return parse_experiment_config(text).to_toml(); },
      py::arg("text"), "Parses and validates config text; returns the canonical form.");
  m.def(
      "run_experiment",
      [](const std::filesystem::path& config, const std::filesystem::path& out, std::optional<std::uint64_t> seed,
         const std::vector<std::string>& stages) {
        ExperimentConfig cfg = load_experiment_config(config);
        if (seed) cfg.seed = seed;
        std::vector<Stage> which;
        for (const auto& s : stages) which.push_back(stage_from_string(s));
        py::gil_scoped_release release;
        run_experiment(cfg, out, which);
      },
      py::arg("config"), py::arg("out"), py::arg("seed") = py::none(), py::arg("stages") = std::vector<std::string>{},
      "Runs the pipeline stages (all when empty) into a report directory.");
}
