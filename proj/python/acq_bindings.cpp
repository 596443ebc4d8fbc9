// Python bindings over the acq core. Arrays cross the boundary as float32 copies.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "acq/archive.hpp"
#include "acq/attention.hpp"
#include "acq/config.hpp"
#include "acq/data.hpp"
#include "acq/losses.hpp"
#include "acq/metrics.hpp"
#include "acq/training.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

using Array = py::array_t<float, py::array::c_style | py::array::forcecast>;

acq::Tensor to_tensor(const Array& a) {
  acq::Shape shape(a.shape(), a.shape() + a.ndim());
  return acq::Tensor::from(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

Array to_array(const acq::Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Array to_array(const std::vector<float>& v, std::vector<py::ssize_t> shape) {
  Array out(shape);
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }
json from_py(const py::object& o) { return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>()); }

acq::Mode parse_mode(const std::string& m) {
  if (m == "eval") return acq::Mode::kEval;
  if (m == "train") return acq::Mode::kTrain;
  throw std::invalid_argument("mode must be 'eval' or 'train'");
}

py::tuple dataset_arrays(const acq::Dataset& d) {
  return py::make_tuple(to_array(d.pixels, {d.size(), d.channels, d.height, d.width}), py::cast(d.labels));
}

acq::Dataset dataset_from(const Array& images, const std::vector<int64_t>& labels) {
  if (images.ndim() != 4) throw std::invalid_argument("images must be N x C x H x W");
  acq::Dataset d;
  d.channels = images.shape(1);
  d.height = images.shape(2);
  d.width = images.shape(3);
  d.pixels.assign(images.data(), images.data() + images.size());
  d.labels = labels;
  return d;
}

}  // namespace

PYBIND11_MODULE(_acq, m) {
  m.doc() = "Data-free low-bit quantization core";

  py::register_exception<acq::ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<acq::NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<acq::ArchiveError>(m, "ArchiveError", PyExc_IOError);
  py::register_exception<acq::FormatError>(m, "FormatError", PyExc_ValueError);

  m.def("parse_bit_widths", [](const std::string& s) {
    const acq::BitWidths b = acq::parse_bit_widths(s);
    return py::make_tuple(b.weight, b.activation);
  });

  m.def(
      "fake_quantize",
      [](const Array& x, int bits, float lower, float upper) {
        const auto q = acq::QuantizerState::with_bounds(bits, acq::Granularity::kPerLayer, {lower}, {upper});
        return to_array(acq::fake_quantize(to_tensor(x), q));
      },
      py::arg("x"), py::arg("bits"), py::arg("lower"), py::arg("upper"));

  py::class_<acq::LayerGraph>(m, "LayerGraph")
      .def_readonly("spec", &acq::LayerGraph::spec)
      .def_readonly("num_classes", &acq::LayerGraph::num_classes)
      .def("parameter_count", &acq::LayerGraph::parameter_count)
      .def("digest", &acq::LayerGraph::digest)
      .def("bn_digest", &acq::LayerGraph::bn_digest)
      .def(
          "forward",
          [](const acq::LayerGraph& g, const Array& x, const std::string& mode) {
            const acq::ForwardResult r = g.forward(to_tensor(x), parse_mode(mode));
            return py::make_tuple(to_array(r.logits), to_array(r.backbone));
          },
          py::arg("x"), py::arg("mode") = "eval");

  py::class_<acq::GeneratorNet>(m, "Generator")
      .def("digest", &acq::GeneratorNet::digest)
      .def("parameter_count", &acq::GeneratorNet::parameter_count)
      .def(
          "generate",
          [](const acq::GeneratorNet& g, const Array& z, const std::vector<int64_t>& labels,
             const std::vector<int64_t>& positions) { return to_array(g.generate(to_tensor(z), labels, positions)); },
          py::arg("z"), py::arg("labels"), py::arg("positions"));

  m.def("known_specs", &acq::known_specs);
  m.def("build_target_net", &acq::build_target_net, py::arg("spec"), py::arg("num_classes") = 10,
        py::arg("seed") = 0);
  m.def("quantize_graph",
        [](const acq::LayerGraph& g, const std::string& bits) { return acq::quantize_graph(g, acq::parse_bit_widths(bits)); });
  m.def("new_generator", [](uint64_t seed) { return acq::GeneratorNet(acq::GeneratorConfig{}, seed); },
        py::arg("seed") = 0);

  m.def("save_model", &acq::save_model);
  m.def("load_model", &acq::load_model);
  m.def("save_generator", &acq::save_generator);
  m.def("load_generator", &acq::load_generator);
  m.def("archive_kind", &acq::archive_kind);

  m.def(
      "generate_shapes",
      [](int64_t train_size, int64_t test_size, uint64_t seed) {
        acq::ShapesConfig c;
        c.train_size = train_size;
        c.test_size = test_size;
        c.seed = seed;
        const acq::ShapesDataset s = acq::generate_shapes(c);
        return py::make_tuple(dataset_arrays(s.train), dataset_arrays(s.test));
      },
      py::arg("train_size") = 5000, py::arg("test_size") = 1000, py::arg("seed") = 0);

  m.def(
      "accuracy",
      [](const acq::LayerGraph& g, const Array& images, const std::vector<int64_t>& labels, const std::string& mode) {
        return acq::accuracy(g, dataset_from(images, labels), parse_mode(mode));
      },
      py::arg("model"), py::arg("images"), py::arg("labels"), py::arg("mode") = "eval");

  m.def("attention_maps", [](const Array& backbone) {
    const acq::Tensor maps = acq::attention_tensor(to_tensor(backbone));
    return to_array(maps);
  });
  m.def("attention_centers", [](const Array& backbone) {
    std::vector<std::pair<int64_t, int64_t>> out;
    for (const auto& mp : acq::attention_maps(to_tensor(backbone))) out.emplace_back(mp.center.row, mp.center.col);
    return out;
  });

  m.def("ce_loss", [](const Array& logits, const std::vector<int64_t>& labels) {
    return acq::ce_loss(to_tensor(logits), labels).item();
  });
  m.def("kd_loss", [](const Array& s, const Array& t) { return acq::kd_loss(to_tensor(s), to_tensor(t)).item(); });
  m.def("js_divergence", [](const std::vector<double>& p, const std::vector<double>& q) {
    return acq::js_divergence(p, q);
  });

  m.def("default_config", [](const std::string& profile) {
    return to_py(acq::to_json(profile == "full" ? acq::TrainConfig::full_scale() : acq::TrainConfig::desk()));
  }, py::arg("profile") = "desk");

  m.def(
      "run",
      [](const py::object& config, const acq::LayerGraph& teacher, py::object test_images, py::object test_labels) {
        const acq::TrainConfig cfg = acq::train_config_from_json(from_py(config));
        acq::Dataset test;
        const bool has_test = !test_images.is_none();
        if (has_test) test = dataset_from(test_images.cast<Array>(), test_labels.cast<std::vector<int64_t>>());
        acq::RunResult r;
        {
          py::gil_scoped_release release;
          r = acq::run_acq(cfg, teacher, has_test ? &test : nullptr);
        }
        return py::make_tuple(to_py(r.report), r.student, r.generator);
      },
      py::arg("config"), py::arg("teacher"), py::arg("test_images") = py::none(), py::arg("test_labels") = py::none());

  m.def(
      "attention_controllability",
      [](const acq::GeneratorNet& g, const acq::LayerGraph& t, int64_t count, uint64_t seed) {
        return to_py(acq::attention_controllability(g, t, count, seed).to_json());
      },
      py::arg("generator"), py::arg("teacher"), py::arg("count") = 500, py::arg("seed") = 0);
}
