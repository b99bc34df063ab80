#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cleansplat/harness.hpp"
#include "cleansplat/pipeline.hpp"
#include "cleansplat/png_io.hpp"
#include "cleansplat/render.hpp"
#include "cleansplat/tmp.hpp"

namespace py = pybind11;
using namespace cleansplat;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const Image& img) {
  std::vector<py::ssize_t> shape{img.height(), img.width()};
  if (img.channels() > 1) shape.push_back(img.channels());
  Array a(shape);
  std::copy(img.data().begin(), img.data().end(), a.mutable_data());
  return a;
}

Image to_image(const Array& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw py::value_error("expected an (H, W) or (H, W, C) array");
  const int channels = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  return Image(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), channels,
               std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<bool> mask_array(const BinaryMask& m) {
  py::array_t<bool> a({m.height(), m.width()});
  bool* out = a.mutable_data();
  for (std::size_t p = 0; p < m.pixel_count(); ++p) out[p] = m.test(p);
  return a;
}

Array cloud_params(const GaussianCloud& c) {
  Array a({static_cast<py::ssize_t>(c.size()), static_cast<py::ssize_t>(GaussianCloud::kStride)});
  std::copy(c.params().begin(), c.params().end(), a.mutable_data());
  return a;
}

GaussianCloud cloud_from(const Array& a) {
  if (a.ndim() != 2 || a.shape(1) != static_cast<py::ssize_t>(GaussianCloud::kStride)) {
    throw py::value_error("expected an (N, 14) parameter array");
  }
  GaussianCloud c(static_cast<std::size_t>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), c.params().begin());
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Transient-robust Gaussian splatting core";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  // Translators run newest first, so the subclass goes last.
  auto pipeline_error = py::register_exception<PipelineError>(m, "PipelineError", PyExc_RuntimeError);
  py::register_exception<MissingStageError>(m, "MissingStageError", pipeline_error.ptr());

  py::class_<Camera>(m, "Camera")
      .def(py::init([](int width, int height, double fx, double fy, double cx, double cy) {
             Camera c;
             c.width = width;
             c.height = height;
             c.fx = fx;
             c.fy = fy;
             c.cx = cx;
             c.cy = cy;
             c.validate();
             return c;
           }),
           py::arg("width"), py::arg("height"), py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"))
      .def_readwrite("rotation", &Camera::rotation)
      .def_readwrite("translation", &Camera::translation)
      .def_readonly("width", &Camera::width)
      .def_readonly("height", &Camera::height)
      .def_readonly("fx", &Camera::fx)
      .def_readonly("fy", &Camera::fy)
      .def_readonly("cx", &Camera::cx)
      .def_readonly("cy", &Camera::cy);

  m.def("read_png", [](const std::filesystem::path& p) { return to_array(read_png(p)); });
  m.def("write_png", [](const std::filesystem::path& p, const Array& a) { write_png(p, to_image(a)); });
  m.def("read_mask_png", [](const std::filesystem::path& p) { return mask_array(read_mask_png(p)); });
  m.def("psnr", [](const Array& a, const Array& b) { return psnr(to_image(a), to_image(b)); });
  m.def("ssim", [](const Array& a, const Array& b) { return ssim(to_image(a), to_image(b)); });

  m.def("read_checkpoint", [](const std::filesystem::path& p) { return cloud_params(read_checkpoint(p)); },
        "Gaussian parameters as an (N, 14) array: mean, log scale, quaternion, opacity logit, color logits.");
  m.def("write_checkpoint",
        [](const std::filesystem::path& p, const Array& params) { write_checkpoint(p, cloud_from(params)); });
  m.def(
      "render",
      [](const Array& params, const Camera& camera) {
        const RenderOutput out = render(cloud_from(params), camera);
        return py::make_tuple(to_array(out.color), to_array(out.depth), to_array(out.alpha));
      },
      py::arg("params"), py::arg("camera"), "Returns (color, depth, alpha).");

  m.def("optimal_transient_probability", &optimal_transient_probability, py::arg("residual"),
        py::arg("lambda_prior"));

  py::class_<PipelineConfig>(m, "Config")
      .def_readwrite("seed", &PipelineConfig::seed)
      .def_readwrite("data", &PipelineConfig::data)
      .def_readwrite("output", &PipelineConfig::output)
      .def_property_readonly("archetype", [](const PipelineConfig& c) { return archetype_name(c.scene.archetype); })
      .def("to_yaml", &config_to_yaml)
      .def("hash", &config_hash);
  m.def("parse_config", &parse_config, py::arg("text"), py::arg("source") = "config");
  m.def("load_config", &load_config);

  m.def("generate", &stage_generate, py::call_guard<py::gil_scoped_release>());
  m.def("train", &stage_train, py::call_guard<py::gil_scoped_release>());
  m.def("refine", &stage_refine, py::call_guard<py::gil_scoped_release>());
  m.def("finalize", &stage_finalize, py::call_guard<py::gil_scoped_release>());
  m.def("evaluate", &stage_eval, py::arg("config"), py::arg("cloud") = std::nullopt,
        py::call_guard<py::gil_scoped_release>());
  m.def("export_viz", &stage_export_viz, py::call_guard<py::gil_scoped_release>());
}
