#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "recondet/datasets.hpp"
#include "recondet/ddim.hpp"
#include "recondet/denoiser.hpp"
#include "recondet/detector.hpp"
#include "recondet/gan.hpp"
#include "recondet/image.hpp"
#include "recondet/metrics.hpp"
#include "recondet/schedule.hpp"

namespace py = pybind11;

namespace {

using namespace recondet;

// Numpy uses (height, width, channel) interleaved rows; Image stores planar
// channels. Conversions copy, so arrays and images never alias.
Image image_from_array(
    py::array_t<float, py::array::c_style | py::array::forcecast> array) {
  if (array.ndim() != 3 || array.shape(2) != 3) {
    throw std::invalid_argument("expected an array shaped (height, width, 3)");
  }
  const int h = static_cast<int>(array.shape(0));
  const int w = static_cast<int>(array.shape(1));
  if (h <= 0 || w <= 0) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  Image img(h, w);
  auto a = array.unchecked<3>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        img.at(c, y, x) = a(y, x, c);
      }
    }
  }
  return img;
}

py::array_t<float> image_to_array(const Image& img) {
  py::array_t<float> out({img.height, img.width, 3});
  auto a = out.mutable_unchecked<3>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        a(y, x, c) = img.at(c, y, x);
      }
    }
  }
  return out;
}

py::array_t<float> sample_to_array(const nn::Tensor& t, int sample) {
  py::array_t<float> out({t.c, t.h, t.w});
  const float* src = t.sample(sample);
  std::copy(src, src + t.chw(), out.mutable_data());
  return out;
}

// The handles keep models behind unique_ptr: the structs stay movable and
// honestly non-copyable, which is what lets pybind11 return them by value.

// Loaded diffusion model plus the schedule it was trained under.
struct DmModel {
  std::unique_ptr<Denoiser> den;
  DiffusionSchedule sched;

  Image reconstruct(const Image& img, int steps) {
    return reconstruct_dm(*den, sched, img, steps);
  }
  std::vector<Image> sample(int count, int steps, std::uint64_t seed) {
    return sample_dm(*den, sched, count, steps, seed);
  }
};

// Loaded generator/encoder pair; reconstruction inverts through both.
struct GanInverter {
  std::unique_ptr<GanModel> model;
  std::unique_ptr<Encoder> enc;

  Image reconstruct(const Image& img, int refine_steps, double lr) {
    return reconstruct_gan(model->gen, *enc, img, refine_steps, lr);
  }
  std::vector<Image> sample(int count, std::uint64_t seed) {
    return sample_gan(*model, count, seed);
  }
};

// Loaded classifier; prediction assembles the mode's input stack itself.
struct DetectorHandle {
  std::unique_ptr<Detector> det;

  py::tuple predict_one(const Image& x, const Image& x_rg, const Image& x_rd) {
    nn::Tensor in = build_input(x, x_rg, x_rd, det->config().mode);
    DetectorPrediction p = [&] {
      py::gil_scoped_release release;
      return predict(*det, in);
    }();
    return py::make_tuple(p.label[0], p.probs[0]);
  }

  py::array_t<float> features_one(const Image& x, const Image& x_rg, const Image& x_rd) {
    nn::Tensor in = build_input(x, x_rg, x_rd, det->config().mode);
    nn::Tensor f = [&] {
      py::gil_scoped_release release;
      return det->features(in);
    }();
    return sample_to_array(f, 0);
  }
};

}  // namespace

PYBIND11_MODULE(_recondet, m) {
  m.doc() = "multi-reconstruction synthetic face detection core";
  m.attr("__version__") = "0.1.0";

  py::class_<Image>(m, "Image")
      .def(py::init<int, int>(), py::arg("height"), py::arg("width"))
      .def_readonly("height", &Image::height)
      .def_readonly("width", &Image::width)
      .def_static("from_array", &image_from_array, py::arg("array"),
                  "Builds an image from a float32 array shaped (height, width, 3).")
      .def("to_array", &image_to_array, "Returns the pixels as (height, width, 3) float32.")
      .def("__repr__", [](const Image& img) {
        return "Image(" + std::to_string(img.height) + "x" + std::to_string(img.width) + ")";
      });

  m.def("load_image", &load_image, py::arg("path"), py::arg("target_size"));
  m.def("load_image_native", &load_image_native, py::arg("path"));
  m.def("save_png", &save_png, py::arg("image"), py::arg("path"), py::arg("bit_depth") = 8);
  m.def("save_jpeg", &save_jpeg, py::arg("image"), py::arg("path"), py::arg("quality"));
  m.def("gaussian_blur", &gaussian_blur, py::arg("image"), py::arg("sigma"));
  m.def("jpeg_compress", &jpeg_compress, py::arg("image"), py::arg("level"));
  m.def("resize", &resize, py::arg("image"), py::arg("size"));
  m.def(
      "snap_u16", [](Image img) { snap_u16(img); return img; }, py::arg("image"),
      "Returns a copy with every value clipped and snapped to the 16-bit grid.");
  m.def("mse", &mse, py::arg("a"), py::arg("b"));
  m.def("psnr", &psnr, py::arg("a"), py::arg("b"));
  m.def("normalize_u8", &normalize_u8, py::arg("value"));
  m.def("denormalize_u8", &denormalize_u8, py::arg("value"));
  m.def("jpeg_quality_for_level", &jpeg_quality_for_level, py::arg("level"));

  py::class_<DiffusionSchedule>(m, "DiffusionSchedule")
      .def_static("linear", &DiffusionSchedule::linear, py::arg("timesteps") = 1000,
                  py::arg("beta_start") = 1e-4, py::arg("beta_end") = 0.02)
      .def_readonly("T", &DiffusionSchedule::T)
      .def_readonly("beta_start", &DiffusionSchedule::beta_start)
      .def_readonly("beta_end", &DiffusionSchedule::beta_end)
      .def_readonly("beta", &DiffusionSchedule::beta)
      .def_readonly("alpha_bar", &DiffusionSchedule::alpha_bar)
      .def("abar", &DiffusionSchedule::abar, py::arg("t"))
      .def("subset", &DiffusionSchedule::subset, py::arg("steps"))
      .def("__repr__", [](const DiffusionSchedule& s) {
        return "DiffusionSchedule(T=" + std::to_string(s.T) + ")";
      });

  m.def("ddim_transport", &ddim_transport, py::arg("x"), py::arg("eps"), py::arg("abar_from"),
        py::arg("abar_to"));
  m.def("forward_diffuse", &forward_diffuse, py::arg("x0"), py::arg("eps"), py::arg("abar"));

  py::enum_<Family>(m, "Family")
      .value("real", Family::real)
      .value("gan", Family::gan)
      .value("dm", Family::dm);
  m.def("family_name", [](Family f) { return std::string(family_name(f)); }, py::arg("family"));
  m.def("family_label", &family_label, py::arg("model_name"),
        "Maps a source model name to its class (real, gan or dm).");

  py::enum_<InputMode>(m, "InputMode")
      .value("cascade_multi", InputMode::cascade_multi)
      .value("cascade_gan", InputMode::cascade_gan)
      .value("cascade_dm", InputMode::cascade_dm)
      .value("residual_multi", InputMode::residual_multi)
      .value("residual_gan", InputMode::residual_gan)
      .value("residual_dm", InputMode::residual_dm);
  m.def("parse_input_mode", &parse_input_mode, py::arg("name"));
  m.def(
      "input_mode_name", [](InputMode mode) { return std::string(input_mode_name(mode)); },
      py::arg("mode"));
  m.def("all_input_modes", [] { return all_input_modes(); });
  m.def("input_channels", &input_channels, py::arg("mode"));
  m.def("mode_uses_gan", &mode_uses_gan, py::arg("mode"));
  m.def("mode_uses_dm", &mode_uses_dm, py::arg("mode"));
  m.def(
      "build_input",
      [](const Image& x, const Image& x_rg, const Image& x_rd, InputMode mode) {
        return sample_to_array(build_input(x, x_rg, x_rd, mode), 0);
      },
      py::arg("x"), py::arg("x_rg"), py::arg("x_rd"), py::arg("mode"),
      "Stacks the classifier planes for one sample, shaped (channels, h, w).");

  m.def("softmax3", &softmax3, py::arg("logits"));
  m.def("argmax3", &argmax3, py::arg("probs"));
  m.def("ternary_cross_entropy", &ternary_cross_entropy, py::arg("label"), py::arg("probs"));

  m.def("accuracy", &accuracy, py::arg("predictions"), py::arg("truths"));
  m.def("average_precision", &average_precision, py::arg("scores"), py::arg("positives"));
  m.def("mann_whitney_p", &mann_whitney_p, py::arg("low"), py::arg("high"));

  py::class_<DmModel>(m, "DmModel")
      .def("reconstruct", &DmModel::reconstruct, py::arg("image"), py::arg("steps") = 20,
           py::call_guard<py::gil_scoped_release>())
      .def("sample", &DmModel::sample, py::arg("count"), py::arg("steps"), py::arg("seed"),
           py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("image_size",
                             [](const DmModel& md) { return md.den->config().image_size; })
      .def_property_readonly("schedule", [](const DmModel& md) { return md.sched; });
  m.def(
      "load_denoiser",
      [](const std::string& path) {
        DiffusionSchedule sched;
        auto den = std::make_unique<Denoiser>(Denoiser::load(path, &sched));
        return DmModel{std::move(den), std::move(sched)};
      },
      py::arg("path"), "Loads a denoiser checkpoint together with its schedule.");

  py::class_<GanInverter>(m, "GanInverter")
      .def("reconstruct", &GanInverter::reconstruct, py::arg("image"), py::arg("refine_steps") = 20,
           py::arg("lr") = 0.05, py::call_guard<py::gil_scoped_release>())
      .def("sample", &GanInverter::sample, py::arg("count"), py::arg("seed"),
           py::call_guard<py::gil_scoped_release>())
      .def_property_readonly("image_size",
                             [](const GanInverter& g) { return g.model->cfg.image_size; });
  m.def(
      "load_gan",
      [](const std::string& gan_path, const std::string& encoder_path) {
        auto model = std::make_unique<GanModel>(GanModel::load(gan_path));
        auto enc = std::make_unique<Encoder>(Encoder::load(encoder_path));
        return GanInverter{std::move(model), std::move(enc)};
      },
      py::arg("gan_path"), py::arg("encoder_path"),
      "Loads a generator checkpoint and the encoder that initializes its inversion.");

  py::class_<DetectorHandle>(m, "Detector")
      .def("predict", &DetectorHandle::predict_one, py::arg("x"), py::arg("x_rg"), py::arg("x_rd"),
           "Returns (label, probabilities) for one sample; unused reconstructions are ignored.")
      .def("features", &DetectorHandle::features_one, py::arg("x"), py::arg("x_rg"),
           py::arg("x_rd"))
      .def_property_readonly("mode", [](const DetectorHandle& h) { return h.det->config().mode; })
      .def_property_readonly("image_size",
                             [](const DetectorHandle& h) { return h.det->config().image_size; })
      .def_property_readonly("feature_dim",
                             [](const DetectorHandle& h) { return h.det->feature_dim(); });
  m.def(
      "load_detector",
      [](const std::string& path) {
        return DetectorHandle{std::make_unique<Detector>(Detector::load(path))};
      },
      py::arg("path"));
}
