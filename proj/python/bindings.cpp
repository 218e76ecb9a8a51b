#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hazesynth/cli.hpp"
#include "hazesynth/errors.hpp"
#include "hazesynth/eval.hpp"
#include "hazesynth/image.hpp"
#include "hazesynth/losses.hpp"
#include "hazesynth/training.hpp"

namespace py = pybind11;
using namespace hazesynth;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

torch::Tensor to_tensor(const FloatArray& a) {
    std::vector<int64_t> shape(a.shape(), a.shape() + a.ndim());
    return torch::from_blob(const_cast<float*>(a.data()), shape, torch::kFloat32).clone();
}

// H×W arrays are promoted to 1×H×W.
torch::Tensor to_map(const FloatArray& a) {
    auto t = to_tensor(a);
    return t.dim() == 2 ? t.unsqueeze(0) : t;
}

FloatArray to_array(const torch::Tensor& t) {
    auto c = t.detach().to(torch::kFloat32).contiguous();
    FloatArray out(std::vector<py::ssize_t>(c.sizes().begin(), c.sizes().end()));
    std::memcpy(out.mutable_data(), c.data_ptr<float>(), sizeof(float) * c.numel());
    return out;
}

Airlight to_airlight(const std::array<float, 3>& a) { return Airlight(a); }

} // namespace

PYBIND11_MODULE(_hazesynth, m) {
    m.doc() = "Haze rendering, losses and set metrics";

    // Translators run newest first, so the base class goes first.
    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_FileNotFoundError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
    py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    // Images are float32 arrays shaped C×H×W with values in [0, 1]; maps are 1×H×W or H×W.
    m.def("load_image", [](const std::filesystem::path& p) { return to_array(load_image(p).tensor()); });
    m.def("save_image", [](const FloatArray& img, const std::filesystem::path& p) {
        save_image(Image(to_tensor(img)), p);
    });
    m.def("to_grayscale", [](const FloatArray& img) { return to_array(to_grayscale(Image(to_tensor(img))).tensor()); });
    m.def("transmission_from_depth", [](const FloatArray& depth, double beta) {
        return to_array(transmission_from_depth(DepthMap(to_map(depth)), beta).tensor());
    }, py::arg("depth"), py::arg("beta"));
    m.def("apply_density", [](const FloatArray& t, double alpha) {
        return to_array(apply_density(TransmissionMap(to_map(t)), alpha).tensor());
    }, py::arg("t"), py::arg("alpha"));
    m.def("render_haze", [](const FloatArray& clean, const FloatArray& t, std::array<float, 3> a) {
        return to_array(render_haze(Image(to_tensor(clean)), TransmissionMap(to_map(t)), to_airlight(a)).tensor());
    }, py::arg("clean"), py::arg("t"), py::arg("airlight"));

    auto ssim_cfg = [](bool windowed) {
        SsimConfig c;
        c.mode = windowed ? SsimConfig::Mode::windowed : SsimConfig::Mode::global;
        return c;
    };
    m.def("edge_loss", [](const FloatArray& x, const FloatArray& t) {
        return edge_loss(to_map(x), to_map(t)).item<double>();
    });
    m.def("luminance_loss", [ssim_cfg](const FloatArray& x, const FloatArray& t, bool windowed) {
        return luminance_loss(to_map(x), to_map(t), ssim_cfg(windowed)).item<double>();
    }, py::arg("x_lum"), py::arg("t"), py::arg("windowed") = false);
    m.def("smoothness_loss", [](const FloatArray& t) { return smoothness_loss(to_map(t)).item<double>(); });
    m.def("adversarial_loss_discriminator", [](const FloatArray& real, const FloatArray& fake) {
        return adversarial_loss_discriminator(to_tensor(real), to_tensor(fake)).item<double>();
    });
    m.def("adversarial_loss_generator", [](const FloatArray& fake) {
        return adversarial_loss_generator(to_tensor(fake)).item<double>();
    });

    m.def("baseline_render", [](const FloatArray& clean, const FloatArray& depth, uint64_t seed,
                                std::array<double, 2> beta_range, std::array<double, 2> airlight_range) {
        BaselineConfig cfg;
        cfg.seed = seed;
        cfg.beta_range = beta_range;
        cfg.airlight_range = airlight_range;
        Rng rng(seed);
        auto r = baseline_render(Image(to_tensor(clean)), DepthMap(to_map(depth)), cfg, rng);
        return py::make_tuple(to_array(r.image.tensor()), r.beta, r.airlight);
    }, py::arg("clean"), py::arg("depth"), py::arg("seed") = 0,
       py::arg("beta_range") = std::array<double, 2>{0.6, 1.8},
       py::arg("airlight_range") = std::array<double, 2>{0.7, 1.0});

    // Rows are samples.
    m.def("fid_from_samples", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
        return fid(statistics_from_samples(a), statistics_from_samples(b));
    });
    m.def("fid", [](const Eigen::VectorXd& mu1, const Eigen::MatrixXd& cov1, const Eigen::VectorXd& mu2,
                    const Eigen::MatrixXd& cov2) {
        return fid(SetStatistics{mu1, cov1, 0}, SetStatistics{mu2, cov2, 0});
    });
    m.def("psnr", [](const FloatArray& a, const FloatArray& b, double peak) {
        return psnr(Image(to_tensor(a)), Image(to_tensor(b)), peak);
    }, py::arg("a"), py::arg("b"), py::arg("peak") = 1.0);
    m.def("psnr_from_mse", &psnr_from_mse, py::arg("mse"), py::arg("peak") = 1.0);

    py::class_<HazeRenderer>(m, "Renderer")
        .def_static("from_checkpoint", &HazeRenderer::from_checkpoint)
        .def("transmission", [](const HazeRenderer& r, const FloatArray& img) {
            return to_array(r.transmission(Image(to_tensor(img))).tensor());
        })
        .def("airlight", [](const HazeRenderer& r, const FloatArray& img) {
            return r.airlight(Image(to_tensor(img))).rgb();
        })
        .def("render", [](const HazeRenderer& r, const FloatArray& img, double alpha, std::array<float, 3> a) {
            return to_array(r.render(Image(to_tensor(img)), alpha, to_airlight(a)).tensor());
        }, py::arg("clean"), py::arg("alpha"), py::arg("airlight"));

    // Same entry point as the command-line tool; returns the exit code.
    m.def("run_cli", [](const std::vector<std::string>& args) {
        py::gil_scoped_release release;
        return cli::run(args);
    });
}
