#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "featherpoint/config.hpp"
#include "featherpoint/deploy.hpp"
#include "featherpoint/error.hpp"
#include "featherpoint/image_io.hpp"
#include "featherpoint/keypoints.hpp"
#include "featherpoint/metrics.hpp"
#include "featherpoint/nas.hpp"
#include "featherpoint/pipeline.hpp"
#include "featherpoint/quant.hpp"
#include "featherpoint/serialize.hpp"

namespace py = pybind11;
namespace fp = featherpoint;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

fp::Tensor to_tensor(const Array& a) {
    fp::Shape shape(a.shape(), a.shape() + a.ndim());
    return fp::Tensor::from(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

// A 2-D image or heatmap becomes (1,1,H,W); 3-D (C,H,W) becomes (1,C,H,W).
fp::Tensor to_batch(const Array& a) {
    auto t = to_tensor(a);
    fp::Shape s = t.shape();
    if (s.size() == 2) s = {1, 1, s[0], s[1]};
    else if (s.size() == 3) s = {1, s[0], s[1], s[2]};
    else if (s.size() != 4) throw fp::ShapeError("expected a 2-D, 3-D or 4-D array");
    return fp::Tensor::from(s, t.to_vector());
}

Array to_array(const fp::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    Array out(shape);
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

Array descriptors_array(const fp::DescriptorSet& d) {
    Array out({static_cast<py::ssize_t>(d.count), static_cast<py::ssize_t>(d.dim)});
    std::copy(d.values.begin(), d.values.end(), out.mutable_data());
    return out;
}

fp::DescriptorSet descriptor_set(const Array& a) {
    if (a.ndim() != 2) throw fp::ShapeError("descriptors must be a 2-D (count, dim) array");
    return {static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
            std::vector<double>(a.data(), a.data() + a.size())};
}

py::list keypoint_list(const std::vector<fp::Keypoint>& kps) {
    py::list out;
    for (const auto& k : kps) out.append(py::make_tuple(k.x, k.y, k.score));
    return out;
}

fp::RunConfig parse_config(const std::string& text) { return fp::config_from_json(text); }

py::dict report_dict(const fp::EvalReport& r) {
    py::dict d;
    d["mode"] = r.mode;
    d["rep_i"] = r.rep_i;
    d["rep_v"] = r.rep_v;
    d["cor_i"] = r.cor_i;
    d["cor_v"] = r.cor_v;
    d["mean_keypoints"] = r.mean_keypoints;
    return d;
}

py::dict memory_dict(const fp::MemoryReport& r) {
    py::dict d;
    d["bytes_per_elem"] = r.bytes_per_elem;
    d["weights_bytes"] = r.weights_bytes;
    d["peak_activation_bytes"] = r.peak_activation_bytes;
    d["peak_step"] = r.peak_step;
    d["mac_count"] = r.mac_count;
    d["budget_bytes"] = r.budget_bytes;
    d["fits"] = r.fits;
    d["margin"] = r.margin;
    return d;
}

}  // namespace

PYBIND11_MODULE(_featherpoint, m) {
    m.doc() = "Keypoint detector/descriptor distillation, search, quantization and deployment accounting";

    // Python classes for the C++ error hierarchy. Value-like errors also
    // derive from ValueError, I/O errors from OSError.
    py::exception<fp::Error>(m, "Error", PyExc_RuntimeError);
    const auto value = py::exception<fp::ValueError>(m, "InvalidValue", PyExc_ValueError);
    py::exception<fp::ConfigError>(m, "ConfigError", value.ptr());
    py::exception<fp::FormatError>(m, "FormatError", PyExc_ValueError);
    py::exception<fp::ShapeError>(m, "ShapeError", PyExc_ValueError);
    py::exception<fp::NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::exception<fp::IoError>(m, "IoError", PyExc_OSError);
    py::register_exception_translator([](std::exception_ptr p) {
        auto raise = [](const char* name, const char* what) {
            py::set_error(py::module_::import("featherpoint._featherpoint").attr(name), what);
        };
        try {
            if (p) std::rethrow_exception(p);
        } catch (const fp::ConfigError& e) {
            raise("ConfigError", e.what());
        } catch (const fp::ValueError& e) {
            raise("InvalidValue", e.what());
        } catch (const fp::FormatError& e) {
            raise("FormatError", e.what());
        } catch (const fp::ShapeError& e) {
            raise("ShapeError", e.what());
        } catch (const fp::NumericError& e) {
            raise("NumericError", e.what());
        } catch (const fp::IoError& e) {
            raise("IoError", e.what());
        } catch (const fp::Error& e) {
            raise("Error", e.what());
        }
    });

    m.def("default_config", [] { return fp::config_to_json(fp::RunConfig{}); },
          "Full default run configuration as JSON text");
    m.def(
        "resolve_config",
        [](const std::string& text, const std::map<std::string, std::string>& overrides) {
            std::vector<std::pair<std::string, std::string>> ov(overrides.begin(), overrides.end());
            return fp::config_to_json(fp::config_from_json(fp::apply_overrides(text, ov)));
        },
        py::arg("text") = "{}", py::arg("overrides") = std::map<std::string, std::string>{},
        "Validate a JSON configuration with dotted key=value overrides and return it with every field filled in");

    py::class_<fp::ModelGraph>(m, "Model")
        .def_static(
            "build",
            [](std::uint64_t seed, const std::string& config) { return fp::build_student(parse_config(config).model, seed); },
            py::arg("seed") = 0, py::arg("config") = "{}", "Freshly initialized student for the config's model spec")
        .def_static("load", &fp::load_model, py::arg("path"))
        .def("save", [](fp::ModelGraph& self, const std::filesystem::path& p) { fp::save_model(p, self); }, py::arg("path"))
        .def("serialize", [](fp::ModelGraph& self) { return fp::serialize(self); })
        .def_static("deserialize", &fp::deserialize, py::arg("text"))
        .def_property_readonly("spec", [](const fp::ModelGraph& self) { return fp::arch_spec_to_json(self.spec()); })
        .def_property_readonly("param_count",
                               [](fp::ModelGraph& self) {
                                   std::size_t n = 0;
                                   for (const auto& p : self.parameters()) n += p.tensor.numel();
                                   return n;
                               })
        .def(
            "infer",
            [](fp::ModelGraph& self, const Array& image) {
                auto maps = self.infer(to_batch(image));
                return py::make_tuple(to_array(maps.heatmap), to_array(maps.descmap));
            },
            py::arg("image"), "Heatmap (N,1,H,W) and descriptor map (N,D,H/s,W/s) for an image in [0,1]")
        .def(
            "memory_report",
            [](fp::ModelGraph& self, std::size_t height, std::size_t width, std::uint64_t bytes_per_elem) {
                return memory_dict(fp::memory_report(self, {1, 1, height, width}, bytes_per_elem));
            },
            py::arg("height") = fp::kBenchmarkHeight, py::arg("width") = fp::kBenchmarkWidth,
            py::arg("bytes_per_elem") = 4);

    m.def(
        "nms", [](const Array& heat, std::size_t radius) { return keypoint_list(fp::nms(to_batch(heat), radius)); },
        py::arg("heatmap"), py::arg("radius") = fp::kDefaultNmsRadius, "Strict local maxima as (x, y, score) tuples");
    m.def(
        "extract",
        [](const Array& heat, const Array& desc, const std::string& mode, std::size_t radius) {
            auto e = fp::extract(to_batch(heat), to_batch(desc), fp::AdaptiveState{},
                                 fp::threshold_mode_from_string(mode), radius);
            return py::make_tuple(keypoint_list(e.keypoints), descriptors_array(e.descriptors), e.threshold);
        },
        py::arg("heatmap"), py::arg("descmap"), py::arg("mode") = "adaptive",
        py::arg("radius") = fp::kDefaultNmsRadius,
        "Keypoints, (count, D) descriptors and the threshold used; mode is 'adaptive' or 'fixed(<v>)'");
    m.def(
        "match",
        [](const Array& a, const Array& b) {
            py::list out;
            for (const auto& mt : fp::match(descriptor_set(a), descriptor_set(b)))
                out.append(py::make_tuple(mt.index_a, mt.index_b, mt.distance));
            return out;
        },
        py::arg("a"), py::arg("b"), "Mutual nearest neighbours as (index_a, index_b, distance)");

    m.def(
        "gumbel_softmax",
        [](const Array& logits, double tau, const Array& noise) {
            return to_array(fp::gumbel_softmax(to_tensor(logits), tau, to_tensor(noise)));
        },
        py::arg("logits"), py::arg("tau"), py::arg("noise"));
    m.def(
        "fake_quant_affine",
        [](const Array& x, double lo, double hi) { return to_array(fp::fake_quant(to_tensor(x), fp::affine_params(lo, hi))); },
        py::arg("x"), py::arg("lo"), py::arg("hi"), "Quantize-dequantize with affine int8 parameters for [lo, hi]");
    m.def(
        "descriptor_std",
        [](const Array& d) {
            const auto set = descriptor_set(d);
            const auto r = fp::descriptor_std_analysis(set.values, set.dim);
            py::dict out;
            out["dim"] = r.dim;
            out["theoretical_std"] = r.theoretical_std;
            out["measured_std"] = r.measured_std;
            out["ratio"] = r.ratio;
            return out;
        },
        py::arg("descriptors"));
    m.def(
        "check_budget",
        [](std::uint64_t weights, std::uint64_t acts, std::uint64_t budget) {
            const auto c = fp::check_budget(weights, acts, budget);
            return py::make_tuple(c.fits, c.margin);
        },
        py::arg("weights_bytes"), py::arg("peak_activation_bytes"), py::arg("budget_bytes") = fp::kDefaultBudgetBytes);
    m.def(
        "read_image",
        [](const std::filesystem::path& p) { return to_array(fp::image_to_gray(fp::read_pnm(p))); }, py::arg("path"),
        "PGM/PPM image as a (1,1,H,W) gray array in [0,1]");

    m.def(
        "train",
        [](const std::string& config) {
            auto o = fp::cmd_train(parse_config(config));
            return o.model_path;
        },
        py::arg("config") = "{}", "Distill a student; returns the model path");
    m.def(
        "quantize",
        [](const std::string& config, const std::filesystem::path& model) {
            auto o = fp::cmd_quantize(parse_config(config), model);
            py::list fl, ql;
            for (const auto& r : o.float_reports) fl.append(report_dict(r));
            for (const auto& r : o.quant_reports) ql.append(report_dict(r));
            return py::make_tuple(fl, ql, o.ranges.mean_cross_channel_variance);
        },
        py::arg("config"), py::arg("model"));
    m.def(
        "evaluate",
        [](const std::string& config, const std::filesystem::path& model) {
            py::list out;
            for (const auto& r : fp::cmd_eval(parse_config(config), model)) out.append(report_dict(r));
            return out;
        },
        py::arg("config"), py::arg("model"));
    m.def(
        "report",
        [](const std::string& config, const std::filesystem::path& model) {
            py::list out;
            for (const auto& r : fp::cmd_report(parse_config(config), model)) out.append(memory_dict(r));
            return out;
        },
        py::arg("config"), py::arg("model"));
    m.def(
        "gen_data",
        [](const std::string& config, const std::filesystem::path& dir, std::size_t count) {
            fp::cmd_gen_data(parse_config(config), dir, count);
        },
        py::arg("config"), py::arg("dir"), py::arg("count") = 6);
}
