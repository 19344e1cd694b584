#include "zecon/error.hpp"
#include "zecon/guidance.hpp"
#include "zecon/guidance_content.hpp"
#include "zecon/pipeline.hpp"
#include "zecon/presets.hpp"
#include "zecon/sampler.hpp"
#include "zecon/schedule.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace zecon;
using json = nlohmann::json;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    std::vector<std::size_t> shape(a.shape(), a.shape() + a.ndim());
    return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
    Array a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
    std::copy(t.data(), t.data() + t.size(), a.mutable_data());
    return a;
}

py::object to_py(const json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

json from_py(const py::object& o) {
    if (py::isinstance<py::str>(o)) return json::parse(o.cast<std::string>(), nullptr, true, true);
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Zero-shot contrastive guided diffusion sampling";

    static py::exception<Error> error(m, "ZeconError", PyExc_RuntimeError);
    static py::exception<ValidationError> validation(m, "ValidationError", PyExc_ValueError);
    static py::exception<StepError> step(m, "StepError", error.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ValidationError& e) {
            validation(e.what());
        } catch (const StepError& e) {
            step(e.what());
        } catch (const Error& e) {
            error(e.what());
        }
    });

    py::class_<NoiseSchedule>(m, "NoiseSchedule")
        .def(py::init<std::vector<double>>(), py::arg("betas"))
        .def_property_readonly("steps", &NoiseSchedule::steps)
        .def_property_readonly("betas", &NoiseSchedule::betas)
        .def_property_readonly("alpha_bars", &NoiseSchedule::alpha_bars)
        .def("alpha_bar", &NoiseSchedule::alpha_bar);
    m.def("linear_schedule", &make_linear_schedule, py::arg("steps") = 1000, py::arg("beta_start") = 1e-4,
          py::arg("beta_end") = 0.02);

    py::class_<RespacedSchedule>(m, "RespacedSchedule")
        .def(py::init<NoiseSchedule, int>(), py::arg("base"), py::arg("respaced_steps"))
        .def_property_readonly("steps", &RespacedSchedule::steps)
        .def_property_readonly("index_map", &RespacedSchedule::index_map)
        .def_property_readonly("betas", &RespacedSchedule::betas)
        .def_property_readonly("base", &RespacedSchedule::base)
        .def("alpha_bar", &RespacedSchedule::alpha_bar)
        .def("timestep", &RespacedSchedule::timestep);
    m.def("respace", &respace, py::arg("schedule"), py::arg("respaced_steps"));

    py::enum_<ForwardMode>(m, "ForwardMode")
        .value("ddim_deterministic", ForwardMode::ddim_deterministic)
        .value("ddpm_stochastic", ForwardMode::ddpm_stochastic);
    py::enum_<ReverseMode>(m, "ReverseMode").value("ddpm", ReverseMode::ddpm).value("ddim", ReverseMode::ddim);
    py::enum_<EpsMode>(m, "EpsMode").value("reuse", EpsMode::reuse).value("rederive", EpsMode::rederive);

    py::class_<SamplerConfig>(m, "SamplerConfig")
        .def(py::init<>())
        .def_readwrite("forward_mode", &SamplerConfig::forward_mode)
        .def_readwrite("reverse_mode", &SamplerConfig::reverse_mode)
        .def_readwrite("eta", &SamplerConfig::eta)
        .def_readwrite("t0_index", &SamplerConfig::t0_index)
        .def_readwrite("respaced_steps", &SamplerConfig::respaced_steps)
        .def_readwrite("eps_mode", &SamplerConfig::eps_mode)
        .def("validate", &SamplerConfig::validate);

    m.def(
        "sample",
        [](const Array& x0, const RespacedSchedule& s, const SamplerConfig& cfg,
           const std::function<Array(const Array&, std::size_t)>& eps_fn, std::uint64_t seed) {
            ScoreCallbacks cb;
            cb.predict_eps = [&](const Tensor& x, std::size_t t) { return to_tensor(eps_fn(to_array(x), t)); };
            CallbackScoreAdapter model("python", cb);
            auto r = sample(to_tensor(x0), s, cfg, model, NullGuidance{}, RandomStream(seed));
            py::list trace;
            for (const auto& st : r.trace) trace.append(py::dict(py::arg("k") = st.k, py::arg("t") = st.t));
            return py::dict(py::arg("image") = to_array(r.image), py::arg("latent") = to_array(r.latent),
                            py::arg("trace") = trace);
        },
        py::arg("x0"), py::arg("schedule"), py::arg("config"), py::arg("predict_eps"), py::arg("seed") = 0,
        "Unguided inversion and reverse sampling with a Python noise predictor f(x_t, t) -> eps.");

    m.def(
        "analytic_eps",
        [](const Array& x, std::size_t t, const Array& mu, double s2, const NoiseSchedule& s) {
            return to_array(AnalyticGaussianScore(to_tensor(mu), s2, s).predict_eps(to_tensor(x), t));
        },
        py::arg("x"), py::arg("t"), py::arg("mu"), py::arg("s2"), py::arg("schedule"));

    m.def(
        "infonce",
        [](const std::vector<double>& q, const std::vector<double>& pos, const std::vector<std::vector<double>>& negs,
           double tau) {
            std::vector<std::span<const double>> spans(negs.begin(), negs.end());
            return infonce(q, pos, spans, tau);
        },
        py::arg("query"), py::arg("positive"), py::arg("negatives"), py::arg("tau") = 0.07);

    m.def("preset_names", &preset_names);
    m.def(
        "validate_config",
        [](const py::object& doc, bool first_error) {
            auto mode = first_error ? ValidationMode::first_error : ValidationMode::all_errors;
            return to_py(validate_config(from_py(doc), mode).to_json());
        },
        py::arg("config"), py::arg("first_error") = false,
        "Validates a config (dict or JSON text) and returns it with defaults filled in.");

    m.def(
        "run",
        [](const py::object& doc, std::optional<Array> source, bool write_outputs) {
            RunConfig c = validate_config(from_py(doc));
            RunOptions o;
            if (source) o.source = to_tensor(*source);
            o.write_outputs = write_outputs;
            RunOutcome out;
            {
                py::gil_scoped_release release;
                out = run_task(c, o);
            }
            return py::dict(py::arg("image") = to_array(out.result.image), py::arg("source") = to_array(out.source),
                            py::arg("manifest") = to_py(out.manifest));
        },
        py::arg("config"), py::arg("source") = py::none(), py::arg("write_outputs") = false,
        "Runs one guided task with the registered built-in models.");

    m.def("tensor_digest", [](const Array& a) { return tensor_digest(to_tensor(a)); });
}
