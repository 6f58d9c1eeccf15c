#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "neurove/datasets.hpp"
#include "neurove/encoding.hpp"
#include "neurove/metrics.hpp"
#include "neurove/network.hpp"
#include "neurove/neuron.hpp"
#include "neurove/recurrent.hpp"
#include "neurove/training.hpp"

namespace py = pybind11;
using namespace neurove;

namespace {

py::array_t<double> tensor_to_numpy(const Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> out(shape);
    std::copy(t.data(), t.data() + t.size(), out.mutable_data());
    return out;
}

Tensor numpy_to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
    Shape shape;
    for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<std::size_t>(a.shape(i)));
    Tensor t(shape);
    std::copy(a.data(), a.data() + t.size(), t.data());
    return t;
}

py::array_t<std::uint8_t> spikes_to_numpy(const SpikeTensor& st) {
    py::array_t<std::uint8_t> out({st.t_steps, st.batch, st.channels, st.height, st.width});
    std::copy(st.data.begin(), st.data.end(), out.mutable_data());
    return out;
}

}  // namespace

PYBIND11_MODULE(_neurove, m) {
    m.doc() = "NeuroVE spiking time-series toolkit (ALIF / ASLSTM / event encoding)";

    // --- neuron ----------------------------------------------------------
    py::enum_<SurrogateKind>(m, "SurrogateKind")
        .value("rectangular", SurrogateKind::rectangular)
        .value("arctan", SurrogateKind::arctan);

    py::class_<SurrogateSpec>(m, "SurrogateSpec")
        .def(py::init<>())
        .def_readwrite("kind", &SurrogateSpec::kind)
        .def_readwrite("width", &SurrogateSpec::width);

    py::class_<NeuronParams>(m, "NeuronParams")
        .def(py::init<>())
        .def_readwrite("alpha", &NeuronParams::alpha)
        .def_readwrite("beta", &NeuronParams::beta)
        .def_readwrite("v_th", &NeuronParams::v_th)
        .def_readwrite("v_rest", &NeuronParams::v_rest)
        .def_readwrite("diffusion_d", &NeuronParams::diffusion_d);

    py::class_<NeuronState>(m, "NeuronState")
        .def(py::init<>())
        .def_static("zeros", &NeuronState::zeros)
        .def_readwrite("v", &NeuronState::v)
        .def_readwrite("s", &NeuronState::s)
        .def_readwrite("v_final_prev_layer", &NeuronState::v_final_prev_layer);

    m.def("diffusion_term", &diffusion_term, py::arg("v_i"), py::arg("v_j"), py::arg("d"));
    m.def("heaviside", &heaviside, py::arg("v"), py::arg("v_th"));
    m.def("surrogate_grad", &surrogate_grad, py::arg("v"), py::arg("v_th"), py::arg("spec"));
    m.def(
        "lif_step",
        [](const NeuronState& st, const std::vector<double>& input, const NeuronParams& p) {
            return lif_step(st, input, p);
        },
        py::arg("state"), py::arg("input"), py::arg("params"));
    m.def(
        "alif_step",
        [](const NeuronState& st, const std::vector<double>& input, const NeuronParams& p) {
            return alif_step(st, input, p);
        },
        py::arg("state"), py::arg("input"), py::arg("params"));

    // --- recurrent ---------------------------------------------------------
    py::enum_<RecurrenceMode>(m, "RecurrenceMode")
        .value("membrane", RecurrenceMode::membrane)
        .value("spike", RecurrenceMode::spike);

    py::class_<ASLSTMParams>(m, "ASLSTMParams")
        .def_static("init", &ASLSTMParams::init, py::arg("input_dim"), py::arg("hidden_dim"), py::arg("seed"))
        .def_readwrite("alpha", &ASLSTMParams::alpha)
        .def_readwrite("v_th", &ASLSTMParams::v_th)
        .def_readwrite("diffusion_d", &ASLSTMParams::diffusion_d)
        .def_readwrite("kappa", &ASLSTMParams::kappa)
        .def_readwrite("recurrence", &ASLSTMParams::recurrence)
        .def_readonly("input_dim", &ASLSTMParams::input_dim)
        .def_readonly("hidden_dim", &ASLSTMParams::hidden_dim);

    py::class_<ASLSTMState>(m, "ASLSTMState")
        .def_static("zeros", &ASLSTMState::zeros)
        .def_readwrite("c", &ASLSTMState::c)
        .def_readwrite("h", &ASLSTMState::h)
        .def_readwrite("v", &ASLSTMState::v)
        .def_readwrite("s", &ASLSTMState::s)
        .def_readwrite("v_prev", &ASLSTMState::v_prev);

    py::class_<OutputReadout>(m, "OutputReadout")
        .def_readonly("value", &OutputReadout::value)
        .def_readonly("kappa", &OutputReadout::kappa);

    m.def(
        "aslstm_step",
        [](const ASLSTMState& st, const std::vector<double>& x, const ASLSTMParams& p) {
            return aslstm_step(st, x, p);
        },
        py::arg("state"), py::arg("x"), py::arg("params"));
    m.def(
        "slstm_step",
        [](const ASLSTMState& st, const std::vector<double>& x, const ASLSTMParams& p) {
            return slstm_step(st, x, p);
        },
        py::arg("state"), py::arg("x"), py::arg("params"));
    m.def(
        "output_neuron",
        [](const std::vector<double>& v_tf, const std::vector<double>& x_tf, const std::vector<double>& v_prev,
           const ASLSTMParams& p) { return output_neuron(v_tf, x_tf, v_prev, p); },
        py::arg("v_tf"), py::arg("x_tf"), py::arg("v_prev"), py::arg("params"));
    m.def(
        "alif_state_update",
        [](const std::vector<double>& h, const std::vector<double>& x_h, const std::vector<double>& v_prev,
           const std::vector<double>& s_prev, double alpha, double d) {
            return alif_state_update(h, x_h, v_prev, s_prev, alpha, d);
        },
        py::arg("h"), py::arg("x_h"), py::arg("v_prev"), py::arg("s_prev"), py::arg("alpha"), py::arg("d"));

    // --- encoding ------------------------------------------------------------
    py::class_<Event>(m, "Event")
        .def(py::init([](std::uint64_t t_us, std::uint16_t x, std::uint16_t y, int p) {
                 return Event{t_us, x, y, static_cast<std::int8_t>(p)};
             }),
             py::arg("t_us"), py::arg("x"), py::arg("y"), py::arg("p"))
        .def_readwrite("t_us", &Event::t_us)
        .def_readwrite("x", &Event::x)
        .def_readwrite("y", &Event::y)
        .def_property(
            "p", [](const Event& e) { return static_cast<int>(e.p); },
            [](Event& e, int p) { e.p = static_cast<std::int8_t>(p); })
        .def("__eq__", [](const Event& a, const Event& b) { return a == b; });

    py::class_<WindowSpec>(m, "WindowSpec")
        .def(py::init<>())
        .def_readwrite("window_duration", &WindowSpec::window_duration)
        .def_readwrite("n_bins", &WindowSpec::n_bins)
        .def_readwrite("t_steps", &WindowSpec::t_steps)
        .def_readwrite("sensor_h", &WindowSpec::sensor_h)
        .def_readwrite("sensor_w", &WindowSpec::sensor_w);

    m.def(
        "encode_events",
        [](const std::vector<Event>& events, const WindowSpec& spec, std::optional<std::uint64_t> t0) {
            const BinnedEvents groups =
                t0 ? bin_events(events, spec, *t0) : bin_events(events, spec);
            return spikes_to_numpy(encode_polarity(groups, spec));
        },
        py::arg("events"), py::arg("spec"), py::arg("t0_us") = std::nullopt,
        "Bin events and encode binary polarity occupancy as [T,1,2n,H,W]");

    m.def("load_events", &load_events, py::arg("path"), py::arg("format"), py::arg("sensor_wh") = std::nullopt);
    m.def("save_events",
          [](const std::filesystem::path& path, EventFileFormat fmt, const std::vector<Event>& events) {
              save_events(path, fmt, events);
          });
    py::enum_<EventFileFormat>(m, "EventFileFormat")
        .value("text", EventFileFormat::text)
        .value("binary", EventFileFormat::binary);

    // --- datasets ---------------------------------------------------------------
    py::class_<SineDatasetSpec>(m, "SineDatasetSpec")
        .def(py::init<>())
        .def_readwrite("num_sequences", &SineDatasetSpec::num_sequences)
        .def_readwrite("train_count", &SineDatasetSpec::train_count)
        .def_readwrite("val_count", &SineDatasetSpec::val_count)
        .def_readwrite("steps", &SineDatasetSpec::steps)
        .def_readwrite("forecast_steps", &SineDatasetSpec::forecast_steps)
        .def_readwrite("x_step", &SineDatasetSpec::x_step);

    py::class_<SineSequence>(m, "SineSequence")
        .def_readonly("phase", &SineSequence::phase)
        .def_readonly("y", &SineSequence::y);

    py::class_<SineDataset>(m, "SineDataset")
        .def_readonly("sequences", &SineDataset::sequences)
        .def_readonly("train_indices", &SineDataset::train_indices)
        .def_readonly("val_indices", &SineDataset::val_indices);

    m.def("gen_sine_dataset", &gen_sine_dataset, py::arg("spec"), py::arg("seed"));

    py::class_<Quat>(m, "Quat")
        .def(py::init<>())
        .def_static("from_yaw", &Quat::from_yaw)
        .def_readwrite("w", &Quat::w)
        .def_readwrite("x", &Quat::x)
        .def_readwrite("y", &Quat::y)
        .def_readwrite("z", &Quat::z);

    py::class_<PoseSample>(m, "PoseSample")
        .def(py::init<>())
        .def_readwrite("t", &PoseSample::t)
        .def_readwrite("position", &PoseSample::position)
        .def_readwrite("orientation", &PoseSample::orientation);

    py::class_<TimedVelocity>(m, "TimedVelocity")
        .def_readonly("t", &TimedVelocity::t)
        .def_readonly("linear", &TimedVelocity::linear)
        .def_readonly("angular_deg", &TimedVelocity::angular_deg);

    m.def(
        "poses_to_velocity",
        [](const std::vector<PoseSample>& poses) { return poses_to_velocity(poses); },
        py::arg("poses"));

    py::class_<TrajectorySpec>(m, "TrajectorySpec")
        .def(py::init<>())
        .def_readwrite("start_position", &TrajectorySpec::start_position)
        .def_readwrite("linear_velocity_world", &TrajectorySpec::linear_velocity_world)
        .def_readwrite("spin_rate_rad", &TrajectorySpec::spin_rate_rad)
        .def_readwrite("start_yaw_rad", &TrajectorySpec::start_yaw_rad);

    py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
        .def(py::init<>())
        .def_readwrite("focal_px", &CameraIntrinsics::focal_px)
        .def_readwrite("cx", &CameraIntrinsics::cx)
        .def_readwrite("cy", &CameraIntrinsics::cy);

    py::class_<SyntheticSceneSpec>(m, "SyntheticSceneSpec")
        .def(py::init<>())
        .def_readwrite("intrinsics", &SyntheticSceneSpec::intrinsics)
        .def_readwrite("sensor_w", &SyntheticSceneSpec::sensor_w)
        .def_readwrite("sensor_h", &SyntheticSceneSpec::sensor_h)
        .def_readwrite("plane_z", &SyntheticSceneSpec::plane_z)
        .def_readwrite("texture_cell_m", &SyntheticSceneSpec::texture_cell_m)
        .def_readwrite("texture_density", &SyntheticSceneSpec::texture_density)
        .def_readwrite("contrast_threshold", &SyntheticSceneSpec::contrast_threshold)
        .def_readwrite("sim_dt", &SyntheticSceneSpec::sim_dt)
        .def_readwrite("trajectory", &SyntheticSceneSpec::trajectory);

    py::class_<SyntheticClip>(m, "SyntheticClip")
        .def_readonly("events", &SyntheticClip::events)
        .def_readonly("poses", &SyntheticClip::poses)
        .def_readonly("velocities", &SyntheticClip::velocities);

    m.def("gen_synthetic_events", &gen_synthetic_events, py::arg("scene"), py::arg("duration"), py::arg("seed"));

    // --- metrics -----------------------------------------------------------------
    m.def(
        "rmse",
        [](const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt) {
            return rmse(pred, gt);
        },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "rmse_scalar",
        [](const std::vector<double>& pred, const std::vector<double>& gt) { return rmse_scalar(pred, gt); },
        py::arg("pred"), py::arg("gt"));
    m.def(
        "relative_error",
        [](const std::vector<std::vector<double>>& pred, const std::vector<std::vector<double>>& gt, double eps) {
            return relative_error(pred, gt, eps);
        },
        py::arg("pred"), py::arg("gt"), py::arg("eps") = 1e-6);

    py::enum_<NeuronKind>(m, "NeuronKind").value("lif", NeuronKind::lif).value("alif", NeuronKind::alif);
    py::class_<FiringProfile>(m, "FiringProfile")
        .def_readonly("spike_count", &FiringProfile::spike_count)
        .def_readonly("mean_rate", &FiringProfile::mean_rate)
        .def_readonly("isi_histogram", &FiringProfile::isi_histogram);
    m.def(
        "firing_profile",
        [](NeuronKind kind, const NeuronParams& p, const std::vector<double>& current) {
            return firing_profile(kind, p, current);
        },
        py::arg("kind"), py::arg("params"), py::arg("current"));

    // --- network -------------------------------------------------------------------
    py::class_<ConvBlockConfig>(m, "ConvBlockConfig")
        .def(py::init<std::size_t, std::size_t, std::size_t, std::size_t>(), py::arg("out_channels") = 16,
             py::arg("kernel") = 3, py::arg("stride") = 2, py::arg("padding") = 1)
        .def_readwrite("out_channels", &ConvBlockConfig::out_channels)
        .def_readwrite("kernel", &ConvBlockConfig::kernel)
        .def_readwrite("stride", &ConvBlockConfig::stride)
        .def_readwrite("padding", &ConvBlockConfig::padding);

    py::class_<FeatureExtractorConfig>(m, "FeatureExtractorConfig")
        .def(py::init<>())
        .def_static("defaults", &FeatureExtractorConfig::defaults)
        .def_readwrite("blocks", &FeatureExtractorConfig::blocks)
        .def_readwrite("lif_alpha", &FeatureExtractorConfig::lif_alpha)
        .def_readwrite("lif_v_th", &FeatureExtractorConfig::lif_v_th);

    py::class_<EstimatorConfig>(m, "EstimatorConfig")
        .def(py::init<>())
        .def_readwrite("num_layers", &EstimatorConfig::num_layers)
        .def_readwrite("hidden_dim", &EstimatorConfig::hidden_dim)
        .def_readwrite("alpha", &EstimatorConfig::alpha)
        .def_readwrite("v_th", &EstimatorConfig::v_th)
        .def_readwrite("diffusion_d", &EstimatorConfig::diffusion_d)
        .def_readwrite("kappa", &EstimatorConfig::kappa)
        .def_readwrite("recurrence", &EstimatorConfig::recurrence);

    py::class_<NeuroVEModel>(m, "NeuroVEModel")
        .def_property_readonly("feature_dim", [](const NeuroVEModel& m_) { return m_.feature_dim; })
        .def("param_count", &NeuroVEModel::param_count)
        .def("forward",
             [](NeuroVEModel& model, const py::array_t<std::uint8_t, py::array::c_style>& spikes) {
                 if (spikes.ndim() != 5) throw std::invalid_argument("expected [T,B,C,H,W] uint8 spikes");
                 SpikeTensor st = SpikeTensor::zeros(
                     static_cast<std::size_t>(spikes.shape(0)), static_cast<std::size_t>(spikes.shape(1)),
                     static_cast<std::size_t>(spikes.shape(2)), static_cast<std::size_t>(spikes.shape(3)),
                     static_cast<std::size_t>(spikes.shape(4)));
                 std::copy(spikes.data(), spikes.data() + st.size(), st.data.begin());
                 ad::Tape tape(false);
                 VelocityGraph g = build_velocity_graph(tape, model, st.to_tensor(), false);
                 return tensor_to_numpy(tape.val(g.pred));
             },
             py::arg("spikes"), "Run inference: [T,B,2n,H,W] binary spikes -> [B,n,6] velocities")
        .def("save", [](NeuroVEModel& model, const std::filesystem::path& p) { save_neurove_model(model, p); });

    m.def("build_model", &build_model, py::arg("extractor_cfg"), py::arg("estimator_cfg"), py::arg("window"),
          py::arg("seed"));
    m.def("load_neurove_model", &load_neurove_model, py::arg("path"));

    py::class_<SineModelConfig>(m, "SineModelConfig")
        .def(py::init<>())
        .def_readwrite("num_layers", &SineModelConfig::num_layers)
        .def_readwrite("hidden_dim", &SineModelConfig::hidden_dim)
        .def_readwrite("diffusion_d", &SineModelConfig::diffusion_d)
        .def_readwrite("recurrence", &SineModelConfig::recurrence);

    py::class_<SineForecastModel>(m, "SineForecastModel")
        .def("param_count", &SineForecastModel::param_count)
        .def("save", [](SineForecastModel& model, const std::filesystem::path& p) { save_sine_model(model, p); })
        .def("trace",
             [](const SineForecastModel& model, const std::vector<double>& y, std::size_t fit_steps) {
                 SineSequence seq;
                 seq.y = y;
                 const SineTrace tr = trace_sine(model, seq, fit_steps);
                 return py::make_tuple(tr.pred, tr.phase);
             },
             py::arg("y"), py::arg("fit_steps"),
             "Teacher-forced fit then closed-loop forecast; returns (pred, phase)");

    m.def("build_sine_model", &build_sine_model, py::arg("cfg"), py::arg("seed"));
    m.def("load_sine_model", &load_sine_model, py::arg("path"));

    // --- training ----------------------------------------------------------------------
    py::class_<LossScaleState>(m, "LossScaleState")
        .def(py::init<>())
        .def_readwrite("ema_angular", &LossScaleState::ema_angular)
        .def_readwrite("ema_linear", &LossScaleState::ema_linear)
        .def_readwrite("decay", &LossScaleState::decay)
        .def_readwrite("scale_a", &LossScaleState::scale_a)
        .def_readwrite("scale_l", &LossScaleState::scale_l);
    m.def("update_loss_scales", &update_loss_scales, py::arg("state"), py::arg("grad_a_norm"),
          py::arg("grad_l_norm"));
    m.def(
        "velocity_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pred,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& gt, const LossScaleState& s) {
            const VelocityLossParts parts = velocity_loss(numpy_to_tensor(pred), numpy_to_tensor(gt), s);
            return py::make_tuple(parts.total, parts.angular, parts.linear);
        },
        py::arg("pred"), py::arg("gt"), py::arg("scale") = LossScaleState{});
}
