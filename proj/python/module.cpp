#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "hmla/app/cli.hpp"
#include "hmla/costmodel.hpp"
#include "hmla/equivalence.hpp"
#include "hmla/hybrid.hpp"
#include "hmla/simbench.hpp"

namespace py = pybind11;
using namespace hmla;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

AttentionPartial<double> partial_from(const Array& out, const Array& lse) {
  if (out.ndim() != 2 || lse.ndim() != 1 || lse.shape(0) != out.shape(0))
    throw ShapeError("combine_lse: expected output [H, Dv] and lse [H]");
  const auto h = static_cast<std::size_t>(out.shape(0)), d = static_cast<std::size_t>(out.shape(1));
  AttentionPartial<double> p;
  p.output = Matrix<double>(h, d, std::vector<double>(out.data(), out.data() + h * d));
  p.lse.assign(lse.data(), lse.data() + h);
  return p;
}

py::dict counts_dict(const cost::PartCounts& c) {
  py::dict d;
  d["shared"] = c.shared;
  d["nonshared"] = c.nonshared;
  d["total"] = c.total();
  return d;
}

py::dict report_dict(const sim::SimReport& r) {
  py::dict d;
  d["method"] = r.method;
  d["hardware"] = r.hardware;
  d["batch_size"] = r.batch_size;
  d["threshold_batch"] = r.threshold_batch;
  d["requests_completed"] = r.requests_completed;
  d["total_tokens"] = r.total_tokens;
  d["steps"] = r.steps;
  d["hybrid_steps"] = r.hybrid_steps;
  d["admission_stalls"] = r.admission_stalls;
  d["stage1_attn"] = r.times.stage1_attn;
  d["stage2_attn"] = r.times.stage2_attn;
  d["wkvb1_proj"] = r.times.wkvb1_proj;
  d["wkvb2_proj"] = r.times.wkvb2_proj;
  d["combine_lse"] = r.times.combine_lse;
  d["shared_attn_time"] = r.shared_attn_time;
  d["nonshared_attn_time"] = r.nonshared_attn_time;
  d["modeled_time"] = r.modeled_time;
  d["throughput"] = r.throughput;
  d["wall_time_s"] = r.wall_time_s;
  d["parity_checks"] = r.parity_checks;
  d["max_parity_error"] = r.max_parity_error;
  return d;
}

}  // namespace

PYBIND11_MODULE(_hmla, m) {
  m.doc() = "Hybrid MLA decode engine: exact attention paths, cost model and simulator.";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NotFoundError>(m, "NotFoundError", PyExc_KeyError);
  py::register_exception<CapacityError>(m, "CapacityError", PyExc_MemoryError);

  py::class_<MlaConfig>(m, "MlaConfig")
      .def(py::init<>())
      .def_readwrite("name", &MlaConfig::name)
      .def_readwrite("model_dim", &MlaConfig::model_dim)
      .def_readwrite("num_heads", &MlaConfig::num_heads)
      .def_readwrite("nope_head_dim", &MlaConfig::nope_head_dim)
      .def_readwrite("rope_dim", &MlaConfig::rope_dim)
      .def_readwrite("v_head_dim", &MlaConfig::v_head_dim)
      .def_readwrite("kv_lora_rank", &MlaConfig::kv_lora_rank)
      .def_readwrite("q_lora_rank", &MlaConfig::q_lora_rank)
      .def_property_readonly("qk_head_dim", &MlaConfig::qk_head_dim)
      .def_property_readonly("latent_dim", &MlaConfig::latent_dim)
      .def("validate", &MlaConfig::validate)
      .def("__repr__", [](const MlaConfig& c) {
        return "<MlaConfig " + c.name + " H=" + std::to_string(c.num_heads) + " D_l=" +
               std::to_string(c.kv_lora_rank) + ">";
      });
  m.def("model_preset", [](const std::string& name) { return model_preset(name); });
  m.def("model_preset_names", &model_preset_names);

  py::class_<cost::HardwareProfile>(m, "HardwareProfile")
      .def(py::init<>())
      .def(py::init([](std::string name, double flops, double bw, double bytes) {
             return cost::HardwareProfile{std::move(name), flops, bw, bytes};
           }),
           py::arg("name"), py::arg("peak_flops"), py::arg("hbm_bandwidth"), py::arg("dtype_bytes") = 2.0)
      .def_readwrite("name", &cost::HardwareProfile::name)
      .def_readwrite("peak_flops", &cost::HardwareProfile::peak_flops)
      .def_readwrite("hbm_bandwidth", &cost::HardwareProfile::hbm_bandwidth)
      .def_readwrite("dtype_bytes", &cost::HardwareProfile::dtype_bytes);
  m.def("hardware_preset", [](const std::string& name) { return cost::hardware_preset(name); });
  m.def("hardware_preset_names", &cost::hardware_preset_names);

  m.def("coefficients", [](const MlaConfig& c) {
    py::dict d;
    d["expanded"] = cost::expanded_coefficient(c);
    d["absorb_macs"] = cost::absorb_mac_coefficient(c);
    d["latent"] = cost::latent_coefficient(c);
    return d;
  });
  m.def(
      "cost",
      [](const std::string& method, std::uint64_t batch, std::uint64_t shared_len, std::uint64_t nonshared_len,
         std::uint64_t query_len, const MlaConfig& c) {
        const auto r = cost::cost(cost::parse_method(method), {batch, query_len, shared_len, nonshared_len}, c);
        py::dict d;
        d["macs"] = counts_dict(r.macs);
        d["hbm_elems"] = counts_dict(r.hbm_elems);
        return d;
      },
      py::arg("method"), py::arg("batch"), py::arg("shared_len"), py::arg("nonshared_len") = 0,
      py::arg("query_len") = 1, py::arg("config") = deepseek_v3());
  m.def(
      "roofline_throughput",
      [](const std::string& method, std::uint64_t batch, std::uint64_t shared_len, std::uint64_t nonshared_len,
         const MlaConfig& c, const cost::HardwareProfile& hw) {
        return cost::roofline_throughput(cost::parse_method(method), {batch, 1, shared_len, nonshared_len}, c, hw);
      },
      py::arg("method"), py::arg("batch"), py::arg("shared_len"), py::arg("nonshared_len") = 0,
      py::arg("config") = deepseek_v3(), py::arg("hardware") = cost::ascend_910_class());
  m.def(
      "crossover_batch",
      [](const MlaConfig& c, const cost::HardwareProfile& hw, std::uint64_t max_batch) {
        const auto x = cost::crossover_batch(c, hw, max_batch);
        py::dict d;
        d["analytic"] = x.analytic;
        d["batch"] = x.batch;
        d["rounded"] = x.rounded;
        d["capped"] = x.capped;
        return d;
      },
      py::arg("config") = deepseek_v3(), py::arg("hardware") = cost::ascend_910_class(),
      py::arg("max_batch") = std::uint64_t{1} << 20);
  m.def(
      "hbm_footprint",
      [](std::uint64_t batch, std::uint64_t max_seq, std::uint64_t shared_len, bool typhoon, const MlaConfig& c) {
        const auto f = cost::hbm_footprint(c, cost::deepseek_v3_cluster(), batch, max_seq, shared_len, typhoon);
        py::dict d;
        d["weights"] = f.weights;
        d["compressed_cache"] = f.compressed_cache;
        d["expanded_shared"] = f.expanded_shared;
        d["total"] = f.total;
        d["overhead_ratio"] = f.overhead_ratio;
        d["assumptions"] = f.assumptions;
        return d;
      },
      py::arg("batch"), py::arg("max_seq"), py::arg("shared_len"), py::arg("typhoon") = true,
      py::arg("config") = deepseek_v3());

  m.def(
      "combine_lse",
      [](const Array& out_a, const Array& lse_a, const Array& out_b, const Array& lse_b) {
        const auto r = combine_lse(partial_from(out_a, lse_a), partial_from(out_b, lse_b));
        Array out({r.output.rows(), r.output.cols()});
        std::copy(r.output.values().begin(), r.output.values().end(), out.mutable_data());
        Array lse(std::vector<py::ssize_t>{static_cast<py::ssize_t>(r.lse.size())});
        std::copy(r.lse.begin(), r.lse.end(), lse.mutable_data());
        return py::make_tuple(out, lse);
      },
      py::arg("out_a"), py::arg("lse_a"), py::arg("out_b"), py::arg("lse_b"));

  m.def(
      "run_equivalence",
      [](std::size_t trials, std::uint64_t seed, const std::string& precision, bool inject_fault) {
        EquivalenceStats s;
        if (precision == "float64") s = run_equivalence<double>(trials, seed, inject_fault);
        else if (precision == "float32") s = run_equivalence<float>(trials, seed, inject_fault);
        else throw ArgumentError("precision must be float32 or float64");
        py::dict d;
        d["trials"] = s.trials;
        d["naive_vs_absorb"] = s.naive_vs_absorb;
        d["naive_vs_typhoon"] = s.naive_vs_typhoon;
        d["absorb_vs_typhoon"] = s.absorb_vs_typhoon;
        d["lse"] = s.lse;
        d["worst"] = s.worst();
        return d;
      },
      py::arg("trials") = 100, py::arg("seed") = 0, py::arg("precision") = "float64",
      py::arg("inject_fault") = false);

  m.def(
      "simulate",
      [](const std::string& method, std::size_t batch_size, std::size_t prefix_length, const std::string& tail,
         const std::string& generation, std::size_t requests, std::uint64_t seed, const MlaConfig& c,
         const cost::HardwareProfile& hw, bool math) {
        sim::WorkloadSpec s;
        s.batch_size = batch_size;
        s.prefix_length = prefix_length;
        s.tail = sim::LengthDist::parse(tail);
        s.generation = sim::LengthDist::parse(generation);
        s.request_count = requests ? requests : batch_size;
        s.seed = seed;
        sim::SimOptions o;
        o.keep_trace = false;
        if (math) {
          o.math = sim::MathMode::Full;
          o.check_parity = true;
        }
        return report_dict(
            sim::run_simulation(s, cost::parse_method(method), c, hw, FallbackPolicy::for_hardware(c, hw), o));
      },
      py::arg("method"), py::arg("batch_size"), py::arg("prefix_length") = 0, py::arg("tail") = "fixed:0",
      py::arg("generation") = "fixed:4", py::arg("requests") = 0, py::arg("seed") = 0,
      py::arg("config") = deepseek_v3(), py::arg("hardware") = cost::ascend_910_class(), py::arg("math") = false);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::vector<const char*> argv{"hmla"};
        for (const auto& a : args) argv.push_back(a.c_str());
        std::ostringstream out, err;
        const int code = app::run_cli(static_cast<int>(argv.size()), argv.data(), nullptr, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs the hmla tool in-process; returns (exit_code, stdout, stderr).");
}
