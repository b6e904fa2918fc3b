#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "mtm/analysis.hpp"
#include "mtm/checkpoint.hpp"
#include "mtm/config.hpp"
#include "mtm/data.hpp"
#include "mtm/errors.hpp"
#include "mtm/matching.hpp"
#include "mtm/meanteacher.hpp"
#include "mtm/metrics.hpp"
#include "mtm/run.hpp"
#include "mtm/trainer.hpp"

namespace py = pybind11;
using namespace mtm;

namespace {

using BoxTuple = std::tuple<double, double, double, double>;
using Detection = std::tuple<double, double, double, double, int, double>;  // cx, cy, w, h, class, score

Box to_box(const BoxTuple& t) { return {std::get<0>(t), std::get<1>(t), std::get<2>(t), std::get<3>(t)}; }

BoxSet to_boxset(const std::vector<Detection>& rows) {
  BoxSet out;
  for (const auto& [cx, cy, w, h, cls, score] : rows) out.push_back(Box{cx, cy, w, h}, cls, score);
  return out;
}

std::vector<Detection> from_boxset(const BoxSet& set) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Box& b = set.boxes[i];
    out.emplace_back(b.cx, b.cy, b.w, b.h, set.classes[i], set.scores.empty() ? 1.0 : set.scores[i]);
  }
  return out;
}

py::array_t<double> image_array(const Image& image) {
  py::array_t<double> out({image.height, image.width, image.channels});
  std::copy(image.pixels.begin(), image.pixels.end(), out.mutable_data());
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> match(const std::vector<std::vector<double>>& cost) {
  const std::size_t nq = cost.size(), ng = nq ? cost[0].size() : 0;
  std::vector<double> flat;
  for (const auto& row : cost) {
    if (row.size() != ng) throw ShapeError("hungarian_match: ragged cost matrix");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& a : det::hungarian_match(flat, nq, ng)) out.emplace_back(a.query, a.gt);
  return out;
}

py::dict ap_summary(const std::vector<std::vector<Detection>>& predictions,
                  const std::vector<std::vector<Detection>>& ground_truth, std::size_t num_classes) {
  std::vector<BoxSet> p, g;
  for (const auto& rows : predictions) p.push_back(to_boxset(rows));
  for (const auto& rows : ground_truth) g.push_back(to_boxset(rows));
  const auto r = eval::average_precision(p, g, num_classes);
  py::dict d;
  d["map"] = r.map;
  d["per_class_ap"] = r.per_class_ap;
  d["true_positives"] = r.true_positives;
  d["false_positives"] = r.false_positives;
  d["false_negatives"] = r.false_negatives;
  return d;
}

py::dict scene(std::uint64_t seed, std::uint64_t id, bool foggy, std::size_t image_size) {
  data::SceneConfig sc;
  sc.image_size = image_size;
  data::Scene s = data::gen_scene(seed, id, sc);
  if (foggy) {
    Rng rng(mix_seed(seed * 7919 + id));
    s = data::fogify(s, data::FogDistribution{}.sample(rng), data::Domain::Target);
  }
  py::dict d;
  d["image"] = image_array(s.image);
  d["boxes"] = from_boxset(s.boxes);
  d["domain"] = data::domain_name(s.domain);
  return d;
}

py::dict run_config(const std::string& config_path, const std::string& stage, std::optional<std::uint64_t> seed,
             std::optional<std::string> out) {
  auto config = cfg::load_config(config_path);
  if (seed) config.seed = *seed;
  if (out) config.out_dir = *out;
  config.validate();
  py::dict d;
  if (stage == "sweep") {
    std::vector<run::SweepCell> cells;
    {
      py::gil_scoped_release release;
      cells = run::run_sweep(config, nullptr);
    }
    py::list rows;
    for (const auto& c : cells) rows.append(py::make_tuple(c.theta, c.eta, c.map));
    d["sweep"] = rows;
    return d;
  }
  run::Summary s;
  {
    py::gil_scoped_release release;
    s = run::run_stage(config, run::parse_stage(stage), nullptr);
  }
  d["pretrain_map"] = s.pretrain_map;
  d["selftrain_best_map"] = s.selftrain_best_map;
  d["selftrain_pretrained_map"] = s.selftrain_pretrained_map;
  d["label_reads"] = s.label_reads;
  d["out_dir"] = config.out_dir.string();
  return d;
}

double checkpoint_map(const std::string& checkpoint, const std::string& config_path) {
  const auto config = config_path.empty() ? cfg::RunConfig{} : cfg::load_config(config_path);
  return train::target_map(ckpt::read_file(checkpoint), data::build_splits(config.data_config()));
}

}  // namespace

PYBIND11_MODULE(mtm, m) {
  m.doc() = "Masked-alignment mean-teacher detection transformer on synthetic fog data";

  m.def("canonical_config", [](const std::string& text) { return cfg::to_text(cfg::parse_config(text)); },
        "Parse config text and return its canonical form", py::arg("text"));
  m.def("run", &run_config, "Train: stage is pretrain, selftrain, all or sweep", py::arg("config"),
        py::arg("stage") = "all", py::arg("seed") = py::none(), py::arg("out") = py::none());
  m.def("checkpoint_map", &checkpoint_map, "Target-val mAP of a checkpoint", py::arg("checkpoint"),
        py::arg("config") = "", py::call_guard<py::gil_scoped_release>());

  m.def("scene", &scene, "One synthetic scene: image (H, W, 3) and (cx, cy, w, h, class, score) boxes",
        py::arg("seed"), py::arg("id"), py::arg("foggy") = false, py::arg("image_size") = 32);

  m.def("hungarian_match", &match, "Minimum-cost assignment; returns (query, gt) pairs", py::arg("cost"));
  m.def("iou", [](const BoxTuple& a, const BoxTuple& b) { return eval::iou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
  m.def("giou", [](const BoxTuple& a, const BoxTuple& b) { return eval::giou(to_box(a), to_box(b)); },
        py::arg("a"), py::arg("b"));
  m.def("average_precision", &ap_summary, "VOC-style AP at IoU 0.5 per class and their mean",
        py::arg("predictions"), py::arg("ground_truth"), py::arg("num_classes"));

  m.def("weight_ratio", [](const std::vector<double>& a, const std::vector<double>& b) { return eval::weight_ratio(a, b); },
        py::arg("alpha"), py::arg("beta"));
  m.def("complexity_term",
        [](const std::vector<double>& a, const std::vector<double>& b, double m_, double d, double delta) {
          return eval::complexity_term(a, b, m_, d, delta);
        },
        py::arg("alpha"), py::arg("beta"), py::arg("m"), py::arg("d_vc"), py::arg("delta"));
  m.def("oqkt_alpha",
        [](std::size_t epoch, std::size_t total) {
          mt::OqktSchedule s{.total_epochs = total, .current_epoch = epoch};
          return mt::alpha_step(s);
        },
        py::arg("epoch"), py::arg("total_epochs"));

  py::register_exception<ContractError>(m, "ContractError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<cfg::ConfigError>(m, "ConfigError", PyExc_ValueError);
}
