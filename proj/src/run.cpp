#include "mtm/run.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mtm/errors.hpp"
#include "mtm/trainer.hpp"

namespace mtm::run {

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

train::EpochCallback progress(std::ostream* log) {
  if (!log) return {};
  return [log](const train::EpochRow& r) {
    *log << "[" << r.stage << "] epoch " << r.epoch << " det " << fixed(r.det_loss) << " map " << fixed(r.val_map);
    if (!std::isnan(r.teacher_map)) *log << " teacher " << fixed(r.teacher_map) << " alpha " << fixed(r.alpha, 2);
    *log << " (" << fixed(r.seconds, 1) << "s)\n";
    log->flush();
  };
}

// Keeps pretrain rows from an earlier metrics.csv when only self-training is rerun.
std::string merged_metrics(const std::filesystem::path& path, const train::MetricsLog& log) {
  std::string out = train::MetricsLog::header() + "\n";
  if (std::filesystem::exists(path)) {
    std::istringstream in(read_text(path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.rfind("pretrain,", 0) == 0) out += line + "\n";
    }
  }
  const std::string fresh = log.csv();
  return out + fresh.substr(fresh.find('\n') + 1);
}

}  // namespace

Stage parse_stage(const std::string& text) {
  if (text == "pretrain") return Stage::Pretrain;
  if (text == "selftrain") return Stage::Selftrain;
  if (text == "all") return Stage::All;
  if (text == "sweep") return Stage::Sweep;
  throw ContractError("unknown stage '" + text + "' (expected pretrain, selftrain, all or sweep)");
}

Summary run_stage(const cfg::RunConfig& config, Stage stage, std::ostream* log) {
  config.validate();
  if (stage == Stage::Sweep) {
    run_sweep(config, log);
    return {};
  }
  const auto& dir = config.out_dir;
  std::filesystem::create_directories(dir);
  write_text(dir / "config.ini", cfg::to_text(config));
  const data::Dataset dataset = data::build_splits(config.data_config());
  train::MetricsLog metrics;
  Summary summary;
  std::string eval_text = train::eval_csv_header();

  ckpt::Checkpoint pretrained;
  if (stage == Stage::Pretrain || stage == Stage::All) {
    try {
      pretrained = train::pretrain_stage(config, dataset, metrics, progress(log));
    } catch (...) {
      metrics.write(dir);
      throw;
    }
    ckpt::write_file(pretrained, dir / "pretrain.ckpt");
    det::Detector model(pretrained.config, 0);
    ckpt::restore(pretrained, model);
    const auto result = train::evaluate(model, dataset.target_val);
    summary.pretrain_map = result.map;
    eval_text += train::eval_csv_rows(result, "pretrain", "target-val");
    write_text(dir / "bound.csv", train::bound_csv(train::bound_report(pretrained, dataset, config)));
  } else {
    pretrained = ckpt::read_file(dir / "pretrain.ckpt");
  }

  if (stage == Stage::Selftrain || stage == Stage::All) {
    train::SelftrainResult st;
    try {
      st = train::selftrain_stage(config, dataset, pretrained, metrics, progress(log));
    } catch (...) {
      write_text(dir / "metrics.csv", merged_metrics(dir / "metrics.csv", metrics));
      throw;
    }
    ckpt::write_file(st.best_student, dir / "selftrain.ckpt");
    ckpt::write_file(st.final_student, dir / "selftrain_final.ckpt");
    ckpt::write_file(st.final_teacher, dir / "teacher.ckpt");
    summary.selftrain_best_map = st.best_map;
    summary.selftrain_pretrained_map = st.pretrained_map;
    for (const auto& [name, ck] : {std::pair{"student", &st.best_student}, std::pair{"teacher", &st.final_teacher}}) {
      det::Detector model(ck->config, 0);
      ckpt::restore(*ck, model);
      eval_text += train::eval_csv_rows(train::evaluate(model, dataset.target_val), name, "target-val");
    }
    if (log) *log << "[selftrain] best student epoch " << st.best_epoch << " map " << fixed(st.best_map) << "\n";
  }

  if (stage == Stage::Selftrain) {
    write_text(dir / "metrics.csv", merged_metrics(dir / "metrics.csv", metrics));
    std::ofstream(dir / "timing.csv", std::ios::trunc) << metrics.timing_csv();
  } else {
    metrics.write(dir);
  }
  write_text(dir / "eval.csv", eval_text);
  summary.label_reads = dataset.target_train_labels.reads();
  return summary;
}

std::vector<SweepCell> run_sweep(const cfg::RunConfig& config, std::ostream* log) {
  config.validate();
  const data::Dataset dataset = data::build_splits(config.data_config());
  std::vector<SweepCell> cells;
  std::filesystem::create_directories(config.out_dir);
  for (double eta : kSweepEta) {
    for (double theta : kSweepTheta) {
      cfg::RunConfig cell = config;
      cell.align.mask.theta_mask = theta;
      cell.align.mask.eta = eta;
      cell.out_dir = config.out_dir / "sweep" / ("theta" + fixed(theta, 2) + "_eta" + fixed(eta, 3));
      std::filesystem::create_directories(cell.out_dir);
      train::MetricsLog metrics;
      const auto ck = train::pretrain_stage(cell, dataset, metrics);
      metrics.write(cell.out_dir);
      const double map = train::target_map(ck, dataset);
      cells.push_back({theta, eta, map});
      if (log) *log << "[sweep] theta " << fixed(theta, 2) << " eta " << fixed(eta, 3) << " map " << fixed(map) << "\n";
    }
  }
  write_text(config.out_dir / "sweep.csv", sweep_csv(cells));
  return cells;
}

std::string sweep_csv(const std::vector<SweepCell>& cells) {
  std::string out = "eta";
  for (double t : kSweepTheta) out += ",theta_" + fixed(t, 2);
  out += "\n";
  for (double eta : kSweepEta) {
    out += fixed(eta, 4);
    for (double theta : kSweepTheta) {
      out += ",";
      for (const auto& c : cells) {
        if (c.theta == theta && c.eta == eta) out += fixed(c.map, 6);
      }
    }
    out += "\n";
  }
  return out;
}

double run_eval(const std::filesystem::path& checkpoint, const cfg::RunConfig& config, const std::string& split,
                const std::filesystem::path& out_dir, std::ostream* log) {
  const ckpt::Checkpoint ck = ckpt::read_file(checkpoint);
  det::Detector model(ck.config, 0);
  ckpt::restore(ck, model);
  const data::Dataset dataset = data::build_splits(config.data_config());
  const std::vector<data::Scene>* scenes = nullptr;
  if (split == "target-val") scenes = &dataset.target_val;
  else if (split == "source") scenes = &dataset.source;
  else if (split == "target-like") scenes = &dataset.target_like;
  else throw ContractError("unknown split '" + split + "' (expected target-val, source or target-like)");
  const auto result = train::evaluate(model, *scenes);
  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "eval.csv", train::eval_csv_header() + train::eval_csv_rows(result, checkpoint.stem().string(), split));
  if (log) *log << split << " mAP@0.5 " << fixed(result.map) << "\n";
  return result.map;
}

void run_gen_data(const cfg::RunConfig& config, std::ostream* log) {
  const data::Dataset dataset = data::build_splits(config.data_config());
  const auto dir = config.out_dir / "data";
  data::save_dataset(dataset, dir);
  if (log) {
    *log << "wrote " << dataset.source.size() << " source, " << dataset.target_like.size() << " target-like, "
         << dataset.target_train.size() << " target-train, " << dataset.target_val.size() << " target-val scenes to "
         << dir.string() << "\n";
  }
}

}  // namespace mtm::run
