#include "mtm/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <utility>

#include "mtm/detection_loss.hpp"
#include "mtm/errors.hpp"
#include "mtm/meanteacher.hpp"
#include "mtm/optim.hpp"

namespace mtm::train {

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Seeds for independent streams derived from the run seed.
enum Stream : std::uint64_t { ModelInit = 1, DiscInit, Batches, Masks, Augment, OqktInit, Divergence };

std::uint64_t stream_seed(std::uint64_t seed, Stream s) { return mix_seed(seed * 16 + s); }

std::vector<ag::NamedTensor> active_disc_params(align::Discriminators& discs, const std::array<bool, 4>& active) {
  std::vector<ag::NamedTensor> out;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!active[i]) continue;
    discs.roles[i].for_each_param(std::string("disc.") + align::kRoleNames[i],
                                  [&](const std::string& n, ag::Tensor& t) { out.push_back({n, t}); });
  }
  return out;
}

template <typename Module>
void append_params(Module& m, const std::string& prefix, std::vector<ag::NamedTensor>& out) {
  m.for_each_param(prefix, [&](const std::string& n, ag::Tensor& t) { out.push_back({n, t}); });
}

// Running per-epoch sums.
struct EpochAccumulator {
  double det = 0.0;
  std::array<double, 4> adv{};
  std::array<std::size_t, 4> correct{};
  std::array<std::size_t, 4> seen{};
  std::size_t steps = 0;
  std::size_t pseudo = 0;
  std::size_t target_images = 0;

  void add_adv(const align::AdversarialLoss& loss, double domain, const std::array<bool, 4>& active) {
    for (std::size_t i = 0; i < 4; ++i) {
      if (!active[i]) continue;
      adv[i] += loss.parts[i].item();
      for (double logit : loss.traces[i].logits) {
        correct[i] += ((logit > 0.0 ? 1.0 : 0.0) == domain) ? 1 : 0;
        ++seen[i];
      }
    }
  }

  void fill(EpochRow& row) const {
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    row.det_loss = det / n;
    for (std::size_t i = 0; i < 4; ++i) {
      row.adv_loss[i] = adv[i] / n;
      row.disc_acc[i] = seen[i] ? static_cast<double>(correct[i]) / static_cast<double>(seen[i]) : kNotApplicable;
    }
    if (target_images) row.pseudo_labels = static_cast<double>(pseudo) / static_cast<double>(target_images);
  }
};

[[noreturn]] void abort_epoch(const NumericError& e, const EpochAccumulator& acc, EpochRow row, MetricsLog& log) {
  acc.fill(row);
  row.det_loss = kNotApplicable;
  row.val_map = kNotApplicable;
  log.append(row);
  throw NumericError(row.stage + " epoch " + std::to_string(row.epoch) + " step " + std::to_string(acc.steps + 1) +
                     ": " + e.what());
}

void require_finite(const ag::Tensor& loss) {
  if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<BoxSet> labels_of(std::span<const data::Scene> scenes) {
  std::vector<BoxSet> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(s.boxes);
  return out;
}

}  // namespace

// -- MetricsLog ---------------------------------------------------------------

void MetricsLog::append(EpochRow row) {
  for (const auto& r : rows_) {
    if (r.stage == row.stage && r.epoch == row.epoch) {
      throw ContractError("MetricsLog: duplicate row for " + row.stage + " epoch " + std::to_string(row.epoch));
    }
  }
  rows_.push_back(std::move(row));
}

std::vector<EpochRow> MetricsLog::stage_rows(const std::string& stage) const {
  std::vector<EpochRow> out;
  for (const auto& r : rows_) {
    if (r.stage == stage) out.push_back(r);
  }
  return out;
}

std::string MetricsLog::header() {
  std::string h = "stage,epoch,lr,det_loss";
  for (const char* n : align::kRoleNames) h += std::string(",adv_") + n;
  for (const char* n : align::kRoleNames) h += std::string(",acc_") + n;
  return h + ",val_map,teacher_map,alpha,pseudo_per_image";
}

std::string MetricsLog::csv() const {
  std::string out = header() + "\n";
  for (const auto& r : rows_) {
    out += r.stage + "," + std::to_string(r.epoch) + "," + num(r.learning_rate) + "," + num(r.det_loss);
    for (double v : r.adv_loss) out += "," + num(v);
    for (double v : r.disc_acc) out += "," + num(v);
    out += "," + num(r.val_map) + "," + num(r.teacher_map) + "," + num(r.alpha) + "," + num(r.pseudo_labels) + "\n";
  }
  return out;
}

std::string MetricsLog::timing_csv() const {
  std::string out = "stage,epoch,seconds\n";
  for (const auto& r : rows_) out += r.stage + "," + std::to_string(r.epoch) + "," + num(r.seconds) + "\n";
  return out;
}

void MetricsLog::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "metrics.csv", std::ios::trunc) << csv();
  std::ofstream(dir / "timing.csv", std::ios::trunc) << timing_csv();
}

// -- evaluation helpers ---------------------------------------------------------

std::vector<BoxSet> predict(const det::Detector& model, std::span<const data::Scene> scenes,
                            const ag::Tensor* query_embed) {
  ag::NoGradGuard guard;
  std::vector<BoxSet> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(det::to_boxset(model.forward(s.image, query_embed).heads));
  return out;
}

eval::EvalResult evaluate(const det::Detector& model, std::span<const data::Scene> scenes,
                          const ag::Tensor* query_embed) {
  const auto preds = predict(model, scenes, query_embed);
  const auto gts = labels_of(scenes);
  return eval::average_precision(preds, gts, model.config().num_classes);
}

double target_map(const ckpt::Checkpoint& checkpoint, const data::Dataset& dataset) {
  det::Detector model(checkpoint.config, 0);
  ckpt::restore(checkpoint, model);
  return evaluate(model, dataset.target_val).map;
}

eval::FeatureSet encoder_features(const det::Detector& model, std::span<const data::Scene> scenes) {
  ag::NoGradGuard guard;
  eval::FeatureSet out;
  out.dim = model.config().embed_dim;
  out.values.reserve(scenes.size() * out.dim);
  for (const auto& s : scenes) {
    const auto state = model.encode(model.patch_embed(s.image));
    const ag::Tensor& z = state.layers.back();
    const std::size_t n = z.rows() - 1;
    const auto v = z.data();
    for (std::size_t c = 0; c < out.dim; ++c) {
      double acc = 0.0;
      for (std::size_t r = 1; r <= n; ++r) acc += v[r * out.dim + c];
      out.values.push_back(acc / static_cast<double>(n));
    }
  }
  return out;
}

double image_error(const BoxSet& predictions, const BoxSet& ground_truth) {
  std::vector<bool> used(ground_truth.size(), false);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions.scores[i] >= 0.5) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return predictions.scores[a] > predictions.scores[b]; });
  std::size_t tp = 0;
  for (std::size_t i : order) {
    double best = 0.5;
    std::optional<std::size_t> hit;
    for (std::size_t j = 0; j < ground_truth.size(); ++j) {
      if (used[j] || ground_truth.classes[j] != predictions.classes[i]) continue;
      const double o = eval::iou(predictions.boxes[i], ground_truth.boxes[j]);
      if (o >= best) {
        best = o;
        hit = j;
      }
    }
    if (hit) {
      used[*hit] = true;
      ++tp;
    }
  }
  const std::size_t fp = order.size() - tp;
  const std::size_t fn = ground_truth.size() - tp;
  const std::size_t denom = tp + fp + fn;
  return denom == 0 ? 0.0 : static_cast<double>(fp + fn) / static_cast<double>(denom);
}

eval::HdivResult feature_divergence(const ckpt::Checkpoint& checkpoint, const data::Dataset& dataset,
                                    const cfg::RunConfig& config) {
  det::Detector model(checkpoint.config, 0);
  ckpt::restore(checkpoint, model);
  const auto a = encoder_features(model, dataset.source);
  const auto b = encoder_features(model, dataset.target_train);
  return eval::hdiv_proxy(a, b, {stream_seed(config.seed, Divergence), config.eval.hdiv_steps, config.eval.hdiv_lr});
}

eval::BoundReport bound_report(const ckpt::Checkpoint& checkpoint, const data::Dataset& dataset,
                               const cfg::RunConfig& config) {
  det::Detector model(checkpoint.config, 0);
  ckpt::restore(checkpoint, model);
  const auto src_pred = predict(model, dataset.source);
  const auto tl_pred = predict(model, dataset.target_like);
  std::vector<double> src_err, tl_err;
  for (std::size_t i = 0; i < src_pred.size(); ++i) src_err.push_back(image_error(src_pred[i], dataset.source[i].boxes));
  for (std::size_t i = 0; i < tl_pred.size(); ++i) {
    tl_err.push_back(image_error(tl_pred[i], dataset.target_like[i].boxes));
  }

  // Mixture features: alternate source and target-like images, matched in count to target-train.
  const auto fs = encoder_features(model, dataset.source);
  const auto ft = encoder_features(model, dataset.target_like);
  const auto fx = encoder_features(model, dataset.target_train);
  eval::FeatureSet mix;
  mix.dim = fs.dim;
  const std::size_t n = std::min({fs.count() + ft.count(), fx.count()});
  for (std::size_t i = 0; i < n; ++i) {
    const eval::FeatureSet& from = (i % 2 == 0) ? fs : ft;
    const std::size_t row = (i / 2) % from.count();
    mix.values.insert(mix.values.end(), from.values.begin() + static_cast<std::ptrdiff_t>(row * fs.dim),
                      from.values.begin() + static_cast<std::ptrdiff_t>((row + 1) * fs.dim));
  }
  const auto div =
      eval::hdiv_proxy(mix, fx, {stream_seed(config.seed, Divergence), config.eval.hdiv_steps, config.eval.hdiv_lr});

  auto mean_of = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
  };
  const double gamma = mean_of(src_err) + mean_of(tl_err);

  const double m = static_cast<double>(src_err.size() + tl_err.size());
  const double beta_s = static_cast<double>(src_err.size()) / m;
  Rng probe(0);
  const std::size_t d_vc = align::Discriminator(checkpoint.config.embed_dim, probe).parameter_count();
  return eval::bound_terms(src_err, tl_err, {0.5, 0.5}, {beta_s, 1.0 - beta_s}, m, static_cast<double>(d_vc),
                           config.eval.bound_delta, div.proxy, gamma);
}

std::string eval_csv_header() { return "model,split,class,gt,ap\n"; }

std::string eval_csv_rows(const eval::EvalResult& result, const std::string& model, const std::string& split) {
  std::string out;
  for (std::size_t k = 0; k < result.per_class_ap.size(); ++k) {
    const char* name = k < data::kClassNames.size() ? data::kClassNames[k] : "?";
    out += model + "," + split + "," + name + "," + std::to_string(result.gt_per_class[k]) + "," + num(result.per_class_ap[k]) + "\n";
  }
  std::size_t gt = 0;
  for (std::size_t g : result.gt_per_class) gt += g;
  out += model + "," + split + ",mAP," + std::to_string(gt) + "," + num(result.map) + "\n";
  return out;
}

std::string bound_csv(const eval::BoundReport& r) {
  std::string out = "eps_alpha_hat,div_proxy,gamma_proxy,complexity,total,alpha_s,alpha_tl,beta_s,beta_tl,m,d_vc,delta\n";
  out += num(r.eps_alpha_hat) + "," + num(r.div_proxy) + "," + num(r.gamma_proxy) + "," + num(r.complexity) + "," +
         num(r.total()) + "," + num(r.alpha[0]) + "," + num(r.alpha[1]) + "," + num(r.beta[0]) + "," +
         num(r.beta[1]) + "," + num(r.m) + "," + num(r.d_vc) + "," + num(r.delta) + "\n";
  return out;
}

// -- pretraining ----------------------------------------------------------------

namespace {

std::pair<Image, BoxSet> maybe_flip(const data::Scene& scene, const BoxSet& boxes, bool enabled, Rng& rng) {
  if (enabled && rng.bernoulli(0.5)) return {mt::flip_horizontal(scene.image), flip_horizontal(boxes)};
  return {scene.image, boxes};
}

}  // namespace

ckpt::Checkpoint pretrain_stage(const cfg::RunConfig& config, const data::Dataset& dataset, MetricsLog& log,
                                const EpochCallback& on_epoch) {
  config.validate();
  const auto& pc = config.pretrain;
  det::Detector model(config.model, stream_seed(config.seed, ModelInit));
  align::Discriminators discs(config.model.embed_dim, stream_seed(config.seed, DiscInit));
  const std::array<bool, 4> active =
      pc.alignment ? config.align.active() : std::array<bool, 4>{false, false, false, false};

  std::vector<ag::NamedTensor> params;
  append_params(model, "det.", params);
  for (auto& p : active_disc_params(discs, active)) params.push_back(p);
  ag::Adam opt(params, {.learning_rate = pc.learning_rate});

  data::BatchIterator batches(dataset, data::Stage::Pretrain, stream_seed(config.seed, Batches));
  Rng mask_rng(stream_seed(config.seed, Masks));
  Rng aug_rng(stream_seed(config.seed, Augment));

  for (std::size_t epoch = 0; epoch < pc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (epoch == pc.drop_epoch() && epoch > 0) opt.set_learning_rate(pc.learning_rate * 0.1);
    EpochRow row;
    row.stage = "pretrain";
    row.epoch = epoch + 1;
    row.learning_rate = opt.learning_rate();
    EpochAccumulator acc;
    std::size_t pending = 0;
    while (auto batch = batches.next()) try {
      const auto [src_image, src_boxes] = maybe_flip(*batch->source.scene, *batch->source.boxes, pc.flip, aug_rng);
      const auto src = model.forward(src_image);
      ag::Tensor det_total = det::detection_loss(src.heads, src_boxes).total;
      ag::Tensor total = det_total;
      if (pc.use_target_like) {
        const auto [tl_image, tl_boxes] =
            maybe_flip(*batch->counterpart.scene, *batch->counterpart.boxes, pc.flip, aug_rng);
        const auto tl = model.forward(tl_image);
        const ag::Tensor tl_det = det::detection_loss(tl.heads, tl_boxes).total;
        det_total = ag::add(det_total, tl_det);
        total = det_total;
        if (pc.alignment) {
          const auto adv_s = align::adv_loss_total(src.encoder.layers, src.decoder.layers, align::kSourceDomain,
                                                   config.align.mask, discs, config.align.weights, mask_rng, active);
          const auto adv_t = align::adv_loss_total(tl.encoder.layers, tl.decoder.layers, align::kTargetDomain,
                                                   config.align.mask, discs, config.align.weights, mask_rng, active);
          total = ag::add(total, ag::add(adv_s.total, adv_t.total));
          acc.add_adv(adv_s, align::kSourceDomain, active);
          acc.add_adv(adv_t, align::kTargetDomain, active);
        }
      }
      require_finite(total);
      ag::scale(total, 1.0 / static_cast<double>(pc.batch)).backward();
      if (++pending == pc.batch) {
        opt.step();
        pending = 0;
      }
      acc.det += det_total.item();
      ++acc.steps;
    } catch (const NumericError& e) {
      abort_epoch(e, acc, row, log);
    }
    if (pending > 0) opt.step();
    acc.fill(row);
    row.val_map = evaluate(model, dataset.target_val).map;
    row.seconds = seconds_since(t0);
    log.append(row);
    if (on_epoch) on_epoch(row);
  }
  return ckpt::capture(model, &discs, nullptr, &opt);
}

// -- self-training ----------------------------------------------------------------

SelftrainResult selftrain_stage(const cfg::RunConfig& config, const data::Dataset& dataset,
                                const ckpt::Checkpoint& pretrained, MetricsLog& log, const EpochCallback& on_epoch) {
  config.validate();
  const auto& sc = config.selftrain;
  if (!(pretrained.config == config.model)) throw ContractError("selftrain: checkpoint model config differs from the run config");

  det::Detector student(pretrained.config, 0);
  align::Discriminators discs(pretrained.config.embed_dim, stream_seed(config.seed, DiscInit));
  ckpt::restore(pretrained, student, pretrained.has_prefix("disc.") ? &discs : nullptr);
  det::Detector teacher = student.clone();
  mt::Oqkt oqkt(pretrained.config.embed_dim, sc.oqkt_heads, sc.oqkt_head_dim, stream_seed(config.seed, OqktInit));

  const std::array<bool, 4> active =
      sc.alignment ? config.align.active() : std::array<bool, 4>{false, false, false, false};
  const bool any_align = active[0] || active[1] || active[2] || active[3];

  std::vector<ag::NamedTensor> student_params, teacher_params, params;
  append_params(student, "", student_params);
  append_params(teacher, "", teacher_params);
  append_params(student, "det.", params);
  for (auto& p : active_disc_params(discs, active)) params.push_back(p);
  if (sc.oqkt) append_params(oqkt, "", params);
  ag::Adam opt(params, {.learning_rate = sc.learning_rate});

  data::BatchIterator batches(dataset, data::Stage::Selftrain, stream_seed(config.seed, Batches));
  Rng mask_rng(stream_seed(config.seed, Masks));
  Rng aug_rng(stream_seed(config.seed, Augment));
  mt::OqktSchedule schedule{.total_epochs = sc.epochs, .current_epoch = 0, .alpha = 1.0,
                            .heads = sc.oqkt_heads, .head_dim = sc.oqkt_head_dim};

  auto student_queries = [&](double alpha) -> std::optional<ag::Tensor> {
    if (!sc.oqkt) return std::nullopt;
    return oqkt.enhance(mt::queries_of(student, mt::Owner::Student), mt::queries_of(teacher, mt::Owner::Teacher),
                        alpha);
  };

  SelftrainResult result;
  result.pretrained_map = evaluate(student, dataset.target_val).map;
  result.best_map = -1.0;
  std::ofstream pseudo_dump;

  for (std::size_t epoch = 0; epoch < sc.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    schedule.current_epoch = epoch;
    const double alpha = mt::alpha_step(schedule);
    EpochRow row;
    row.stage = "selftrain";
    row.epoch = epoch + 1;
    row.learning_rate = opt.learning_rate();
    EpochAccumulator acc;
    if (sc.dump_pseudo_labels) {
      std::filesystem::create_directories(config.out_dir);
      char name[64];
      std::snprintf(name, sizeof name, "pseudo_labels_e%02zu.csv", epoch + 1);
      pseudo_dump = std::ofstream(config.out_dir / name, std::ios::trunc);
      pseudo_dump << "image_id,class,score,cx,cy,w,h\n";
    }
    while (auto batch = batches.next()) try {
      const data::Scene& target = *batch->counterpart.scene;
      const auto weak = mt::augment(target.image, mt::Strength::Weak, aug_rng);
      const auto strong = mt::augment(target.image, mt::Strength::Strong, aug_rng);
      const auto pseudo = mt::generate_pseudo_labels(teacher, weak.image, sc.pseudo_threshold, target.id);
      const BoxSet labels = mt::map_between_views(pseudo.labels, weak.flipped, strong.flipped);
      acc.pseudo += labels.size();
      ++acc.target_images;
      if (pseudo_dump.is_open()) {
        for (std::size_t i = 0; i < pseudo.labels.size(); ++i) {
          const Box& b = pseudo.labels.boxes[i];
          pseudo_dump << target.id << "," << pseudo.labels.classes[i] << "," << num(pseudo.labels.scores[i]) << ","
                      << num(b.cx) << "," << num(b.cy) << "," << num(b.w) << "," << num(b.h) << "\n";
        }
      }

      const auto qe = student_queries(alpha);
      const ag::Tensor* qe_ptr = qe ? &*qe : nullptr;
      const auto src = student.forward(batch->source.scene->image, qe_ptr);
      const auto tgt = student.forward(strong.image, qe_ptr);
      const ag::Tensor det_total = ag::add(det::detection_loss(src.heads, *batch->source.boxes).total,
                                           det::detection_loss(tgt.heads, labels).total);
      ag::Tensor total = det_total;
      if (any_align) {
        const auto adv_s = align::adv_loss_total(src.encoder.layers, src.decoder.layers, align::kSourceDomain,
                                                 config.align.mask, discs, config.align.weights, mask_rng, active);
        const auto adv_t = align::adv_loss_total(tgt.encoder.layers, tgt.decoder.layers, align::kTargetDomain,
                                                 config.align.mask, discs, config.align.weights, mask_rng, active);
        total = ag::add(total, ag::add(adv_s.total, adv_t.total));
        acc.add_adv(adv_s, align::kSourceDomain, active);
        acc.add_adv(adv_t, align::kTargetDomain, active);
      }
      require_finite(total);
      total.backward();
      opt.step();
      mt::ema_update(teacher_params, student_params, sc.ema_momentum);
      acc.det += det_total.item();
      ++acc.steps;
    } catch (const NumericError& e) {
      abort_epoch(e, acc, row, log);
    }
    acc.fill(row);

    schedule.current_epoch = epoch + 1;
    const double eval_alpha = mt::alpha_step(schedule);
    const auto qe = [&] {
      ag::NoGradGuard guard;
      return student_queries(eval_alpha);
    }();
    row.alpha = eval_alpha;
    row.val_map = evaluate(student, dataset.target_val, qe ? &*qe : nullptr).map;
    row.teacher_map = evaluate(teacher, dataset.target_val).map;
    row.seconds = seconds_since(t0);
    log.append(row);
    if (on_epoch) on_epoch(row);

    if (row.val_map > result.best_map) {
      result.best_map = row.val_map;
      result.best_epoch = epoch + 1;
      result.best_student = ckpt::capture(student, &discs, &oqkt, nullptr);
      if (qe) {
        for (auto& rec : result.best_student.records) {
          if (rec.name == "det.dec.query_embed") rec.values.assign(qe->data().begin(), qe->data().end());
        }
      }
    }
  }
  // alpha is 0 after the last epoch, so the final student needs no query baking.
  result.final_student = ckpt::capture(student, &discs, &oqkt, &opt);
  result.final_teacher = ckpt::capture(teacher, nullptr, nullptr, nullptr);
  return result;
}

}  // namespace mtm::train
