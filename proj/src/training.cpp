#include "dyngraph/training.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "dyngraph/log.hpp"

namespace dyngraph {

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be > 0");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw std::invalid_argument("train.decay_factor must be in (0, 1]");
  }
  if (folds < 2) throw std::invalid_argument("train.folds must be >= 2");
  if (batch_size == 0) throw std::invalid_argument("train.batch_size must be >= 1");
  if (decay_every == 0) throw std::invalid_argument("train.decay_every must be >= 1");
  if (iters_per_epoch == 0) throw std::invalid_argument("train.iters_per_epoch must be >= 1");
  if (hidden_dim == 0) throw std::invalid_argument("train.hidden_dim must be >= 1");
  if (!std::isfinite(lambda1) || !std::isfinite(lambda2)) {
    throw std::invalid_argument("train.lambda1/lambda2 must be finite");
  }
}

void GraphConfig::validate() const {
  if (window < 2) throw std::invalid_argument("graph.window must be >= 2");
  if (hop < 1) throw std::invalid_argument("graph.hop must be >= 1");
  edges.validate();
}

void ExperimentConfig::validate() const {
  train.validate();
  adjacency.validate();
  graph.validate();
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const FrameSequence& s : samples) out.push_back(s.label);
  return out;
}

void Dataset::validate() const {
  if (samples.empty()) throw std::invalid_argument("dataset is empty");
  if (num_classes == 0) throw std::invalid_argument("dataset has no classes");
  const std::size_t p = samples.front().feature_dim();
  for (const FrameSequence& s : samples) {
    if (s.frames() == 0 || s.feature_dim() == 0) {
      throw std::invalid_argument("sample '" + s.id + "' has no frames");
    }
    if (s.feature_dim() != p) {
      throw ShapeError("sample '" + s.id + "' has " + std::to_string(s.feature_dim()) +
                       " features, expected " + std::to_string(p));
    }
    if (s.label >= num_classes) {
      throw std::invalid_argument("sample '" + s.id + "' has label " + std::to_string(s.label) +
                                  " >= num_classes " + std::to_string(num_classes));
    }
    if (!s.features.all_finite()) {
      throw std::invalid_argument("sample '" + s.id + "' has non-finite features");
    }
  }
}

PreparedDataset prepare(const Dataset& data, const GraphConfig& graph, PositionalMode mode,
                        std::uint64_t seed) {
  data.validate();
  graph.validate();
  EdgePolicy policy = graph.edges;
  policy.seed = seed;

  PreparedDataset out;
  out.num_classes = data.num_classes;
  out.node_count = graph.window;
  out.feature_dim = data.samples.front().feature_dim();
  std::size_t max_segments = 0;
  for (const FrameSequence& s : data.samples) {
    const DynamicGraph dg = segment(s, graph.window, graph.hop);
    std::vector<Matrix> feats;
    feats.reserve(dg.segments.size());
    for (const SegmentGraph& g : dg.segments) feats.push_back(g.features);
    max_segments = std::max(max_segments, feats.size());
    out.features.push_back(std::move(feats));
    out.labels.push_back(s.label);
  }
  for (std::size_t s = 0; s < max_segments; ++s) {
    SegmentGraph g;
    g.node_count = graph.window;
    g.segment_index = s;
    g.edges = segment_topology(graph.window, policy, s);
    out.structures.push_back(SegmentStructure::build(g, mode));
  }
  return out;
}

double classification_loss(const Matrix& logits, std::span<const std::size_t> labels) {
  return softmax_cross_entropy(logits, labels);
}

double structure_loss(const SimilarityMatrix& dice, const Matrix& a_learn, double lambda1,
                      double lambda2) {
  require_same_shape(dice.values, a_learn, "structure_loss");
  return lambda1 * sum(hadamard(dice.values, a_learn)) +
         lambda2 * frobenius_norm_squared(dice.values);
}

LossBreakdown total_loss(double gc, double gl) {
  if (!std::isfinite(gc) || !std::isfinite(gl)) {
    throw std::domain_error("total_loss: non-finite component (gc=" + std::to_string(gc) +
                            ", gl=" + std::to_string(gl) + ")");
  }
  return {gc, gl, gc + gl};
}

namespace ad {

Var structure_loss(Tape& tape, const SimilarityMatrix& dice, Var a_learn, double lambda1,
                   double lambda2) {
  require_same_shape(dice.values, a_learn.value(), "structure_loss");
  const Var coupling = sum(hadamard(tape.constant(dice.values), a_learn));
  const Var magnitude = tape.constant(Matrix(1, 1, frobenius_norm_squared(dice.values)));
  return add(scale(coupling, lambda1), scale(magnitude, lambda2));
}

LossVars batch_loss(Tape& tape, const ParamVars& params, const PreparedDataset& data,
                    std::span<const std::size_t> batch, const ExperimentConfig& cfg,
                    bool include_structure_loss) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  std::vector<Var> logits;
  std::vector<std::size_t> labels;
  std::size_t segments_used = 0;
  for (std::size_t idx : batch) {
    const auto& feats = data.features.at(idx);
    logits.push_back(forward(tape, params, feats, data.structures, cfg.adjacency).logits);
    labels.push_back(data.labels[idx]);
    segments_used = std::max(segments_used, feats.size());
  }
  const Var gc = softmax_cross_entropy(vstack(logits), labels);
  if (!include_structure_loss) return {gc, tape.constant(Matrix(1, 1)), gc};

  const double l1 = cfg.train.structure_sign_flip ? -cfg.train.lambda1 : cfg.train.lambda1;
  std::vector<Var> terms;
  for (std::size_t s = 0; s < segments_used; ++s)
    terms.push_back(structure_loss(tape, data.structures[s].dice, params.a_learn, l1,
                                   cfg.train.lambda2));
  const Var gl = mean(terms);
  return {gc, gl, add(gc, gl)};
}

}  // namespace ad

void radam_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                RAdamState& state, std::size_t t, double lr) {
  if (t < 1) throw std::invalid_argument("radam_step: t must be >= 1");
  if (params.size() != grads.size()) {
    throw ShapeError("radam_step: " + std::to_string(params.size()) + " tensors but " +
                     std::to_string(grads.size()) + " gradients");
  }
  if (state.first_moment.empty()) {
    for (const Matrix* p : params) {
      state.first_moment.emplace_back(p->rows(), p->cols());
      state.second_moment.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw ShapeError("radam_step: optimizer state holds a different tensor count");
  }

  const auto& o = state.options;
  const double td = static_cast<double>(t);
  const double beta1_t = std::pow(o.beta1, td);
  const double beta2_t = std::pow(o.beta2, td);
  const double rho_inf = 2.0 / (1.0 - o.beta2) - 1.0;
  const double rho_t = rho_inf - 2.0 * td * beta2_t / (1.0 - beta2_t);
  const bool adaptive = rho_t > 4.0;
  double rect = 0.0;
  if (adaptive) {
    rect = std::sqrt(((rho_t - 4.0) * (rho_t - 2.0) * rho_inf) /
                     ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }

  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& p = *params[k];
    require_same_shape(p, grads[k], "radam_step");
    require_same_shape(p, state.first_moment[k], "radam_step");
    auto pd = p.data();
    const auto gd = grads[k].data();
    auto md = state.first_moment[k].data();
    auto vd = state.second_moment[k].data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = o.beta1 * md[i] + (1.0 - o.beta1) * gd[i];
      vd[i] = o.beta2 * vd[i] + (1.0 - o.beta2) * gd[i] * gd[i];
      const double m_hat = md[i] / (1.0 - beta1_t);
      if (adaptive) {
        const double v_hat = std::sqrt(vd[i] / (1.0 - beta2_t));
        pd[i] -= lr * rect * m_hat / (v_hat + o.eps);
      } else {
        pd[i] -= lr * m_hat;
      }
    }
  }
}

double lr_schedule(const TrainConfig& cfg, std::size_t epoch) {
  const auto decays = static_cast<double>(epoch / cfg.decay_every);
  return cfg.lr * std::pow(cfg.decay_factor, decays);
}

std::vector<Fold> kfold_split(std::span<const std::size_t> labels, std::size_t k,
                              std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold_split: k must be >= 2");
  if (k > labels.size()) {
    throw std::invalid_argument("kfold_split: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(labels.size()) + " samples");
  }
  std::mt19937_64 rng(seed);
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  bool stratify = true;
  for (const auto& [label, members] : by_class) {
    if (members.size() < k) {
      spdlog::warn("class {} has {} samples, fewer than {} folds; using an unstratified split",
                   label, members.size(), k);
      stratify = false;
      break;
    }
  }

  // Dealing a class-ordered permutation round-robin keeps class proportions per fold.
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  if (stratify) {
    for (auto& [label, members] : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      order.insert(order.end(), members.begin(), members.end());
    }
  } else {
    order.resize(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
  }

  std::vector<Fold> folds(k);
  for (std::size_t pos = 0; pos < order.size(); ++pos) folds[pos % k].validation.push_back(order[pos]);
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(folds[f].validation.begin(), folds[f].validation.end());
    for (std::size_t g = 0; g < k; ++g)
      if (g != f) {
        folds[f].train.insert(folds[f].train.end(), folds[g].validation.begin(),
                              folds[g].validation.end());
      }
  }
  for (Fold& f : folds) std::sort(f.train.begin(), f.train.end());
  return folds;
}

std::uint64_t fold_checksum(const Fold& fold) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t idx : fold.validation) {
    auto v = static_cast<std::uint64_t>(idx);
    for (int b = 0; b < 8; ++b) {
      h ^= (v >> (8 * b)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

Metrics evaluate(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                 std::size_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(predictions.size()) +
                                " predictions for " + std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw std::invalid_argument("evaluate: empty input");
  if (num_classes == 0) {
    num_classes = 1 + std::max(*std::max_element(labels.begin(), labels.end()),
                               *std::max_element(predictions.begin(), predictions.end()));
  }

  Metrics m;
  m.confusion.assign(num_classes, std::vector<std::size_t>(num_classes, 0));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes || predictions[i] >= num_classes) {
      throw std::out_of_range("evaluate: class index out of range");
    }
    ++m.confusion[labels[i]][predictions[i]];
  }

  std::size_t correct = 0;
  for (std::size_t c = 0; c < num_classes; ++c) correct += m.confusion[c][c];
  const double n = static_cast<double>(labels.size());
  m.accuracy = static_cast<double>(correct) / n;

  m.per_class_f1.assign(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t support = 0;
    std::size_t predicted = 0;
    for (std::size_t o = 0; o < num_classes; ++o) {
      support += m.confusion[c][o];
      predicted += m.confusion[o][c];
    }
    const double tp = static_cast<double>(m.confusion[c][c]);
    // F1 = 2TP / (support + predicted); 0 when the class is absent from both.
    if (support + predicted > 0) {
      m.per_class_f1[c] = 2.0 * tp / static_cast<double>(support + predicted);
    }
    m.weighted_f1 += m.per_class_f1[c] * static_cast<double>(support) / n;
  }
  return m;
}

std::size_t TrainReport::best_fold() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < folds.size(); ++i)
    if (folds[i].validation.accuracy > folds[best].validation.accuracy) best = i;
  return best;
}

Trainer::Trainer(const PreparedDataset& data, const ExperimentConfig& cfg, ModelParams init)
    : data_(data), cfg_(cfg), params_(std::move(init)) {
  params_.validate();
  if (params_.node_count() != data.node_count || params_.feature_dim() != data.feature_dim ||
      params_.num_classes() != data.num_classes) {
    throw ShapeError("Trainer: parameters do not match the dataset shapes");
  }
}

LossBreakdown Trainer::step(std::span<const std::size_t> batch, double lr,
                            bool include_structure_loss) {
  ad::Tape tape;
  const ad::ParamVars vars = ad::record_params(tape, params_, true);
  const ad::LossVars loss =
      ad::batch_loss(tape, vars, data_, batch, cfg_, include_structure_loss);
  if (!std::isfinite(loss.total.value()(0, 0))) {
    throw DivergenceError("non-finite loss at step " + std::to_string(t_ + 1));
  }
  const LossBreakdown out = total_loss(loss.gc.value()(0, 0), loss.gl.value()(0, 0));
  tape.backward(loss.total);

  std::vector<Matrix> grads;
  for (ad::Var v : vars.all()) grads.push_back(tape.grad(v));
  for (const Matrix& g : grads)
    if (!g.all_finite()) throw DivergenceError("non-finite gradient at step " + std::to_string(t_ + 1));

  ++t_;
  const auto tensors = params_.tensors();
  radam_step(tensors, grads, optimizer_, t_, lr);
  params_.project();
  return out;
}

std::size_t Trainer::predict(std::size_t index) const {
  ad::Tape tape;
  const ad::ParamVars vars = ad::record_params(tape, params_, false);
  const auto fv =
      ad::forward(tape, vars, data_.features.at(index), data_.structures, cfg_.adjacency);
  return argmax_row(fv.logits.value(), 0);
}

double Trainer::accuracy(std::span<const std::size_t> indices) const {
  if (indices.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i : indices) correct += predict(i) == data_.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(indices.size());
}

ModelParams initial_params(const PreparedDataset& data, const ExperimentConfig& cfg,
                           std::uint64_t seed) {
  return ModelParams::initialize(data.feature_dim, cfg.train.hidden_dim, data.num_classes,
                                 data.structures.front().dice.values, cfg.train.extra_layers,
                                 seed);
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold_index) {
  return segment_seed(seed ^ 0x5DEECE66DULL, fold_index);
}

FoldResult fit(const PreparedDataset& data, std::span<const std::size_t> train_idx,
               std::span<const std::size_t> val_idx, const ExperimentConfig& cfg,
               std::size_t fold_index) {
  if (train_idx.empty()) throw std::invalid_argument("fit: empty training split");
  const TrainConfig& tc = cfg.train;
  const std::uint64_t seed = fold_seed(tc.seed, fold_index);
  std::mt19937_64 rng(seed);
  Trainer trainer(data, cfg, initial_params(data, cfg, rng()));

  std::vector<std::size_t> order(train_idx.begin(), train_idx.end());
  const std::size_t steps_per_epoch = std::min(
      (order.size() + tc.batch_size - 1) / tc.batch_size, tc.iters_per_epoch);

  FoldResult result;
  result.fold = fold_index;
  result.best_params = trainer.params();
  double best_acc = -1.0;

  for (std::size_t epoch = 0; epoch < tc.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_schedule(tc, epoch);
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      const std::size_t begin = s * tc.batch_size;
      const std::size_t end = std::min(begin + tc.batch_size, order.size());
      try {
        loss_sum += trainer.step(std::span(order).subspan(begin, end - begin), lr).total;
      } catch (const std::domain_error& e) {
        throw DivergenceError("fold " + std::to_string(fold_index) + ", epoch " +
                              std::to_string(epoch) + ": " + e.what());
      } catch (const DivergenceError& e) {
        throw DivergenceError("fold " + std::to_string(fold_index) + ", epoch " +
                              std::to_string(epoch) + ": " + e.what());
      }
    }
    const double val_acc = trainer.accuracy(val_idx);
    result.curve.push_back({epoch, loss_sum / static_cast<double>(steps_per_epoch), val_acc});
    result.epochs_run = epoch + 1;
    spdlog::debug("fold {} epoch {} loss {:.6f} val_acc {:.4f}", fold_index, epoch,
                  result.curve.back().train_loss, val_acc);

    if (val_acc > best_acc) {
      best_acc = val_acc;
      result.best_epoch = epoch;
      result.best_params = trainer.params();
    } else if (epoch - result.best_epoch >= tc.early_stop_patience) {
      break;
    }
  }

  std::vector<std::size_t> preds;
  std::vector<std::size_t> labels;
  {
    Trainer best(data, cfg, result.best_params);
    for (std::size_t i : val_idx) {
      preds.push_back(best.predict(i));
      labels.push_back(data.labels[i]);
    }
  }
  if (!preds.empty()) result.validation = evaluate(preds, labels, data.num_classes);
  return result;
}

AveragedMetrics average_metrics(std::span<const FoldResult> folds) {
  AveragedMetrics avg;
  if (folds.empty()) return avg;
  const std::size_t c = folds.front().validation.per_class_f1.size();
  avg.per_class_f1.assign(c, 0.0);
  avg.pooled_confusion.assign(c, std::vector<std::size_t>(c, 0));
  for (const FoldResult& f : folds) {
    avg.accuracy += f.validation.accuracy;
    avg.weighted_f1 += f.validation.weighted_f1;
    for (std::size_t k = 0; k < c; ++k) {
      avg.per_class_f1[k] += f.validation.per_class_f1[k];
      for (std::size_t o = 0; o < c; ++o)
        avg.pooled_confusion[k][o] += f.validation.confusion[k][o];
    }
  }
  const double n = static_cast<double>(folds.size());
  avg.accuracy /= n;
  avg.weighted_f1 /= n;
  for (double& v : avg.per_class_f1) v /= n;
  return avg;
}

TrainReport train(const Dataset& data, const ExperimentConfig& cfg, std::size_t jobs,
                  std::optional<std::vector<Fold>> folds) {
  cfg.validate();
  const PreparedDataset prepared = prepare(data, cfg.graph, cfg.adjacency.positional_mode,
                                           cfg.train.seed);
  const std::vector<Fold> split =
      folds ? std::move(*folds) : kfold_split(prepared.labels, cfg.train.folds, cfg.train.seed);

  TrainReport report;
  report.folds.resize(split.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;

  const auto worker = [&] {
    for (std::size_t f = next++; f < split.size(); f = next++) {
      try {
        spdlog::info("[{}] fold {}/{}: {} train, {} validation", to_string(cfg.adjacency.variant),
                     f + 1, split.size(), split[f].train.size(), split[f].validation.size());
        FoldResult r = fit(prepared, split[f].train, split[f].validation, cfg, f);
        r.checksum = fold_checksum(split[f]);
        spdlog::info("[{}] fold {}: acc {:.4f} at epoch {} ({} epochs)",
                     to_string(cfg.adjacency.variant), f + 1, r.validation.accuracy, r.best_epoch,
                     r.epochs_run);
        report.folds[f] = std::move(r);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next = split.size();
      }
    }
  };

  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, split.size());
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);

  report.average = average_metrics(report.folds);
  return report;
}

AblationReport run_ablation(const Dataset& data, const ExperimentConfig& cfg, std::size_t jobs) {
  cfg.validate();
  AblationReport report;
  report.folds = kfold_split(data.labels(), cfg.train.folds, cfg.train.seed);
  for (AdjacencyVariant v : kAllVariants) {
    ExperimentConfig local = cfg;
    local.adjacency.variant = v;
    const TrainReport r = train(data, local, jobs, report.folds);
    AblationRow row{v, r.average, {}};
    for (const FoldResult& f : r.folds) row.fold_checksums.push_back(f.checksum);
    report.rows.push_back(std::move(row));
  }
  return report;
}

}  // namespace dyngraph
