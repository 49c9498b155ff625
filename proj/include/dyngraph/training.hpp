#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyngraph/matrix.hpp"
#include "dyngraph/model.hpp"
#include "dyngraph/sequence_graph.hpp"
#include "dyngraph/similarity.hpp"
#include "dyngraph/tape.hpp"

namespace dyngraph {

struct TrainConfig {
  double lr = 0.001;
  std::size_t batch_size = 64;
  std::size_t max_epochs = 1000;
  std::size_t iters_per_epoch = 150;
  double decay_factor = 0.5;
  std::size_t decay_every = 150;
  std::size_t early_stop_patience = 20;
  std::size_t folds = 10;
  double lambda1 = 0.1;
  double lambda2 = 0.1;
  // Flips the sign of the lambda1 coupling term, rewarding agreement with the Dice prior.
  bool structure_sign_flip = false;
  std::size_t hidden_dim = 16;
  std::size_t extra_layers = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Windowing of utterances into segment graphs.
struct GraphConfig {
  std::size_t window = 40;
  std::size_t hop = 40;
  EdgePolicy edges;

  void validate() const;
};

struct ExperimentConfig {
  TrainConfig train;
  AdjacencyConfig adjacency;
  GraphConfig graph;

  void validate() const;
};

struct Dataset {
  std::vector<FrameSequence> samples;
  std::size_t num_classes = 0;

  std::vector<std::size_t> labels() const;
  /// Non-empty, consistent feature dimension, labels < num_classes.
  void validate() const;
};

/// Dataset turned into per-segment feature matrices plus the shared segment structures.
struct PreparedDataset {
  std::vector<std::vector<Matrix>> features;  // [sample][segment] -> m x p
  std::vector<std::size_t> labels;
  std::vector<SegmentStructure> structures;  // one per segment index
  std::size_t num_classes = 0;
  std::size_t node_count = 0;
  std::size_t feature_dim = 0;

  std::size_t size() const noexcept { return labels.size(); }
};

/// Segments every utterance and builds the topology of each segment index
/// once. Topologies come from `graph.edges` with its seed replaced by `seed`.
PreparedDataset prepare(const Dataset& data, const GraphConfig& graph, PositionalMode mode,
                        std::uint64_t seed);

struct LossBreakdown {
  double gc = 0.0;
  double gl = 0.0;
  double total = 0.0;
};

/// Mean softmax cross-entropy over the batch.
double classification_loss(const Matrix& logits, std::span<const std::size_t> labels);

/// lambda1 * e^T (A_dice ⊙ A_learn) e + lambda2 * ||A_dice||_F^2.
///
/// The Frobenius term does not depend on any learnable tensor; it is kept so
/// the reported value matches the full objective.
double structure_loss(const SimilarityMatrix& dice, const Matrix& a_learn, double lambda1,
                      double lambda2);

/// Throws std::domain_error when either term is non-finite.
LossBreakdown total_loss(double gc, double gl);

namespace ad {

Var structure_loss(Tape& tape, const SimilarityMatrix& dice, Var a_learn, double lambda1,
                   double lambda2);

struct LossVars {
  Var gc;
  Var gl;
  Var total;
};

/// Joint objective on a minibatch. gl averages the structure loss over the
/// segment indices present in the batch. With `include_structure_loss` false
/// the structure term is not recorded at all and total is gc.
LossVars batch_loss(Tape& tape, const ParamVars& params, const PreparedDataset& data,
                    std::span<const std::size_t> batch, const ExperimentConfig& cfg,
                    bool include_structure_loss = true);

}  // namespace ad

struct RAdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct RAdamState {
  RAdamOptions options;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

/// One rectified-Adam update at step t >= 1. While the variance estimate is
/// intractable (rho_t <= 4) the update is plain bias-corrected momentum.
void radam_step(std::span<Matrix* const> params, std::span<const Matrix> grads,
                RAdamState& state, std::size_t t, double lr);

/// lr * decay_factor^floor(epoch / decay_every).
double lr_schedule(const TrainConfig& cfg, std::size_t epoch);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// Stratified k-fold split. Falls back to an unstratified split (with a
/// logged warning) when some class has fewer than k samples.
std::vector<Fold> kfold_split(std::span<const std::size_t> labels, std::size_t k,
                              std::uint64_t seed);

/// FNV-1a over a fold's validation indices.
std::uint64_t fold_checksum(const Fold& fold);

struct Metrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

/// num_classes = 0 infers it from the largest label or prediction.
Metrics evaluate(std::span<const std::size_t> predictions, std::span<const std::size_t> labels,
                 std::size_t num_classes = 0);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FoldResult {
  std::size_t fold = 0;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  Metrics validation;
  std::vector<EpochRecord> curve;
  ModelParams best_params;
  std::uint64_t checksum = 0;
};

/// Fold average; accuracy, weighted_f1 and per_class_f1 are arithmetic means
/// over folds, the confusion matrix is pooled.
struct AveragedMetrics {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_f1;
  std::vector<std::vector<std::size_t>> pooled_confusion;
};

struct TrainReport {
  std::vector<FoldResult> folds;
  AveragedMetrics average;

  /// Index into folds of the best validation accuracy (lowest index on ties).
  std::size_t best_fold() const;
};

/// Raised when a loss becomes non-finite.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Minibatch optimisation of one model on a prepared dataset.
class Trainer {
 public:
  Trainer(const PreparedDataset& data, const ExperimentConfig& cfg, ModelParams init);

  /// One RAdam step on `batch` at learning rate `lr`; A_learn is projected afterwards.
  LossBreakdown step(std::span<const std::size_t> batch, double lr,
                     bool include_structure_loss = true);

  /// Predicted class of sample `index`.
  std::size_t predict(std::size_t index) const;
  double accuracy(std::span<const std::size_t> indices) const;

  const ModelParams& params() const noexcept { return params_; }
  std::size_t steps_taken() const noexcept { return t_; }

 private:
  const PreparedDataset& data_;
  ExperimentConfig cfg_;
  ModelParams params_;
  RAdamState optimizer_;
  std::size_t t_ = 0;
};

/// Initial parameters for a prepared dataset: A_learn starts from the Dice
/// matrix of segment 0.
ModelParams initial_params(const PreparedDataset& data, const ExperimentConfig& cfg,
                           std::uint64_t seed);

/// Trains on `train_idx` with early stopping on `val_idx` accuracy and
/// returns metrics of the best validation epoch.
FoldResult fit(const PreparedDataset& data, std::span<const std::size_t> train_idx,
               std::span<const std::size_t> val_idx, const ExperimentConfig& cfg,
               std::size_t fold_index);

/// Seed of fold `fold_index`'s stream, mixed from the run seed.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold_index);

/// k-fold cross-validation. Folds run on up to `jobs` threads; results do not
/// depend on `jobs`. Pass `folds` to reuse a split.
TrainReport train(const Dataset& data, const ExperimentConfig& cfg, std::size_t jobs = 1,
                  std::optional<std::vector<Fold>> folds = std::nullopt);

AveragedMetrics average_metrics(std::span<const FoldResult> folds);

struct AblationRow {
  AdjacencyVariant variant = AdjacencyVariant::full;
  AveragedMetrics metrics;
  std::vector<std::uint64_t> fold_checksums;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<Fold> folds;
};

/// train() once per adjacency variant over one shared split.
AblationReport run_ablation(const Dataset& data, const ExperimentConfig& cfg,
                            std::size_t jobs = 1);

}  // namespace dyngraph
