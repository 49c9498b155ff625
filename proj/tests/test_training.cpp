#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>

#include "dyngraph/features.hpp"
#include "dyngraph/grad_check.hpp"
#include "dyngraph/training.hpp"
#include "support.hpp"

using namespace dyngraph;
using testing::random_matrix;

namespace {

Dataset small_synthetic(std::size_t per_class, double noise, std::uint64_t seed,
                        std::size_t frames = 12, std::size_t p = 4) {
  Dataset d;
  d.samples = synth_dataset(per_class, 3, frames, p, noise, seed);
  d.num_classes = 3;
  return d;
}

ExperimentConfig fast_config() {
  ExperimentConfig cfg;
  cfg.train.lr = 0.01;
  cfg.train.batch_size = 8;
  cfg.train.max_epochs = 30;
  cfg.train.early_stop_patience = 10;
  cfg.train.folds = 3;
  cfg.train.hidden_dim = 6;
  cfg.graph.window = 6;
  cfg.graph.hop = 6;
  return cfg;
}

double radam_single(double theta, double g, double lr) {
  Matrix p(1, 1, theta);
  Matrix* ptrs[] = {&p};
  const Matrix grads[] = {Matrix(1, 1, g)};
  RAdamState state;
  radam_step(ptrs, grads, state, 1, lr);
  return p(0, 0);
}

}  // namespace

TEST_CASE("classification loss") {
  const std::vector<std::size_t> labels = {0, 1};
  const Matrix perfect = Matrix::from_rows({{800, 0}, {0, 800}});
  CHECK(classification_loss(perfect, labels) < 1e-12);
  const std::vector<std::size_t> one = {2};
  CHECK(std::abs(classification_loss(Matrix(1, 4), one) - std::log(4.0)) < 1e-12);
  const Matrix rows = Matrix::from_rows({{0.3, -1.2}, {2.0, 0.7}});
  const std::vector<std::size_t> l0 = {0};
  const std::vector<std::size_t> l1 = {1};
  const double a = classification_loss(Matrix::from_rows({{0.3, -1.2}}), l0);
  const double b = classification_loss(Matrix::from_rows({{2.0, 0.7}}), l1);
  CHECK(std::abs(classification_loss(rows, labels) - (a + b) / 2.0) < 1e-15);
}

TEST_CASE("structure loss worked values") {
  const SimilarityMatrix dice{Matrix::from_rows({{0, 1}, {1, 0}}), SimilarityKind::proposed_dice};
  const Matrix learn = Matrix::from_rows({{0, 0.5}, {0.5, 0}});
  CHECK(std::abs(structure_loss(dice, learn, 1.0, 1.0) - 3.0) <= 1e-12);
  CHECK(structure_loss(dice, learn, 0.0, 0.0) == 0.0);
  CHECK(structure_loss(dice, Matrix(2, 2), 0.7, 0.3) == 0.3 * 2.0);
  CHECK_THROWS_AS((void)structure_loss(dice, Matrix(3, 3), 1.0, 1.0), ShapeError);
}

TEST_CASE("structure loss gradient is lambda1 times the Dice matrix") {
  std::mt19937_64 rng(51);
  const SimilarityMatrix dice = dice_matrix(testing::random_graph(rng, 7, 0.4));
  const Matrix learn = random_matrix(rng, 7, 7, 0.0, 1.0);
  ad::Tape tape;
  const ad::Var a = tape.variable(learn);
  tape.backward(ad::structure_loss(tape, dice, a, 0.3, 0.2));
  CHECK(max_abs_diff(a.grad(), scale(dice.values, 0.3)) < 1e-15);
  CHECK(ad::grad_check([&](ad::Tape& t, ad::Var v) { return ad::structure_loss(t, dice, v, 0.3, 0.2); },
                   learn) <= 1e-7);
  CHECK(std::abs(ad::structure_loss(tape, dice, a, 0.3, 0.2).value()(0, 0) -
                 structure_loss(dice, learn, 0.3, 0.2)) < 1e-12);
}

TEST_CASE("total loss") {
  const LossBreakdown l = total_loss(1.0, 0.5);
  CHECK(l.total == 1.5);
  CHECK(total_loss(0.7, 0.0).total == 0.7);
  CHECK_THROWS_AS((void)total_loss(std::nan(""), 0.0), std::domain_error);
  CHECK_THROWS_AS((void)total_loss(1.0, INFINITY), std::domain_error);
}

TEST_CASE("batch loss: total is gc + gl and gradients add up") {
  const Dataset data = small_synthetic(3, 0.3, 1);
  ExperimentConfig cfg = fast_config();
  const PreparedDataset prepared = prepare(data, cfg.graph, PositionalMode::squared, 3);
  const ModelParams params = initial_params(prepared, cfg, 4);
  const std::vector<std::size_t> batch = {0, 4, 8};

  ad::Tape tape;
  const ad::ParamVars vars = ad::record_params(tape, params, true);
  const ad::LossVars loss = ad::batch_loss(tape, vars, prepared, batch, cfg);
  CHECK(loss.total.value()(0, 0) == loss.gc.value()(0, 0) + loss.gl.value()(0, 0));
  tape.backward(loss.total);
  const Matrix total_grad = vars.a_learn.grad();
  tape.backward(loss.gc);
  const Matrix gc_grad = vars.a_learn.grad();
  tape.backward(loss.gl);
  const Matrix gl_grad = vars.a_learn.grad();
  CHECK(max_abs_diff(total_grad, add(gc_grad, gl_grad)) < 1e-14);

  ad::Tape bare;
  const ad::ParamVars bare_vars = ad::record_params(bare, params, true);
  const ad::LossVars ce_only = ad::batch_loss(bare, bare_vars, prepared, batch, cfg, false);
  CHECK(ce_only.total.value() == loss.gc.value());
  CHECK(ce_only.gl.value()(0, 0) == 0.0);
}

TEST_CASE("zero lambdas reproduce the pure cross-entropy trajectory bit for bit") {
  const Dataset data = small_synthetic(4, 0.3, 2);
  ExperimentConfig cfg = fast_config();
  cfg.train.lambda1 = 0.0;
  cfg.train.lambda2 = 0.0;
  const PreparedDataset prepared = prepare(data, cfg.graph, PositionalMode::squared, 3);
  const ModelParams init = initial_params(prepared, cfg, 9);
  Trainer joint(prepared, cfg, init);
  Trainer pure(prepared, cfg, init);
  std::mt19937_64 rng(10);
  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), 0);
  for (int step = 0; step < 20; ++step) {
    std::shuffle(order.begin(), order.end(), rng);
    const std::span<const std::size_t> batch(order.data(), 5);
    const LossBreakdown a = joint.step(batch, 0.01, true);
    const LossBreakdown b = pure.step(batch, 0.01, false);
    CHECK(a.total == b.total);
  }
  for (std::size_t k = 0; k < init.tensors().size(); ++k)
    CHECK(*joint.params().tensors()[k] == *pure.params().tensors()[k]);
}

TEST_CASE("RAdam") {
  CHECK(std::abs(radam_single(1.0, 1.0, 0.1) - 0.9) <= 1e-12);

  Matrix p = Matrix::from_rows({{1.5, -2.0}});
  Matrix* ptrs[] = {&p};
  const Matrix zero[] = {Matrix(1, 2)};
  RAdamState state;
  for (std::size_t t = 1; t <= 100; ++t) radam_step(ptrs, zero, state, t, 0.1);
  CHECK(p == Matrix::from_rows({{1.5, -2.0}}));

  Matrix theta(1, 1, 5.0);
  Matrix* tp[] = {&theta};
  RAdamState qs;
  for (std::size_t t = 1; t <= 10000; ++t) {
    const Matrix g[] = {Matrix(1, 1, 2.0 * theta(0, 0))};
    radam_step(tp, g, qs, t, 0.01);
  }
  CHECK(std::abs(theta(0, 0)) < 1e-3);

  const Matrix wrong[] = {Matrix(2, 2)};
  RAdamState fresh;
  CHECK_THROWS_AS(radam_step(ptrs, wrong, fresh, 1, 0.1), ShapeError);
  CHECK_THROWS_AS(radam_step(ptrs, zero, fresh, 0, 0.1), std::invalid_argument);
}

TEST_CASE("RAdam switches to the adaptive update once rho exceeds 4") {
  // rho_t <= 4 for t <= 4 at beta2 = 0.999, so the first steps are pure momentum
  // and move theta by exactly lr * m_hat = lr for a constant unit gradient.
  Matrix p(1, 1, 0.0);
  Matrix* ptrs[] = {&p};
  const Matrix g[] = {Matrix(1, 1, 1.0)};
  RAdamState state;
  for (std::size_t t = 1; t <= 4; ++t) radam_step(ptrs, g, state, t, 0.1);
  CHECK(std::abs(p(0, 0) + 0.4) < 1e-12);
  const double before = p(0, 0);
  radam_step(ptrs, g, state, 5, 0.1);
  const double moved = before - p(0, 0);
  CHECK(moved > 0.0);
  CHECK(moved < 0.1);
}

TEST_CASE("learning-rate schedule") {
  TrainConfig cfg;
  CHECK(lr_schedule(cfg, 0) == 0.001);
  CHECK(lr_schedule(cfg, 149) == 0.001);
  CHECK(lr_schedule(cfg, 150) == 0.0005);
  CHECK(lr_schedule(cfg, 449) == 0.00025);
}

TEST_CASE("k-fold split") {
  std::vector<std::size_t> labels(100);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 4;
  const auto folds = kfold_split(labels, 10, 7);
  REQUIRE(folds.size() == 10);
  std::multiset<std::size_t> seen;
  for (const Fold& f : folds) {
    CHECK(f.validation.size() == 10);
    CHECK(f.train.size() == 90);
    seen.insert(f.validation.begin(), f.validation.end());
    std::set<std::size_t> tr(f.train.begin(), f.train.end());
    for (std::size_t v : f.validation) CHECK(tr.count(v) == 0);
  }
  CHECK(seen.size() == 100);
  CHECK(std::set<std::size_t>(seen.begin(), seen.end()).size() == 100);

  const auto again = kfold_split(labels, 10, 7);
  for (std::size_t k = 0; k < 10; ++k) {
    CHECK(again[k].validation == folds[k].validation);
    CHECK(fold_checksum(again[k]) == fold_checksum(folds[k]));
  }
  CHECK(fold_checksum(folds[0]) != fold_checksum(folds[1]));
}

TEST_CASE("k-fold stratification and fallback") {
  std::vector<std::size_t> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = i / 10;
  for (const Fold& f : kfold_split(labels, 10, 3)) {
    std::vector<std::size_t> per_class(4, 0);
    for (std::size_t v : f.validation) ++per_class[labels[v]];
    CHECK(per_class == std::vector<std::size_t>{1, 1, 1, 1});
  }

  std::vector<std::size_t> skewed(20, 0);
  skewed[0] = 1;
  const auto folds = kfold_split(skewed, 5, 1);
  std::size_t total = 0;
  for (const Fold& f : folds) total += f.validation.size();
  CHECK(total == 20);
  CHECK_THROWS_AS((void)kfold_split(skewed, 21, 1), std::invalid_argument);
}

TEST_CASE("metrics") {
  const std::vector<std::size_t> labels = {0, 0, 1, 1};
  const Metrics perfect = evaluate(labels, labels);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.weighted_f1 == 1.0);

  const std::vector<std::size_t> all_a = {0, 0, 0, 0};
  const Metrics m = evaluate(all_a, labels, 2);
  CHECK(m.accuracy == 0.5);
  CHECK(std::abs(m.weighted_f1 - 1.0 / 3.0) < 1e-12);
  CHECK(m.confusion == std::vector<std::vector<std::size_t>>{{2, 0}, {2, 0}});

  std::mt19937_64 rng(52);
  std::vector<std::size_t> pred(50), truth(50);
  for (std::size_t i = 0; i < 50; ++i) {
    pred[i] = rng() % 5;
    truth[i] = rng() % 5;
  }
  const Metrics r = evaluate(pred, truth, 5);
  std::size_t trace = 0;
  std::size_t total = 0;
  for (std::size_t k = 0; k < 5; ++k) {
    trace += r.confusion[k][k];
    const std::size_t support = static_cast<std::size_t>(std::count(truth.begin(), truth.end(), k));
    std::size_t row = 0;
    for (std::size_t o = 0; o < 5; ++o) row += r.confusion[k][o];
    CHECK(row == support);
    total += row;
  }
  CHECK(r.accuracy == static_cast<double>(trace) / static_cast<double>(total));

  const std::vector<std::size_t> none;
  CHECK_THROWS_AS((void)evaluate(none, none), std::invalid_argument);
  CHECK_THROWS_AS((void)evaluate(all_a, none), std::invalid_argument);
}

TEST_CASE("config validation") {
  TrainConfig t;
  t.lr = 0.0;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t = TrainConfig{};
  t.decay_factor = 1.5;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t = TrainConfig{};
  t.folds = 1;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  CHECK_NOTHROW(TrainConfig{}.validate());
}

TEST_CASE("prepare shares one topology per segment index") {
  const Dataset data = small_synthetic(2, 0.3, 3, 18);
  GraphConfig graph;
  graph.window = 6;
  graph.hop = 6;
  const PreparedDataset p = prepare(data, graph, PositionalMode::squared, 11);
  CHECK(p.size() == 6);
  CHECK(p.structures.size() == 3);
  CHECK(p.node_count == 6);
  CHECK(p.feature_dim == 4);
  for (const auto& feats : p.features) CHECK(feats.size() == 3);
  const PreparedDataset q = prepare(data, graph, PositionalMode::squared, 11);
  for (std::size_t s = 0; s < 3; ++s) CHECK(p.structures[s].binary == q.structures[s].binary);
}

TEST_CASE("fit: early stopping reports the best epoch's parameters") {
  const Dataset data = small_synthetic(6, 0.8, 4);
  ExperimentConfig cfg = fast_config();
  cfg.train.early_stop_patience = 3;
  const PreparedDataset prepared = prepare(data, cfg.graph, PositionalMode::squared, cfg.train.seed);
  const auto folds = kfold_split(prepared.labels, 3, cfg.train.seed);
  const FoldResult r = fit(prepared, folds[0].train, folds[0].validation, cfg, 0);
  CHECK(r.best_epoch < r.epochs_run);
  CHECK(r.curve.size() == r.epochs_run);
  const double best_curve =
      std::max_element(r.curve.begin(), r.curve.end(), [](const auto& a, const auto& b) {
        return a.val_accuracy < b.val_accuracy;
      })->val_accuracy;
  CHECK(r.curve[r.best_epoch].val_accuracy == best_curve);
  const Trainer best(prepared, cfg, r.best_params);
  CHECK(best.accuracy(folds[0].validation) == r.validation.accuracy);
  if (r.epochs_run < cfg.train.max_epochs) CHECK(r.epochs_run - 1 - r.best_epoch == 3);
}

TEST_CASE("train: deterministic, independent of jobs, averages folds") {
  const Dataset data = small_synthetic(5, 0.3, 5);
  const ExperimentConfig cfg = fast_config();
  const TrainReport a = train(data, cfg, 1);
  const TrainReport b = train(data, cfg, 3);
  REQUIRE(a.folds.size() == 3);
  double mean = 0.0;
  for (std::size_t f = 0; f < 3; ++f) {
    CHECK(a.folds[f].validation.accuracy == b.folds[f].validation.accuracy);
    CHECK(a.folds[f].best_params.w0 == b.folds[f].best_params.w0);
    mean += a.folds[f].validation.accuracy;
  }
  CHECK(std::abs(a.average.accuracy - mean / 3.0) <= 1e-12);
  CHECK(a.average.accuracy == b.average.accuracy);
  CHECK(a.best_fold() < 3);
}

TEST_CASE("training lowers the loss on a separable set") {
  const Dataset data = small_synthetic(4, 0.0, 6);
  ExperimentConfig cfg = fast_config();
  const PreparedDataset prepared = prepare(data, cfg.graph, PositionalMode::squared, 1);
  Trainer trainer(prepared, cfg, initial_params(prepared, cfg, 2));
  std::vector<std::size_t> all(prepared.size());
  std::iota(all.begin(), all.end(), 0);
  const double first = trainer.step(all, 0.01).gc;
  double last = first;
  for (int i = 0; i < 400; ++i) last = trainer.step(all, 0.01).gc;
  CHECK(last < 0.5 * first);
  CHECK(trainer.accuracy(all) == 1.0);
  CHECK(trainer.steps_taken() == 401);
  for (double v : trainer.params().a_learn.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("divergence is reported") {
  const Dataset data = small_synthetic(2, 0.0, 7);
  ExperimentConfig cfg = fast_config();
  PreparedDataset prepared = prepare(data, cfg.graph, PositionalMode::squared, 1);
  const ModelParams params = initial_params(prepared, cfg, 2);
  prepared.features[0][0](0, 0) = std::numeric_limits<double>::infinity();
  Trainer trainer(prepared, cfg, params);
  const std::vector<std::size_t> batch = {0, 1};
  CHECK_THROWS_AS((void)trainer.step(batch, 0.01), DivergenceError);
}

TEST_CASE("ablation shares folds across variants") {
  const Dataset data = small_synthetic(4, 0.3, 8);
  ExperimentConfig cfg = fast_config();
  cfg.train.max_epochs = 5;
  const AblationReport report = run_ablation(data, cfg, 2);
  REQUIRE(report.rows.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(report.rows[i].variant == kAllVariants[i]);
    CHECK(report.rows[i].fold_checksums == report.rows[0].fold_checksums);
    CHECK(report.rows[i].metrics.accuracy >= 0.0);
    CHECK(report.rows[i].metrics.accuracy <= 1.0);
  }
  REQUIRE(report.folds.size() == 3);
  CHECK(report.rows[0].fold_checksums[1] == fold_checksum(report.folds[1]));
}
