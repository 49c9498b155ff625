#include "dyngraph/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace dyngraph {

std::string_view to_string(AdjacencyVariant v) {
  switch (v) {
    case AdjacencyVariant::binary: return "binary";
    case AdjacencyVariant::weighted: return "weighted";
    case AdjacencyVariant::learn_only: return "learn_only";
    case AdjacencyVariant::dice_only: return "dice_only";
    case AdjacencyVariant::full: return "full";
  }
  return "unknown";
}

AdjacencyVariant parse_variant(std::string_view name) {
  for (AdjacencyVariant v : kAllVariants)
    if (to_string(v) == name) return v;
  throw std::invalid_argument("unknown adjacency variant '" + std::string(name) +
                              "' (expected binary|weighted|learn_only|dice_only|full)");
}

std::string_view to_string(PositionalMode m) {
  return m == PositionalMode::squared ? "squared" : "inverse_squared";
}

PositionalMode parse_positional_mode(std::string_view name) {
  if (name == "squared") return PositionalMode::squared;
  if (name == "inverse_squared") return PositionalMode::inverse_squared;
  throw std::invalid_argument("unknown positional mode '" + std::string(name) +
                              "' (expected squared|inverse_squared)");
}

void AdjacencyConfig::validate() const {
  if (!(phi >= 0.0) || !std::isfinite(phi)) {
    throw std::invalid_argument("AdjacencyConfig: phi must be finite and >= 0");
  }
}

namespace {

Matrix glorot(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

}  // namespace

ModelParams ModelParams::initialize(std::size_t feature_dim, std::size_t hidden_dim,
                                    std::size_t num_classes, const Matrix& a_learn_init,
                                    std::size_t extra_layers, std::uint64_t seed) {
  if (feature_dim == 0 || hidden_dim == 0 || num_classes == 0) {
    throw std::invalid_argument("ModelParams::initialize: dimensions must be positive");
  }
  if (a_learn_init.rows() != a_learn_init.cols()) {
    throw ShapeError("ModelParams::initialize: a_learn must be square, got " +
                     a_learn_init.shape_string());
  }
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.w0 = glorot(feature_dim, hidden_dim, rng);
  p.head_w = glorot(hidden_dim, num_classes, rng);
  p.head_b = Matrix(1, num_classes);
  for (std::size_t l = 0; l < extra_layers; ++l)
    p.extra_layers.push_back(glorot(hidden_dim, hidden_dim, rng));
  p.a_learn = a_learn_init;
  p.project();
  return p;
}

std::vector<Matrix*> ModelParams::tensors() {
  std::vector<Matrix*> out{&w0, &a_learn, &head_w, &head_b};
  for (Matrix& m : extra_layers) out.push_back(&m);
  return out;
}

std::vector<const Matrix*> ModelParams::tensors() const {
  std::vector<const Matrix*> out{&w0, &a_learn, &head_w, &head_b};
  for (const Matrix& m : extra_layers) out.push_back(&m);
  return out;
}

void ModelParams::project() {
  for (double& v : a_learn.data()) v = std::clamp(v, 0.0, 1.0);
}

void ModelParams::validate() const {
  const std::size_t p = feature_dim();
  const std::size_t q = hidden_dim();
  const std::size_t c = num_classes();
  if (p == 0 || q == 0 || c == 0) throw ShapeError("ModelParams: empty tensor");
  if (a_learn.rows() != a_learn.cols()) throw ShapeError("ModelParams: a_learn not square");
  if (head_w.rows() != q) throw ShapeError("ModelParams: head_w rows != hidden dim");
  if (head_b.rows() != 1 || head_b.cols() != c) throw ShapeError("ModelParams: head_b not 1xC");
  for (const Matrix& l : extra_layers)
    if (l.rows() != q || l.cols() != q) throw ShapeError("ModelParams: extra layer not qxq");
  for (const Matrix* t : tensors())
    if (!t->all_finite()) throw std::domain_error("ModelParams: non-finite entry");
}

SegmentStructure SegmentStructure::build(const SegmentGraph& g, PositionalMode mode) {
  SegmentStructure s;
  s.segment_index = g.segment_index;
  s.binary = binary_adjacency(g);
  s.weighted = weighted_distance_adjacency(g);
  s.positional = positional_adjacency(g, mode);
  s.dice = dice_matrix(g);
  return s;
}

std::vector<SegmentStructure> build_structures(const DynamicGraph& dg, PositionalMode mode) {
  std::vector<SegmentStructure> out;
  out.reserve(dg.segments.size());
  for (const SegmentGraph& g : dg.segments) out.push_back(SegmentStructure::build(g, mode));
  return out;
}

namespace ad {

std::vector<Var> ParamVars::all() const {
  std::vector<Var> out{w0, a_learn, head_w, head_b};
  out.insert(out.end(), extra_layers.begin(), extra_layers.end());
  return out;
}

ParamVars record_params(Tape& tape, const ModelParams& params, bool trainable) {
  const auto rec = [&](const Matrix& m) {
    return trainable ? tape.variable(m) : tape.constant(m);
  };
  ParamVars v{rec(params.w0), rec(params.a_learn), rec(params.head_w), rec(params.head_b), {}};
  for (const Matrix& l : params.extra_layers) v.extra_layers.push_back(rec(l));
  return v;
}

Var composite_adjacency(Tape& tape, const SegmentStructure& s, Var a_learn,
                        const AdjacencyConfig& cfg) {
  const std::size_t m = s.binary.rows();
  if (a_learn.rows() != m || a_learn.cols() != m) {
    throw ShapeError("composite_adjacency: a_learn " + a_learn.value().shape_string() +
                     " does not match " + std::to_string(m) + " nodes");
  }
  if (s.dice.kind != SimilarityKind::proposed_dice) {
    throw std::invalid_argument("composite_adjacency: expected the proposed Dice matrix");
  }
  const Matrix eye = Matrix::identity(m);
  const auto fixed_prior = [&] {
    Matrix a = s.positional;
    a += scale(s.dice.values, cfg.phi);
    a += eye;
    return a;
  };
  const auto learned = [&] { return ad::scale(ad::add(a_learn, ad::transpose(a_learn)), 0.5); };

  switch (cfg.variant) {
    case AdjacencyVariant::binary: return tape.constant(add(s.binary, eye));
    case AdjacencyVariant::weighted: return tape.constant(add(s.weighted, eye));
    case AdjacencyVariant::dice_only: return tape.constant(fixed_prior());
    case AdjacencyVariant::learn_only: return ad::add(tape.constant(eye), learned());
    case AdjacencyVariant::full: return ad::add(tape.constant(fixed_prior()), learned());
  }
  throw std::logic_error("composite_adjacency: unhandled variant");
}

namespace {

Var propagate(Var a_hat, Var x, Var w) { return relu(matmul(a_hat, matmul(x, w))); }

Var recur(Var w, Var a_hat, Var x) {
  const double inv_m = 1.0 / static_cast<double>(x.rows());
  const Var update = matmul(transpose(x), matmul(a_hat, matmul(x, w)));
  return relu(add(w, scale(update, inv_m)));
}

void check_conv_shapes(const Matrix& x, const Matrix& a, const Matrix& w, const char* what) {
  if (a.rows() != a.cols() || a.rows() != x.rows() || x.cols() != w.rows()) {
    throw ShapeError(std::string(what) + ": incompatible shapes x " + x.shape_string() +
                     ", a " + a.shape_string() + ", w " + w.shape_string());
  }
}

}  // namespace

Var segment_conv(Var x, Var a, Var w) {
  check_conv_shapes(x.value(), a.value(), w.value(), "segment_conv");
  return propagate(sym_normalize(a), x, w);
}

Var weight_recurrence(Var w, Var a, Var x) {
  check_conv_shapes(x.value(), a.value(), w.value(), "weight_recurrence");
  return recur(w, sym_normalize(a), x);
}

ForwardVars forward(Tape& tape, const ParamVars& params, std::span<const Matrix> features,
                    std::span<const SegmentStructure> structures, const AdjacencyConfig& cfg) {
  if (features.empty()) throw std::invalid_argument("forward: no segments");
  if (structures.size() < features.size()) {
    throw std::invalid_argument("forward: " + std::to_string(features.size()) +
                                " segments but only " + std::to_string(structures.size()) +
                                " structures");
  }
  ForwardVars out;
  Var w = params.w0;
  std::vector<Var> pooled;
  for (std::size_t s = 0; s < features.size(); ++s) {
    const Var x = tape.constant(features[s]);
    const Var a = composite_adjacency(tape, structures[s], params.a_learn, cfg);
    check_conv_shapes(x.value(), a.value(), w.value(), "forward");
    const Var a_hat = sym_normalize(a);
    Var h = propagate(a_hat, x, w);
    for (Var layer : params.extra_layers) h = propagate(a_hat, h, layer);
    out.weights.push_back(w);
    out.hidden.push_back(h);
    pooled.push_back(mean_rows(h));
    if (s + 1 < features.size()) w = recur(w, a_hat, x);
  }
  out.embedding = mean(pooled);
  out.logits = add_row(matmul(out.embedding, params.head_w), params.head_b);
  return out;
}

}  // namespace ad

Matrix composite_adjacency(const SegmentGraph& g, const SimilarityMatrix& dice,
                           const ModelParams& params, const AdjacencyConfig& cfg) {
  cfg.validate();
  if (dice.values.rows() != g.node_count || dice.values.cols() != g.node_count) {
    throw ShapeError("composite_adjacency: dice " + dice.values.shape_string() + " for " +
                     std::to_string(g.node_count) + " nodes");
  }
  SegmentStructure s;
  s.segment_index = g.segment_index;
  s.binary = binary_adjacency(g);
  s.weighted = weighted_distance_adjacency(g);
  s.positional = positional_adjacency(g, cfg.positional_mode);
  s.dice = dice;
  ad::Tape tape;
  return ad::composite_adjacency(tape, s, tape.constant(params.a_learn), cfg).value();
}

Matrix segment_conv(const Matrix& x, const Matrix& a, const Matrix& w) {
  ad::Tape tape;
  return ad::segment_conv(tape.constant(x), tape.constant(a), tape.constant(w)).value();
}

Matrix weight_recurrence(const Matrix& w, const Matrix& a, const Matrix& x) {
  ad::Tape tape;
  return ad::weight_recurrence(tape.constant(w), tape.constant(a), tape.constant(x)).value();
}

Matrix gcn_layer(const Matrix& h, const Matrix& a, const Matrix& w) {
  if (a.rows() != a.cols() || a.rows() != h.rows() || h.cols() != w.rows()) {
    throw ShapeError("gcn_layer: incompatible shapes h " + h.shape_string() + ", a " +
                     a.shape_string() + ", w " + w.shape_string());
  }
  const Matrix a_hat = sym_normalize(add(a, Matrix::identity(a.rows())));
  return relu(matmul(a_hat, matmul(h, w)));
}

ForwardState forward(const DynamicGraph& dg, const ModelParams& params,
                     const AdjacencyConfig& cfg) {
  dg.validate();
  cfg.validate();
  const auto structures = build_structures(dg, cfg.positional_mode);
  std::vector<Matrix> features;
  features.reserve(dg.segments.size());
  for (const SegmentGraph& g : dg.segments) features.push_back(g.features);

  ad::Tape tape;
  const ad::ParamVars vars = ad::record_params(tape, params, false);
  const ad::ForwardVars fv = ad::forward(tape, vars, features, structures, cfg);
  ForwardState st;
  for (ad::Var w : fv.weights) st.weights.push_back(w.value());
  for (ad::Var h : fv.hidden) st.hidden.push_back(h.value());
  st.embedding = fv.embedding.value();
  st.logits = fv.logits.value();
  return st;
}

std::size_t predict(const DynamicGraph& dg, std::span<const SegmentStructure> structures,
                    const ModelParams& params, const AdjacencyConfig& cfg) {
  std::vector<Matrix> features;
  features.reserve(dg.segments.size());
  for (const SegmentGraph& g : dg.segments) features.push_back(g.features);
  ad::Tape tape;
  const ad::ParamVars vars = ad::record_params(tape, params, false);
  const ad::ForwardVars fv = ad::forward(tape, vars, features, structures, cfg);
  return argmax_row(fv.logits.value(), 0);
}

}  // namespace dyngraph
