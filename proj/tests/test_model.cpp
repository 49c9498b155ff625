#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "dyngraph/grad_check.hpp"
#include "dyngraph/model.hpp"
#include "dyngraph/training.hpp"
#include "support.hpp"

using namespace dyngraph;
using testing::random_matrix;

namespace {

ModelParams toy_params(std::mt19937_64& rng, std::size_t m, std::size_t p, std::size_t q,
                       std::size_t c) {
  return ModelParams::initialize(p, q, c, random_matrix(rng, m, m, 0.0, 1.0), 0, rng());
}

FrameSequence random_sequence(std::mt19937_64& rng, std::size_t frames, std::size_t p) {
  return FrameSequence{random_matrix(rng, frames, p), 0, "r"};
}

// Row-loop re-implementation of W + (1/m) X^T D^-1/2 A D^-1/2 X W followed by ReLU.
Matrix recurrence_oracle(const Matrix& w, const Matrix& a, const Matrix& x) {
  const std::size_t m = x.rows();
  const std::size_t p = x.cols();
  const std::size_t q = w.cols();
  std::vector<double> d(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) d[i] += a(i, j);

  Matrix xw(m, q);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < q; ++k)
      for (std::size_t l = 0; l < p; ++l) xw(i, k) += x(i, l) * w(l, k);

  Matrix axw(m, q);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      const double coeff = a(i, j) / std::sqrt(d[i] * d[j]);
      for (std::size_t k = 0; k < q; ++k) axw(i, k) += coeff * xw(j, k);
    }

  Matrix out(p, q);
  for (std::size_t l = 0; l < p; ++l)
    for (std::size_t k = 0; k < q; ++k) {
      double acc = 0.0;
      for (std::size_t i = 0; i < m; ++i) acc += x(i, l) * axw(i, k);
      out(l, k) = std::max(0.0, w(l, k) + acc / static_cast<double>(m));
    }
  return out;
}

Matrix permutation_matrix(std::span<const std::size_t> perm) {
  Matrix p(perm.size(), perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) p(i, perm[i]) = 1.0;
  return p;
}

}  // namespace

TEST_CASE("variant names round trip") {
  for (AdjacencyVariant v : kAllVariants) CHECK(parse_variant(to_string(v)) == v);
  CHECK(to_string(AdjacencyVariant::learn_only) == "learn_only");
  CHECK_THROWS_AS((void)parse_variant("dice"), std::invalid_argument);
  CHECK(parse_positional_mode("inverse_squared") == PositionalMode::inverse_squared);
  AdjacencyConfig cfg;
  cfg.phi = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("composite adjacency worked values") {
  const SegmentGraph g = testing::chain_graph(3);
  const SimilarityMatrix dice = dice_matrix(g);
  ModelParams params;
  params.a_learn = Matrix(3, 3);
  AdjacencyConfig cfg;
  cfg.variant = AdjacencyVariant::dice_only;
  const Matrix a = composite_adjacency(g, dice, params, cfg);
  CHECK(std::abs(a(0, 2) - 0.3) < 1e-15);
  for (AdjacencyVariant v : kAllVariants) {
    cfg.variant = v;
    const Matrix av = composite_adjacency(g, dice, params, cfg);
    for (std::size_t i = 0; i < 3; ++i) CHECK(av(i, i) == 1.0);
    for (double e : av.data()) CHECK(e >= 0.0);
  }
  cfg.variant = AdjacencyVariant::dice_only;
  cfg.phi = 0.0;
  CHECK(composite_adjacency(g, dice, params, cfg) == add(positional_adjacency(g), Matrix::identity(3)));
  cfg.variant = AdjacencyVariant::binary;
  CHECK(composite_adjacency(g, dice, params, cfg) == add(binary_adjacency(g), Matrix::identity(3)));
  cfg.variant = AdjacencyVariant::weighted;
  CHECK(composite_adjacency(g, dice, params, cfg) ==
        add(weighted_distance_adjacency(g), Matrix::identity(3)));
}

TEST_CASE("full minus dice_only is the symmetrised learned adjacency") {
  std::mt19937_64 rng(31);
  EdgePolicy policy;
  policy.seed = 4;
  SegmentGraph g;
  g.node_count = 8;
  g.edges = build_topology(8, policy);
  const SimilarityMatrix dice = dice_matrix(g);
  ModelParams params;
  params.a_learn = random_matrix(rng, 8, 8, 0.0, 1.0);
  AdjacencyConfig cfg;
  cfg.variant = AdjacencyVariant::full;
  const Matrix full = composite_adjacency(g, dice, params, cfg);
  cfg.variant = AdjacencyVariant::dice_only;
  const Matrix dice_only = composite_adjacency(g, dice, params, cfg);
  const Matrix sym = scale(add(params.a_learn, transpose(params.a_learn)), 0.5);
  CHECK(max_abs_diff(subtract(full, dice_only), sym) < 1e-13);

  // A symmetric learned matrix comes through unchanged.
  params.a_learn = sym;
  cfg.variant = AdjacencyVariant::learn_only;
  CHECK(composite_adjacency(g, dice, params, cfg) == add(Matrix::identity(8), sym));
}

TEST_CASE("composite adjacency shape mismatch") {
  const SegmentGraph g = testing::chain_graph(3);
  ModelParams params;
  params.a_learn = Matrix(4, 4);
  CHECK_THROWS_AS((void)composite_adjacency(g, dice_matrix(g), params, AdjacencyConfig{}),
                  ShapeError);
}

TEST_CASE("segment convolution basics") {
  std::mt19937_64 rng(32);
  const Matrix a = add(binary_adjacency(testing::chain_graph(3)), Matrix::identity(3));
  const Matrix w = random_matrix(rng, 2, 4);
  const Matrix h = segment_conv(Matrix(3, 2), a, w);
  CHECK(h == Matrix(3, 4));
  const Matrix x = random_matrix(rng, 3, 2);
  CHECK(segment_conv(x, a, w).rows() == 3);
  CHECK(segment_conv(x, a, w).cols() == 4);
  CHECK(max_abs_diff(segment_conv(x, Matrix::identity(3), w), relu(matmul(x, w))) < 1e-15);
  const Matrix out = segment_conv(x, a, w);
  for (double v : out.data()) CHECK(v >= 0.0);
  CHECK_THROWS_AS((void)segment_conv(x, Matrix(3, 3), w), std::domain_error);
  CHECK_THROWS_AS((void)segment_conv(x, a, random_matrix(rng, 3, 4)), ShapeError);
}

TEST_CASE("segment convolution is permutation equivariant") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 3 + rng() % 6;
    const Matrix a = add(testing::random_symmetric(rng, m), Matrix::identity(m));
    const Matrix x = random_matrix(rng, m, 3);
    const Matrix w = random_matrix(rng, 3, 4);
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Matrix p = permutation_matrix(perm);
    const Matrix lhs = segment_conv(matmul(p, x), matmul(matmul(p, a), transpose(p)), w);
    const Matrix rhs = matmul(p, segment_conv(x, a, w));
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("self-loop-only adjacency reduces to ReLU(XW)") {
  std::mt19937_64 rng(34);
  EdgePolicy policy;
  SegmentGraph g;
  g.node_count = 6;
  g.edges = build_topology(6, policy);
  ModelParams params;
  params.a_learn = Matrix(6, 6);
  AdjacencyConfig cfg;
  cfg.phi = 0.0;
  cfg.variant = AdjacencyVariant::full;
  // Positional weights zeroed: an edgeless graph has no positional entries.
  SegmentGraph bare;
  bare.node_count = 6;
  const Matrix a = composite_adjacency(bare, dice_matrix(bare), params, cfg);
  CHECK(a == Matrix::identity(6));
  const Matrix x = random_matrix(rng, 6, 3);
  const Matrix w = random_matrix(rng, 3, 2);
  CHECK(max_abs_diff(segment_conv(x, a, w), relu(matmul(x, w))) < 1e-15);
}

TEST_CASE("weight recurrence") {
  std::mt19937_64 rng(35);
  const Matrix a = add(binary_adjacency(testing::chain_graph(4)), Matrix::identity(4));
  const Matrix w = random_matrix(rng, 3, 2);
  CHECK(weight_recurrence(w, a, Matrix(4, 3)) == relu(w));
  CHECK(weight_recurrence(Matrix(3, 2), a, random_matrix(rng, 4, 3)) == Matrix(3, 2));
  CHECK_THROWS_AS((void)weight_recurrence(w, a, random_matrix(rng, 4, 2)), ShapeError);

  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 2 + rng() % 8;
    const Matrix am = add(testing::random_symmetric(rng, m, 2.0), Matrix::identity(m));
    const Matrix x = random_matrix(rng, m, 3);
    const Matrix wm = random_matrix(rng, 3, 4);
    CHECK(max_abs_diff(weight_recurrence(wm, am, x), recurrence_oracle(wm, am, x)) < 1e-12);
  }
}

TEST_CASE("gcn layer") {
  std::mt19937_64 rng(36);
  const Matrix h = random_matrix(rng, 2, 3);
  const Matrix w = random_matrix(rng, 3, 2);
  CHECK(max_abs_diff(gcn_layer(h, Matrix(2, 2), w), relu(matmul(h, w))) < 1e-15);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = testing::random_symmetric(rng, 5);
    const Matrix x = random_matrix(rng, 5, 3);
    const Matrix out = gcn_layer(x, a, w);
    for (double v : out.data()) CHECK(v >= 0.0);
    CHECK(max_abs_diff(out, segment_conv(x, add(a, Matrix::identity(5)), w)) < 1e-14);
  }
}

TEST_CASE("forward on zero features yields the bias") {
  std::mt19937_64 rng(37);
  const ModelParams params = toy_params(rng, 6, 3, 4, 3);
  EdgePolicy policy;
  const DynamicGraph dg = build_dynamic_graph(FrameSequence{Matrix(6, 3), 0, "z"}, 6, 6, policy);
  const ForwardState st = forward(dg, params, AdjacencyConfig{});
  CHECK(st.embedding == Matrix(1, 4));
  CHECK(st.logits == params.head_b);
  const Matrix probs = softmax_rows(st.logits);
  CHECK(std::abs(sum(probs) - 1.0) < 1e-12);
}

TEST_CASE("forward state shapes and non-negative hidden states") {
  std::mt19937_64 rng(38);
  const ModelParams params = toy_params(rng, 6, 3, 4, 3);
  EdgePolicy policy;
  policy.seed = 2;
  const DynamicGraph dg = build_dynamic_graph(random_sequence(rng, 18, 3), 6, 6, policy);
  const ForwardState st = forward(dg, params, AdjacencyConfig{});
  REQUIRE(st.hidden.size() == 3);
  CHECK(st.weights[0] == params.w0);
  for (const Matrix& h : st.hidden) {
    CHECK(h.rows() == 6);
    CHECK(h.cols() == 4);
    for (double v : h.data()) CHECK(v >= 0.0);
  }
  CHECK(st.logits.cols() == 3);
  CHECK(std::abs(sum(softmax_rows(st.logits)) - 1.0) < 1e-12);
  CHECK(predict(dg, build_structures(dg, PositionalMode::squared), params, AdjacencyConfig{}) ==
        argmax_row(st.logits, 0));
}

TEST_CASE("segment order matters through the recurrence") {
  std::mt19937_64 rng(39);
  const ModelParams params = toy_params(rng, 6, 3, 4, 3);
  EdgePolicy policy;
  policy.random_edges_per_node = 0;
  const DynamicGraph dg = build_dynamic_graph(random_sequence(rng, 12, 3), 6, 6, policy);
  DynamicGraph swapped = dg;
  std::swap(swapped.segments[0].features, swapped.segments[1].features);
  const ForwardState a = forward(dg, params, AdjacencyConfig{});
  const ForwardState b = forward(swapped, params, AdjacencyConfig{});
  CHECK(max_abs_diff(a.logits, b.logits) > 1e-9);
}

TEST_CASE("end-to-end gradients for every variant") {
  std::mt19937_64 rng(40);
  const std::size_t m = 6, p = 3, q = 4, c = 3;
  Dataset data;
  data.num_classes = c;
  for (std::size_t i = 0; i < 3; ++i)
    data.samples.push_back(FrameSequence{random_matrix(rng, 2 * m, p), i % c, "s"});
  GraphConfig graph;
  graph.window = m;
  graph.hop = m;
  const PreparedDataset prepared = prepare(data, graph, PositionalMode::squared, 5);
  REQUIRE(prepared.structures.size() == 2);

  for (AdjacencyVariant v : kAllVariants) {
    CAPTURE(to_string(v));
    ExperimentConfig cfg;
    cfg.adjacency.variant = v;
    cfg.train.hidden_dim = q;
    const ModelParams init =
        ModelParams::initialize(p, q, c, random_matrix(rng, m, m, 0.2, 0.8), 0, 99);
    const std::vector<Matrix> points = {init.w0, init.a_learn, init.head_w, init.head_b};
    const std::vector<std::size_t> batch = {0, 1, 2};
    const double err = ad::grad_check(
        [&](ad::Tape& tape, std::span<const ad::Var> in) {
          const ad::ParamVars vars{in[0], in[1], in[2], in[3], {}};
          return ad::batch_loss(tape, vars, prepared, batch, cfg).total;
        },
        points);
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("extra layers are differentiable and stored") {
  std::mt19937_64 rng(41);
  const ModelParams params =
      ModelParams::initialize(3, 4, 2, random_matrix(rng, 5, 5, 0.0, 1.0), 2, 7);
  CHECK(params.extra_layers.size() == 2);
  CHECK(params.tensors().size() == 6);
  std::stringstream ss;
  save_model(ss, params);
  const ModelParams back = load_model(ss);
  CHECK(back.extra_layers == params.extra_layers);
}

TEST_CASE("initialisation and projection") {
  std::mt19937_64 rng(42);
  Matrix init = random_matrix(rng, 4, 4, -1.0, 2.0);
  const ModelParams params = ModelParams::initialize(3, 5, 2, init, 0, 1);
  for (double v : params.a_learn.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(params.head_b == Matrix(1, 2));
  const double limit = std::sqrt(6.0 / (3 + 5));
  for (double v : params.w0.data()) CHECK(std::abs(v) <= limit);
  CHECK(ModelParams::initialize(3, 5, 2, init, 0, 1).w0 == params.w0);
  CHECK_THROWS_AS((void)ModelParams::initialize(3, 0, 2, init, 0, 1), std::invalid_argument);
}

TEST_CASE("model file round trip and corruption") {
  std::mt19937_64 rng(43);
  const ModelParams params = toy_params(rng, 6, 3, 4, 3);
  std::stringstream ss;
  save_model(ss, params);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "DGRL");
  CHECK(bytes.size() == 4 + 6 * 4 + 8 * (3 * 4 + 36 + 4 * 3 + 3));

  std::istringstream in(bytes);
  const ModelParams back = load_model(in);
  CHECK(back.w0 == params.w0);
  CHECK(back.a_learn == params.a_learn);
  CHECK(back.head_w == params.head_w);
  CHECK(back.head_b == params.head_b);

  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS((void)load_model(truncated), ModelFormatError);
  std::istringstream trailing(bytes + "x");
  CHECK_THROWS_AS((void)load_model(trailing), ModelFormatError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  std::istringstream magic(bad_magic);
  CHECK_THROWS_AS((void)load_model(magic), ModelFormatError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  std::istringstream version(bad_version);
  CHECK_THROWS_AS((void)load_model(version), ModelFormatError);
}
