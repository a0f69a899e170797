#include "ade/attention.hpp"
#include "ade/errors.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace {

using ade::AttentionConfig;
using ade::AttentionParams;
using ade::Matrix;

struct Fixture {
  AttentionConfig config;
  AttentionParams params;
};

Fixture make(int dim, int heads, std::uint64_t seed, bool random_biases = true) {
  Fixture f{{heads, dim}, {}};
  ade::Rng rng(seed);
  f.params = AttentionParams::random(f.config, rng);
  if (random_biases) {
    std::mt19937_64 g(seed + 1);
    for (auto* b : {&f.params.bq, &f.params.bk, &f.params.bv, &f.params.bo}) *b = ade::oracle::random_vector(dim, g);
  }
  return f;
}

ade::oracle::AttentionRef reference(const Fixture& f, const Matrix& xq, const Matrix& xkv) {
  const auto& p = f.params;
  return ade::oracle::attention(xq, xkv, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo, f.config.num_heads);
}

TEST(Attention, MatchesHandRolledReference) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 10; ++t) {
    const auto f = make(8, t % 2 ? 2 : 4, 100 + t);
    const Matrix xq = ade::oracle::random_matrix(3 + t % 3, 8, rng);
    const Matrix xkv = ade::oracle::random_matrix(5, 8, rng);
    const auto got = ade::multi_head_attention(xq, xkv, f.params, f.config);
    const auto want = reference(f, xq, xkv);
    EXPECT_LT((got.output - want.output).cwiseAbs().maxCoeff(), 1e-12);
    for (int h = 0; h < f.config.num_heads; ++h) {
      EXPECT_LT((got.weights[h] - want.weights[h]).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Attention, WeightsAreRowStochastic) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const auto f = make(16, 4, t);
    const Matrix a = ade::oracle::random_matrix(5, 16, rng, -3, 3);
    const Matrix b = ade::oracle::random_matrix(7, 16, rng, -3, 3);
    const auto [ab, ba] = ade::cross_attend_swapped(a, b, f.params, f.config);
    for (const auto* r : {&ab, &ba}) {
      for (const auto& w : r->weights) {
        EXPECT_GE(w.minCoeff(), 0.0);
        EXPECT_LT((w.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-6);
      }
    }
    EXPECT_EQ(ab.output.rows(), 5);
    EXPECT_EQ(ba.output.rows(), 7);
  }
}

TEST(Attention, SelfAttentionIsPermutationEquivariant) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const auto f = make(8, 2, 500 + t);
    const Matrix x = ade::oracle::random_matrix(6, 8, rng);
    std::vector<int> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Matrix px(6, 8);
    for (int i = 0; i < 6; ++i) px.row(i) = x.row(perm[i]);
    const auto base = ade::self_attend(x, f.params, f.config);
    const auto permuted = ade::self_attend(px, f.params, f.config);
    for (int i = 0; i < 6; ++i) {
      EXPECT_LT((permuted.output.row(i) - base.output.row(perm[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(Attention, SwappedOnIdenticalTokensIsSelfAttention) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto f = make(8, 4, 900 + t);
    const Matrix x = ade::oracle::random_matrix(5, 8, rng);
    const auto self = ade::self_attend(x, f.params, f.config);
    const auto [a, b] = ade::cross_attend_swapped(x, x, f.params, f.config);
    EXPECT_EQ(a.output, self.output);
    EXPECT_EQ(b.output, self.output);
    for (int h = 0; h < 4; ++h) EXPECT_EQ(a.weights[h], self.weights[h]);
  }
}

TEST(Attention, ZeroQueryKeyGivesUniformWeights) {
  auto f = make(8, 2, 7, false);
  f.params.wq.setZero();
  std::mt19937_64 rng(5);
  const auto r = ade::self_attend(ade::oracle::random_matrix(4, 8, rng), f.params, f.config);
  for (const auto& w : r.weights) EXPECT_TRUE(w.isApproxToConstant(0.25, 1e-15));
}

TEST(Attention, ShapeChecks) {
  EXPECT_THROW((AttentionConfig{3, 8}.validate()), ade::ShapeError);
  const auto f = make(8, 2, 1);
  EXPECT_THROW(ade::self_attend(Matrix::Zero(3, 6), f.params, f.config), ade::ShapeError);
  EXPECT_THROW(ade::cross_attend_swapped(Matrix::Zero(3, 8), Matrix::Zero(3, 6), f.params, f.config),
               ade::ShapeError);
}

// Loss touching every output attend() exposes: the projected output, the
// post-softmax weights and the scaled logits.
TEST(Attention, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  auto f = make(8, 2, 33);
  const Matrix xq = ade::oracle::random_matrix(3, 8, rng);
  const Matrix xkv = ade::oracle::random_matrix(4, 8, rng);
  const Matrix g_out = ade::oracle::random_matrix(3, 8, rng);
  std::vector<Matrix> g_w, g_l;
  for (int h = 0; h < 2; ++h) {
    g_w.push_back(ade::oracle::random_matrix(3, 4, rng));
    g_l.push_back(ade::oracle::random_matrix(3, 4, rng));
  }
  auto loss = [&]() {
    const auto r = ade::multi_head_attention(xq, xkv, f.params, f.config);
    double l = (r.output.array() * g_out.array()).sum();
    for (int h = 0; h < 2; ++h) {
      l += (r.weights[h].array() * g_w[h].array()).sum() + (r.logits[h].array() * g_l[h].array()).sum();
    }
    return l;
  };

  const auto pq = ade::project(f.params, xq);
  const auto pkv = ade::project(f.params, xkv);
  const auto r = ade::attend(f.config, f.params, pq, pkv);
  auto grads = AttentionParams::zeros(f.config);
  auto gq = ade::ProjectionGrad::zeros_like(pq);
  auto gkv = ade::ProjectionGrad::zeros_like(pkv);
  ade::attend_backward(f.config, f.params, pq, pkv, r, {g_out, g_w, g_l}, grads, gq, gkv);
  ade::project_backward(pq, gq, grads);
  ade::project_backward(pkv, gkv, grads);

  std::vector<std::pair<std::string, std::span<double>>> analytic;
  grads.visit([&](const char* name, std::span<double> s) { analytic.emplace_back(name, s); });
  std::size_t k = 0;
  f.params.visit([&](const char* name, std::span<double> s) {
    const auto numeric = ade::oracle::central_difference(s, loss);
    EXPECT_LT(ade::oracle::relative_error(analytic[k].second, numeric), 1e-6) << name;
    ++k;
  });
}

}  // namespace
