#include "ade/errors.hpp"
#include "ade/model.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <array>

namespace {

using ade::Matrix;
using ade::ModelConfig;
using ade::ModelParams;

struct Toy {
  ModelConfig config;
  ade::ConceptVocabulary vocab{{"red", "blue"}, {"bus", "wall"}};
  std::vector<ade::Pair> pairs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  ModelParams params;
  Matrix z, z_attr, z_obj;

  explicit Toy(std::uint64_t seed, ade::AttentionMode mode = ade::AttentionMode::cross, double reg_weight = 1.0) {
    config.token_dim = 16;
    config.num_heads = 2;
    config.hidden_dim = 16;
    config.word_dim = 8;
    config.mode = mode;
    config.reg_weight = reg_weight;
    config.probe.temperature = 0.5;
    ade::Rng rng(seed);
    params = ModelParams::random(config, vocab, rng);
    // Off-zero biases keep the rectifiers and attention maps generic.
    std::mt19937_64 g(seed + 100);
    for (auto* a : {&params.attn_attr, &params.attn_obj, &params.attn_comp}) {
      a->bq = ade::oracle::random_vector(16, g, -0.3, 0.3);
      a->bk = ade::oracle::random_vector(16, g, -0.3, 0.3);
    }
    for (auto* e : {&params.heads.attr, &params.heads.obj, &params.heads.comp}) {
      e->b1 = ade::oracle::random_vector(16, g, 0.05, 0.3);
    }
    // Five tokens: class plus four patches.
    z = ade::oracle::random_matrix(5, 16, g, -2, 2);
    z_attr = ade::oracle::random_matrix(5, 16, g, -2, 2);
    z_obj = ade::oracle::random_matrix(5, 16, g, -2, 2);
  }

  Matrix prototypes() const { return ade::compose_all(params.heads.composer, params.heads.table, pairs); }
};

// Independent forward pass assembled from the public attention, transport and
// embedding pieces. With `fixed` set, the transport plans are held constant,
// which is the function the detached-plan gradient differentiates.
double reference_loss(const Toy& t, const ade::TripleLabels& labels, std::array<ade::TransportPlan, 4>* plans,
                      bool fixed) {
  const auto acfg = t.config.attention();
  const auto& p = t.params;
  const auto [aa1, aa2] = ade::cross_attend_swapped(t.z, t.z_attr, p.attn_attr, acfg);
  const auto [oo1, oo2] = ade::cross_attend_swapped(t.z, t.z_obj, p.attn_obj, acfg);
  const auto c = ade::self_attend(t.z, p.attn_comp, acfg);
  const ade::ConceptFeatures f{aa1.output.row(0).transpose(), aa2.output.row(0).transpose(),
                               oo1.output.row(0).transpose(), oo2.output.row(0).transpose(),
                               c.output.row(0).transpose()};
  const double ce = ade::total_ce_loss(f, {labels.attr, labels.obj, labels.comp}, p.heads, t.pairs, t.config.probe).total();

  const auto [ao1, ao2] = ade::cross_attend_swapped(t.z, t.z_obj, p.attn_attr, acfg);
  const auto [oa1, oa2] = ade::cross_attend_swapped(t.z, t.z_attr, p.attn_obj, acfg);
  const std::array<std::pair<const ade::AttentionResult*, const ade::AttentionResult*>, 4> branches{
      {{&aa1, &aa2}, {&oo1, &oo2}, {&ao1, &ao2}, {&oa1, &oa2}}};
  std::array<double, 4> lambda{};
  for (std::size_t k = 0; k < 4; ++k) {
    const auto problem = ade::attention_transport_problem(*branches[k].first, *branches[k].second);
    if (!fixed) (*plans)[k] = ade::solve_transport(problem);
    lambda[k] = ade::emd_similarity(problem, (*plans)[k]);
  }
  const double reg = lambda[2] + lambda[3] - lambda[0] - lambda[1];
  return ce + t.config.reg_weight * reg;
}

void check_full_gradient(double reg_weight, std::uint64_t seed) {
  Toy t(seed, ade::AttentionMode::cross, reg_weight);
  const ade::TripleLabels labels{1, 0, 2};
  const Matrix protos = t.prototypes();
  auto grads = ModelParams::zeros_like(t.params);
  Matrix d_protos = Matrix::Zero(protos.rows(), protos.cols());
  const auto loss = ade::triple_loss(t.config, t.params, t.z, t.z_attr, t.z_obj, labels, protos, &grads, &d_protos);
  ade::compose_all_backward(t.params.heads.composer, t.params.heads.table, t.pairs, d_protos, grads.heads.composer,
                            grads.heads.table);

  std::array<ade::TransportPlan, 4> plans;
  EXPECT_NEAR(reference_loss(t, labels, &plans, false), loss.total, 1e-10);
  EXPECT_NE(loss.reg_loss, 0.0);

  std::vector<std::pair<std::string, std::span<double>>> analytic;
  grads.visit([&](const std::string& name, std::span<double> s) { analytic.emplace_back(name, s); });
  std::size_t k = 0;
  t.params.visit([&](const std::string& name, std::span<double> s) {
    ASSERT_EQ(analytic[k].first, name);
    const auto numeric = ade::oracle::central_difference(s, [&] { return reference_loss(t, labels, &plans, true); });
    EXPECT_LT(ade::oracle::relative_error(analytic[k].second, numeric, 1e-6), 1e-3) << name << " (w=" << reg_weight << ")";
    ++k;
  });
  EXPECT_EQ(k, analytic.size());
}

TEST(Model, FullGraphGradientWithDetachedPlans) { check_full_gradient(1.0, 7); }

TEST(Model, RegularizerDominatedGradient) { check_full_gradient(25.0, 8); }

TEST(Model, ZeroRegWeightGivesCrossEntropyOnly) {
  Toy t(3, ade::AttentionMode::cross, 0.0);
  const auto l = ade::triple_loss(t.config, t.params, t.z, t.z_attr, t.z_obj, {0, 1, 1}, t.prototypes());
  EXPECT_EQ(l.reg_loss, 0.0);
  EXPECT_EQ(l.total, l.ce.total());
}

TEST(Model, DuplicatePartnersCancelTheRegularizer) {
  Toy t(4);
  const auto l = ade::triple_loss(t.config, t.params, t.z, t.z, t.z, {0, 0, 0}, t.prototypes());
  EXPECT_EQ(l.reg.attr_attr, l.reg.attr_obj);
  EXPECT_EQ(l.reg.obj_obj, l.reg.obj_attr);
  EXPECT_EQ(l.reg_loss, 0.0);
  EXPECT_GT(l.reg.attr_attr, 0.0);
}

TEST(Model, RegTermsStayWithinTotalSupply) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    Toy t(20 + s);
    const auto l = ade::triple_loss(t.config, t.params, t.z, t.z_attr, t.z_obj, {0, 0, 0}, t.prototypes());
    for (double v : {l.reg.attr_attr, l.reg.attr_obj, l.reg.obj_attr, l.reg.obj_obj}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0 + 1e-12);
    }
    EXPECT_NEAR(l.total, l.ce.total() + l.reg_loss, 1e-12);
  }
}

TEST(Model, SelfModeHasNoRegularizer) {
  Toy t(5, ade::AttentionMode::self);
  const auto l = ade::triple_loss(t.config, t.params, t.z, t.z_attr, t.z_obj, {1, 1, 3}, t.prototypes());
  EXPECT_EQ(l.reg_loss, 0.0);
  EXPECT_EQ(l.total, l.ce.total());
  // The target's attribute feature is plain self-attention on z.
  const auto acfg = t.config.attention();
  const auto expected = ade::self_attend(t.z, t.params.attn_attr, acfg).output.row(0).transpose().eval();
  const ade::ConceptFeatures f{expected,
                               ade::self_attend(t.z_attr, t.params.attn_attr, acfg).output.row(0).transpose(),
                               ade::self_attend(t.z, t.params.attn_obj, acfg).output.row(0).transpose(),
                               ade::self_attend(t.z_obj, t.params.attn_obj, acfg).output.row(0).transpose(),
                               ade::self_attend(t.z, t.params.attn_comp, acfg).output.row(0).transpose()};
  EXPECT_NEAR(ade::total_ce_loss(f, {1, 1, 3}, t.params.heads, t.pairs, t.config.probe).total(), l.total, 1e-12);
}

TEST(Model, NoneModeLeavesAttentionUntouched) {
  Toy t(6, ade::AttentionMode::none);
  auto grads = ModelParams::zeros_like(t.params);
  const Matrix protos = t.prototypes();
  Matrix d_protos = Matrix::Zero(protos.rows(), protos.cols());
  ade::triple_loss(t.config, t.params, t.z, t.z_attr, t.z_obj, {0, 1, 1}, protos, &grads, &d_protos);
  EXPECT_EQ(grads.attn_attr.wq.cwiseAbs().sum(), 0.0);
  EXPECT_EQ(grads.attn_comp.wo.cwiseAbs().sum(), 0.0);
  EXPECT_GT(grads.heads.attr.w1.cwiseAbs().sum(), 0.0);
}

TEST(Model, ClassTokenReadoutIgnoresPatchOrder) {
  for (auto mode : {ade::AttentionMode::cross, ade::AttentionMode::self, ade::AttentionMode::none}) {
    Toy t(9, mode);
    Matrix permuted = t.z;
    permuted.row(1).swap(permuted.row(4));
    permuted.row(2).swap(permuted.row(3));
    const auto a = ade::image_features(t.config, t.params, t.z);
    const auto b = ade::image_features(t.config, t.params, permuted);
    EXPECT_LT((a.attr - b.attr).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((a.comp - b.comp).cwiseAbs().maxCoeff(), 1e-12);
    Matrix patched = t.z;
    patched.row(2).setConstant(3.0);
    const auto c = ade::image_features(t.config, t.params, patched);
    if (mode == ade::AttentionMode::none) {
      EXPECT_EQ(c.attr, a.attr);
    } else {
      EXPECT_GT((c.attr - a.attr).cwiseAbs().maxCoeff(), 1e-9);
    }
  }
}

TEST(Model, InferenceFeaturesUseSelfAttention) {
  Toy t(10);
  const auto f = ade::image_features(t.config, t.params, t.z);
  const auto acfg = t.config.attention();
  EXPECT_EQ(f.obj, ade::self_attend(t.z, t.params.attn_obj, acfg).output.row(0).transpose().eval());
}

TEST(Model, ShapeAndConfigErrors) {
  Toy t(11);
  EXPECT_THROW(ade::triple_loss(t.config, t.params, t.z, t.z_attr.topRows(4), t.z_obj, {0, 0, 0}, t.prototypes()),
               ade::ShapeError);
  EXPECT_THROW(ade::image_features(t.config, t.params, Matrix::Zero(5, 8)), ade::ShapeError);
  ModelConfig bad;
  bad.reg_weight = -1.0;
  EXPECT_THROW(bad.validate(), ade::UsageError);
  EXPECT_EQ(ade::parse_attention_mode("self"), ade::AttentionMode::self);
  EXPECT_THROW(ade::parse_attention_mode("both"), ade::UsageError);
}

}  // namespace
