#include "ade/embedding.hpp"
#include "ade/errors.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace {

using ade::Matrix;
using ade::Vector;

// Scalar forward pass of one head, written without Eigen expressions.
double scalar_ce(const Vector& x, const ade::Embedder& e, const Matrix& protos, double tau, int label) {
  std::vector<double> h(static_cast<std::size_t>(e.w1.rows()));
  for (Eigen::Index r = 0; r < e.w1.rows(); ++r) {
    double s = e.b1[r];
    for (Eigen::Index c = 0; c < e.w1.cols(); ++c) s += e.w1(r, c) * x[c];
    h[static_cast<std::size_t>(r)] = s > 0 ? s : 0;
  }
  std::vector<double> y(static_cast<std::size_t>(e.w2.rows()));
  double ny = 0;
  for (Eigen::Index r = 0; r < e.w2.rows(); ++r) {
    double s = e.b2[r];
    for (Eigen::Index c = 0; c < e.w2.cols(); ++c) s += e.w2(r, c) * h[static_cast<std::size_t>(c)];
    y[static_cast<std::size_t>(r)] = s;
    ny += s * s;
  }
  std::vector<double> logit(static_cast<std::size_t>(protos.rows()));
  for (Eigen::Index z = 0; z < protos.rows(); ++z) {
    double dot = 0, np = 0;
    for (Eigen::Index c = 0; c < protos.cols(); ++c) {
      dot += protos(z, c) * y[static_cast<std::size_t>(c)];
      np += protos(z, c) * protos(z, c);
    }
    logit[static_cast<std::size_t>(z)] = dot / std::sqrt(ny * np) / tau;
  }
  double z = 0;
  for (double l : logit) z += std::exp(l);
  return std::log(z) - logit[static_cast<std::size_t>(label)];
}

struct Toy {
  ade::ConceptVocabulary vocab{{"red", "blue"}, {"bus", "wall"}};
  std::vector<ade::Pair> pairs{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
  ade::ConceptHeads heads;
  ade::ProbeConfig probe{0.5};

  explicit Toy(std::uint64_t seed, int d = 6, int hidden = 6, int dw = 4) {
    ade::Rng rng(seed);
    heads.attr = ade::Embedder::random(d, hidden, dw, rng);
    heads.obj = ade::Embedder::random(d, hidden, dw, rng);
    heads.comp = ade::Embedder::random(d, hidden, dw, rng);
    heads.composer = ade::Composer::random(dw, rng);
    heads.table = ade::EmbeddingTable::random(vocab, dw, rng);
    // Nonzero biases keep the rectifier away from exact kinks.
    std::mt19937_64 g(seed);
    for (auto* e : {&heads.attr, &heads.obj, &heads.comp}) e->b1 = ade::oracle::random_vector(hidden, g, 0.05, 0.3);
    heads.composer.bias = ade::oracle::random_vector(dw, g);
  }
};

ade::ConceptFeatures random_features(std::mt19937_64& rng, int d) {
  return {ade::oracle::random_vector(d, rng), ade::oracle::random_vector(d, rng), ade::oracle::random_vector(d, rng),
          ade::oracle::random_vector(d, rng), ade::oracle::random_vector(d, rng)};
}

TEST(Compose, ZeroWeightsGiveZero) {
  ade::Composer c{Matrix::Zero(3, 6), Vector::Zero(3)};
  EXPECT_EQ(ade::compose(Vector::Ones(3), Vector::Constant(3, 2.0), c), Vector::Zero(3));
}

TEST(Compose, HomogeneousWithoutBias) {
  ade::Rng rng(1);
  auto c = ade::Composer::random(4, rng);
  c.bias.setZero();
  std::mt19937_64 g(2);
  const Vector u = ade::oracle::random_vector(4, g), v = ade::oracle::random_vector(4, g);
  EXPECT_LT((ade::compose(2.5 * u, 2.5 * v, c) - 2.5 * ade::compose(u, v, c)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Compose, AttributeSelectorReturnsAttribute) {
  ade::Composer c{Matrix::Zero(3, 6), Vector::Zero(3)};
  c.weight.leftCols(3).setIdentity();
  Vector u(3), v(3);
  u << 1, -2, 3;
  v << 7, 8, 9;
  EXPECT_EQ(ade::compose(u, v, c), u);
  EXPECT_THROW(ade::compose(u, Vector::Zero(2), c), ade::ShapeError);
}

TEST(Probe, SingletonIsCertain) {
  const auto p = ade::cosine_probe(Vector::Ones(3), Matrix::Ones(1, 3), {0.05});
  EXPECT_DOUBLE_EQ(p.probabilities[0], 1.0);
}

TEST(Probe, EquidistantPrototypesSplitEvenly) {
  Matrix protos(2, 2);
  protos << 1, 0, 0, 1;
  const auto p = ade::cosine_probe(Vector::Ones(2), protos, {0.05});
  EXPECT_NEAR(p.probabilities[0], 0.5, 1e-15);
  EXPECT_NEAR(p.probabilities[1], 0.5, 1e-15);
}

TEST(Probe, HandSetCosinesMatchScalarSoftmax) {
  const double cosines[3] = {0.9, 0.1, -0.5};
  Matrix protos(3, 2);
  for (int z = 0; z < 3; ++z) protos.row(z) << cosines[z] * 3.0, std::sqrt(1 - cosines[z] * cosines[z]) * 3.0;
  Vector e(2);
  e << 0.4, 0.0;
  const auto p = ade::cosine_probe(e, protos, {0.1});
  const double e0 = std::exp(9.0), e1 = std::exp(1.0), e2 = std::exp(-5.0);
  const double expected[3] = {e0 / (e0 + e1 + e2), e1 / (e0 + e1 + e2), e2 / (e0 + e1 + e2)};
  for (int z = 0; z < 3; ++z) EXPECT_NEAR(p.probabilities[z], expected[z], 1e-12);
  EXPECT_NEAR(ade::cross_entropy(std::span<const double>(p.probabilities.data(), 3), 1), -std::log(expected[1]), 1e-12);
  EXPECT_NEAR(ade::cross_entropy_from_logits(p.logits, 2), -std::log(expected[2]), 1e-9);
}

TEST(Probe, TemperatureSharpensAndScaleIsIgnored) {
  std::mt19937_64 g(3);
  const Matrix protos = ade::oracle::random_matrix(5, 4, g);
  const Vector e = ade::oracle::random_vector(4, g);
  double prev = 0.0;
  for (double tau : {1.0, 0.5, 0.1, 0.05}) {
    const auto p = ade::cosine_probe(e, protos, {tau});
    EXPECT_NEAR(p.probabilities.sum(), 1.0, 1e-6);
    EXPECT_GT(p.probabilities.minCoeff(), 0.0);
    EXPECT_GT(p.probabilities.maxCoeff(), prev);
    prev = p.probabilities.maxCoeff();
  }
  const auto a = ade::cosine_probe(e, protos, {0.05});
  const auto b = ade::cosine_probe(e, 7.0 * protos, {0.05});
  EXPECT_LT((a.probabilities - b.probabilities).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Probe, DegenerateInputsAreReported) {
  EXPECT_THROW(ade::cosine_probe(Vector::Zero(2), Matrix::Ones(2, 2), {0.05}), ade::NumericError);
  EXPECT_THROW(ade::cosine_probe(Vector::Ones(2), Matrix::Zero(2, 2), {0.05}), ade::NumericError);
  EXPECT_THROW(ade::cosine_probe(Vector::Ones(2), Matrix::Ones(2, 2), {0.0}), ade::UsageError);
  EXPECT_THROW(ade::cosine_probe(Vector::Ones(2), Matrix::Ones(0, 2), {0.05}), ade::ShapeError);
}

TEST(CrossEntropy, EdgeValues) {
  const std::vector<double> one_hot{0.0, 1.0, 0.0};
  EXPECT_EQ(ade::cross_entropy(one_hot, 1), 0.0);
  EXPECT_TRUE(std::isfinite(ade::cross_entropy(one_hot, 0)));
  const std::vector<double> uniform(4, 0.25);
  EXPECT_NEAR(ade::cross_entropy(uniform, 2), std::log(4.0), 1e-15);
  Vector huge(2);
  huge << 2000.0, -2000.0;
  EXPECT_NEAR(ade::cross_entropy_from_logits(huge, 1), 4000.0, 1e-9);
  EXPECT_THROW(ade::cross_entropy(uniform, 4), ade::ShapeError);
}

TEST(TotalCe, IsSumOfFiveIndependentTerms) {
  Toy toy(5);
  std::mt19937_64 g(6);
  const auto f = random_features(g, 6);
  const ade::CeLabels labels{1, 0, 2};
  const auto losses = ade::total_ce_loss(f, labels, toy.heads, toy.pairs, toy.probe);
  const Matrix comp = ade::compose_all(toy.heads.composer, toy.heads.table, toy.pairs);
  const double tau = toy.probe.temperature;
  const auto& t = toy.heads.table;
  EXPECT_NEAR(losses.attr, scalar_ce(f.attr, toy.heads.attr, t.attributes, tau, 1), 1e-12);
  EXPECT_NEAR(losses.attr_prime, scalar_ce(f.attr_prime, toy.heads.attr, t.attributes, tau, 1), 1e-12);
  EXPECT_NEAR(losses.obj, scalar_ce(f.obj, toy.heads.obj, t.objects, tau, 0), 1e-12);
  EXPECT_NEAR(losses.obj_prime, scalar_ce(f.obj_prime, toy.heads.obj, t.objects, tau, 0), 1e-12);
  EXPECT_NEAR(losses.comp, scalar_ce(f.comp, toy.heads.comp, comp, tau, 2), 1e-12);
  EXPECT_NEAR(losses.total(), losses.attr + losses.attr_prime + losses.obj + losses.obj_prime + losses.comp, 0.0);
}

TEST(TotalCe, ToyBatchMatchesScriptedForwardPass) {
  Toy toy(9);
  std::mt19937_64 g(10);
  double total = 0.0, expected = 0.0;
  for (const auto& pair : toy.pairs) {
    const auto f = random_features(g, 6);
    const int comp = pair.attr * 2 + pair.obj;
    total += ade::total_ce_loss(f, {pair.attr, pair.obj, comp}, toy.heads, toy.pairs, toy.probe).total();
    // psi by hand: weight * [a; o] + bias.
    Matrix protos(4, 4);
    for (int c = 0; c < 4; ++c) {
      const auto& pc = toy.pairs[static_cast<std::size_t>(c)];
      for (int r = 0; r < 4; ++r) {
        double s = toy.heads.composer.bias[r];
        for (int k = 0; k < 4; ++k) {
          s += toy.heads.composer.weight(r, k) * toy.heads.table.attributes(pc.attr, k) +
               toy.heads.composer.weight(r, 4 + k) * toy.heads.table.objects(pc.obj, k);
        }
        protos(c, r) = s;
      }
    }
    const double tau = toy.probe.temperature;
    expected += scalar_ce(f.attr, toy.heads.attr, toy.heads.table.attributes, tau, pair.attr) +
                scalar_ce(f.attr_prime, toy.heads.attr, toy.heads.table.attributes, tau, pair.attr) +
                scalar_ce(f.obj, toy.heads.obj, toy.heads.table.objects, tau, pair.obj) +
                scalar_ce(f.obj_prime, toy.heads.obj, toy.heads.table.objects, tau, pair.obj) +
                scalar_ce(f.comp, toy.heads.comp, protos, tau, comp);
  }
  EXPECT_NEAR(total, expected, 1e-10);
}

TEST(TotalCe, PerfectPredictionsApproachZero) {
  // Each prototype is a scaled copy of the embedded feature; a tiny
  // temperature drives every term to zero.
  ade::Embedder identity{Matrix::Identity(2, 2), Vector::Zero(2), Matrix::Identity(2, 2), Vector::Zero(2)};
  ade::ConceptHeads heads{identity, identity, identity, {Matrix::Zero(2, 4), Vector::Zero(2)}, {}};
  heads.composer.weight.leftCols(2).setIdentity();
  heads.table.attributes = Matrix::Identity(2, 2);
  heads.table.objects = Matrix::Identity(2, 2);
  const std::vector<ade::Pair> pairs{{0, 0}, {1, 1}};
  ade::ConceptFeatures f{Vector::Unit(2, 0), Vector::Unit(2, 0), Vector::Unit(2, 1), Vector::Unit(2, 1),
                         Vector::Unit(2, 0)};
  const auto l = ade::total_ce_loss(f, {0, 1, 0}, heads, pairs, {1e-3});
  EXPECT_LT(l.total(), 1e-12);
}

TEST(TotalCe, GradientsMatchFiniteDifferences) {
  Toy toy(21);
  std::mt19937_64 g(22);
  auto f = random_features(g, 6);
  const ade::CeLabels labels{0, 1, 3};
  auto grads = ade::ConceptHeads::zeros_like(toy.heads);
  ade::ConceptFeatures df;
  ade::total_ce_loss(f, labels, toy.heads, toy.pairs, toy.probe, &grads, &df, 1.0);
  auto loss = [&]() { return ade::total_ce_loss(f, labels, toy.heads, toy.pairs, toy.probe).total(); };

  std::vector<std::pair<std::string, std::span<double>>> analytic;
  grads.visit([&](const std::string& name, std::span<double> s) { analytic.emplace_back(name, s); });
  std::size_t k = 0;
  toy.heads.visit([&](const std::string& name, std::span<double> s) {
    const auto numeric = ade::oracle::central_difference(s, loss);
    EXPECT_LT(ade::oracle::relative_error(analytic[k].second, numeric), 1e-5) << name;
    ++k;
  });
  EXPECT_EQ(k, analytic.size());
  for (auto member : {&ade::ConceptFeatures::attr, &ade::ConceptFeatures::obj_prime, &ade::ConceptFeatures::comp}) {
    const auto numeric = ade::oracle::central_difference(ade::as_span(f.*member), loss);
    EXPECT_LT(ade::oracle::relative_error(ade::as_span(df.*member), numeric), 1e-5);
  }
}

TEST(TotalCe, ScaleMultipliesGradients) {
  Toy toy(4);
  std::mt19937_64 g(5);
  const auto f = random_features(g, 6);
  auto g1 = ade::ConceptHeads::zeros_like(toy.heads);
  auto g3 = ade::ConceptHeads::zeros_like(toy.heads);
  ade::ConceptFeatures d1, d3;
  ade::total_ce_loss(f, {1, 1, 0}, toy.heads, toy.pairs, toy.probe, &g1, &d1, 1.0);
  ade::total_ce_loss(f, {1, 1, 0}, toy.heads, toy.pairs, toy.probe, &g3, &d3, 3.0);
  EXPECT_LT((3.0 * g1.composer.weight - g3.composer.weight).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((3.0 * d1.comp - d3.comp).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(TotalCe, FrozenTableIsSkippedByVisit) {
  Toy toy(1);
  toy.heads.table.trainable = false;
  int tables = 0;
  toy.heads.visit([&](const std::string& name, std::span<double>) { tables += name.rfind("prototypes.", 0) == 0; });
  EXPECT_EQ(tables, 0);
  auto grads = ade::ConceptHeads::zeros_like(toy.heads);
  ade::ConceptFeatures df;
  std::mt19937_64 g(1);
  ade::total_ce_loss(random_features(g, 6), {0, 0, 0}, toy.heads, toy.pairs, toy.probe, &grads, &df, 1.0);
  EXPECT_GT(grads.composer.weight.cwiseAbs().sum(), 0.0);
}

TEST(WordVectors, AveragesMultiWordNamesAndFallsBack) {
  const auto dir = std::filesystem::temp_directory_path() / "ade_wordvec_test";
  std::filesystem::create_directories(dir);
  const auto path = dir / "vectors.txt";
  {
    std::ofstream out(path);
    out << "dark 1 0 0\nred 0 1 0\nbus 0 0 2\nunused 9 9 9\n";
  }
  const ade::ConceptVocabulary vocab{{"dark_red", "blue"}, {"bus"}};
  ade::Rng rng(3);
  const auto t = ade::load_word_vectors(path, vocab, 3, rng);
  EXPECT_EQ(t.attributes.row(0), (Eigen::RowVector3d(0.5, 0.5, 0.0)));
  EXPECT_EQ(t.objects.row(0), (Eigen::RowVector3d(0.0, 0.0, 2.0)));
  EXPECT_GT(t.attributes.row(1).norm(), 0.0);
  EXPECT_LT(t.attributes.row(1).cwiseAbs().maxCoeff(), 1.0);
  ade::Rng rng2(3);
  EXPECT_EQ(ade::load_word_vectors(path, vocab, 3, rng2).attributes, t.attributes);
  EXPECT_THROW(ade::load_word_vectors(path, vocab, 2, rng), ade::DataError);
  EXPECT_THROW(ade::load_word_vectors(dir / "missing.txt", vocab, 3, rng), ade::DataError);
  std::filesystem::remove_all(dir);
}

}  // namespace
