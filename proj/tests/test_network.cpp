#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "masklab/envs.hpp"
#include "masklab/errors.hpp"
#include "masklab/network.hpp"

using namespace masklab;

namespace {

Matrix random_matrix(int r, int c, std::mt19937_64& gen, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = n(gen);
  return m;
}

// Linear functional of every network output; its gradient w.r.t. the outputs
// is exactly the coefficient matrices.
double probe_loss(const MlpActorCritic& net, const Matrix& obs, const OutputGrads& g) {
  const ForwardCache c = net.forward(obs);
  double v = (c.logits.array() * g.logits.array()).sum() + c.values.dot(g.values);
  if (g.cls_logits.size() > 0) v += (c.cls_logits.array() * g.cls_logits.array()).sum();
  return v;
}

// Textbook two-pass Pearson, independent of the library version.
double textbook_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(MaskedSoftmax, UniformAllValid) {
  const PolicyDist d = masked_softmax(Matrix::Zero(1, 4), Matrix::Ones(1, 4));
  for (int a = 0; a < 4; ++a) EXPECT_DOUBLE_EQ(d.probs(0, a), 0.25);
}

TEST(MaskedSoftmax, HalfMaskedRenormalizes) {
  Matrix mask(1, 4);
  mask << 1, 1, 0, 0;
  const PolicyDist d = masked_softmax(Matrix::Zero(1, 4), mask);
  EXPECT_DOUBLE_EQ(d.probs(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(d.probs(0, 1), 0.5);
  EXPECT_EQ(d.probs(0, 2), 0.0);
  EXPECT_EQ(d.probs(0, 3), 0.0);
  EXPECT_TRUE(std::isinf(d.log_probs(0, 2)) && d.log_probs(0, 2) < 0);
}

TEST(MaskedSoftmax, AllInvalidRowIsInputError) {
  EXPECT_THROW(masked_softmax(Matrix::Zero(1, 3), Matrix::Zero(1, 3)), InputError);
}

TEST(MaskedSoftmax, SoftMaskLeavesTinyPositiveMass) {
  Matrix mask(1, 2);
  mask << 1, 0;
  const PolicyDist d = soft_masked_softmax(Matrix::Zero(1, 2), mask);
  const double expected = std::exp(-20.0) / (1.0 + std::exp(-20.0));
  EXPECT_NEAR(d.probs(0, 1) / expected, 1.0, 1e-12);
  EXPECT_NEAR(d.probs(0, 1), 2.06e-9, 1e-11);
  EXPECT_GT(d.probs(0, 1), 0.0);
}

TEST(MaskedSoftmax, RowsSumToOneInEveryMode) {
  std::mt19937_64 gen(3);
  const Matrix z = random_matrix(20, 7, gen, 10.0);
  Matrix mask = (random_matrix(20, 7, gen).array() > 0).cast<double>();
  for (int i = 0; i < 20; ++i) mask(i, i % 7) = 1.0;
  for (const PolicyDist& d : {masked_softmax(z, mask), soft_masked_softmax(z, mask), unmasked_softmax(z)}) {
    for (int i = 0; i < 20; ++i) EXPECT_NEAR(d.probs.row(i).sum(), 1.0, 1e-12);
  }
}

TEST(PredictedMask, ThresholdAndAllBelowFallback) {
  Matrix p(2, 3);
  p << 0.9, 0.2, 0.6, 0.1, 0.3, 0.4;
  std::vector<bool> fallback;
  const Matrix m = predicted_mask(p, 0.5, &fallback);
  EXPECT_EQ(m.row(0), (Eigen::RowVector3d(1, 0, 1)));
  EXPECT_EQ(m.row(1), (Eigen::RowVector3d(1, 1, 1)));
  EXPECT_FALSE(fallback[0]);
  EXPECT_TRUE(fallback[1]);
}

TEST(Network, PolicyHeadStartsUniform) {
  const MlpActorCritic net({10, 5, 16, 2, true}, 1);
  std::mt19937_64 gen(2);
  const ForwardCache c = net.forward(random_matrix(4, 10, gen));
  const PolicyDist d = unmasked_softmax(c.logits);
  EXPECT_LT((d.probs.array() - 0.2).abs().maxCoeff(), 1e-15);
  ASSERT_EQ(c.cls_logits.cols(), 5);
}

TEST(Network, FlatParameterRoundTrip) {
  const MlpActorCritic a({6, 3, 8, 2, true}, 11);
  const MlpActorCritic b(a.config(), a.params());
  EXPECT_EQ(a.params(), b.params());
  int total = 0;
  for (const auto& s : a.segments()) total += s.size();
  EXPECT_EQ(total, a.num_params());
}

TEST(Network, ZeroUpstreamGivesZeroGradient) {
  const MlpActorCritic net({6, 3, 8, 2, true}, 4);
  std::mt19937_64 gen(5);
  const ForwardCache c = net.forward(random_matrix(3, 6, gen));
  OutputGrads g{Matrix::Zero(3, 3), Vector::Zero(3), Matrix::Zero(3, 3)};
  EXPECT_EQ(net.backward(c, g).cwiseAbs().maxCoeff(), 0.0);
}

// One hidden layer, squared loss on the value output: the value-head weight
// gradient is 2 (v - y) h for the single sample, written out by hand.
TEST(Network, SingleLayerQuadraticLossClosedForm) {
  MlpActorCritic net({4, 2, 5, 1, false}, 9);
  std::mt19937_64 gen(10);
  const Matrix x = random_matrix(1, 4, gen);
  const ForwardCache c = net.forward(x);
  const double y = 0.3;
  OutputGrads g;
  g.values = Vector::Constant(1, 2.0 * (c.values(0) - y));
  const Vector grad = net.backward(c, g);
  const Segment& vw = net.segment("value.W");
  const Vector h = c.features().row(0).transpose();
  for (int j = 0; j < 5; ++j) EXPECT_NEAR(grad(vw.offset + j), 2.0 * (c.values(0) - y) * h(j), 1e-14);
  EXPECT_NEAR(grad(net.segment("value.b").offset), 2.0 * (c.values(0) - y), 1e-14);
}

TEST(Network, BackwardMatchesCentralDifferences) {
  for (int trial = 0; trial < 5; ++trial) {
    std::mt19937_64 gen(100 + trial);
    MlpActorCritic net({7, 4, 12, 2, true}, 200 + trial);
    net.params() += random_matrix(net.num_params(), 1, gen, 0.1);
    const Matrix obs = random_matrix(5, 7, gen);
    OutputGrads g{random_matrix(5, 4, gen), random_matrix(5, 1, gen), random_matrix(5, 4, gen)};
    const Vector analytic = net.backward(net.forward(obs), g);
    Vector fd(net.num_params());
    const double eps = 1e-5;
    for (int i = 0; i < net.num_params(); ++i) {
      MlpActorCritic p = net, m = net;
      p.params()(i) += eps;
      m.params()(i) -= eps;
      fd(i) = (probe_loss(p, obs, g) - probe_loss(m, obs, g)) / (2 * eps);
    }
    EXPECT_LT((analytic - fd).norm() / std::max(fd.norm(), 1e-12), 1e-5);
  }
}

TEST(Network, MaskedOutActionRowGetsNoPolicyGradient) {
  MlpActorCritic net({6, 4, 8, 2, true}, 3);
  std::mt19937_64 gen(4);
  net.params() += random_matrix(net.num_params(), 1, gen, 0.1);
  const Matrix obs = random_matrix(8, 6, gen);
  Matrix mask = Matrix::Ones(8, 4);
  mask.col(2).setZero();
  const ForwardCache c = net.forward(obs);
  const PolicyDist d = masked_softmax(c.logits, mask);
  std::vector<int> actions{0, 1, 3, 0, 1, 3, 0, 1};
  const Matrix gl = log_prob_logit_grad(d, actions, random_matrix(8, 1, gen));
  EXPECT_EQ(gl.col(2).cwiseAbs().maxCoeff(), 0.0);
  const Vector grad = net.backward(c, {gl, Vector(), Matrix()});
  const Segment& pw = net.segment("policy.W");
  // Column-major n x d block: row 2 entries sit at offset + 2 + k * n.
  for (int k = 0; k < pw.cols; ++k) EXPECT_EQ(grad(pw.offset + 2 + k * pw.rows), 0.0);
  EXPECT_EQ(grad(net.segment("policy.b").offset + 2), 0.0);
}

TEST(Network, PredictedMaskEqualsOracleWhenThresholdReproducesIt) {
  const MlpActorCritic net({6, 4, 8, 2, true}, 8);
  std::mt19937_64 gen(9);
  ForwardCache c = net.forward(random_matrix(5, 6, gen));
  Matrix oracle = Matrix::Ones(5, 4);
  oracle(0, 1) = oracle(3, 2) = 0.0;
  c.validity_probs = 0.2 + 0.6 * oracle.array();
  const PolicyDist a = policy_distribution(c, PolicyMode::kPredictedMasked, oracle);
  const PolicyDist b = policy_distribution(c, PolicyMode::kOracleMasked, oracle);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(Pearson, IdenticalAndOppositeVectors) {
  Vector v(4);
  v << 1, -2, 0.5, 0.5;
  EXPECT_NEAR(*pearson(v, v), 1.0, 1e-15);
  EXPECT_NEAR(*pearson(v, -v), -1.0, 1e-15);
  EXPECT_FALSE(pearson(v, Vector::Constant(4, 2.0)).has_value());
}

TEST(FeatureCorrelation, MatchesTextbookOnDoorCorridor) {
  const TabularEnv t = to_tabular(DoorCorridor(DoorConfig{}), 0.99);
  const MlpActorCritic net({static_cast<int>(t.observations.cols()), 6, 64, 2, true}, 21);
  const CorrelationProbe p = feature_correlation(net, t.observations, t.masks, DoorCorridor::kEast);
  ASSERT_TRUE(p.correlation.has_value());
  const Matrix phi = net.forward(t.observations).features();
  std::vector<double> mv(64, 0.0), mi(64, 0.0);
  int nv = 0, ni = 0;
  for (int i = 0; i < phi.rows(); ++i) {
    const bool valid = t.masks[i][DoorCorridor::kEast];
    (valid ? nv : ni)++;
    for (int j = 0; j < 64; ++j) (valid ? mv : mi)[j] += phi(i, j);
  }
  for (int j = 0; j < 64; ++j) {
    mv[j] /= nv;
    mi[j] /= ni;
  }
  EXPECT_EQ(p.num_valid, nv);
  EXPECT_EQ(p.num_invalid, ni);
  EXPECT_NEAR(*p.correlation, textbook_pearson(mv, mi), 1e-12);
  EXPECT_LE(std::abs(*p.correlation), 1.0);
}

TEST(FeatureCorrelation, DegenerateGroupIsMissing) {
  const TabularEnv t = to_tabular(DoorCorridor(DoorConfig{}), 0.99);
  const MlpActorCritic net({static_cast<int>(t.observations.cols()), 6, 16, 2, true}, 1);
  // North is invalid everywhere.
  const CorrelationProbe p = feature_correlation(net, t.observations, t.masks, DoorCorridor::kNorth);
  EXPECT_FALSE(p.correlation.has_value());
  EXPECT_EQ(p.num_valid, 0);
}

TEST(Adam, FirstTwoStepsMatchHandComputation) {
  Vector x(2);
  x << 1.0, -2.0;
  Adam opt(2, 0.1, 0.9, 0.999, 1e-5);
  Vector g1(2), g2(2);
  g1 << 0.5, -1.0;
  g2 << 0.1, 0.3;
  Vector expect = x;
  Vector m = Vector::Zero(2), v = Vector::Zero(2);
  int t = 0;
  for (const Vector& g : {g1, g2}) {
    ++t;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g.cwiseProduct(g);
    const Vector mh = m / (1 - std::pow(0.9, t));
    const Vector vh = v / (1 - std::pow(0.999, t));
    expect.array() -= 0.1 * mh.array() / (vh.array().sqrt() + 1e-5);
    opt.step(x, g);
    EXPECT_LT((x - expect).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(ClipGradNorm, ScalesOnlyWhenAbove) {
  Vector g(2);
  g << 3.0, 4.0;
  EXPECT_DOUBLE_EQ(clip_grad_norm(g, 1.0), 5.0);
  EXPECT_NEAR(g.norm(), 1.0, 1e-15);
  Vector h(2);
  h << 0.3, 0.4;
  clip_grad_norm(h, 1.0);
  EXPECT_DOUBLE_EQ(h(0), 0.3);
}

TEST(Snapshot, RoundTripPreservesParametersAndMetadata) {
  const MlpActorCritic net({5, 3, 8, 2, true}, 77);
  const auto path = std::filesystem::temp_directory_path() / "masklab_snapshot_test.bin";
  save_snapshot(path.string(), net, R"({"note":"x"})");
  const Snapshot s = load_snapshot(path.string());
  EXPECT_EQ(s.net.params(), net.params());
  EXPECT_EQ(s.net.config().hidden, 8);
  EXPECT_EQ(s.metadata_json, R"({"note":"x"})");
  std::filesystem::remove(path);
}

TEST(Snapshot, CorruptFileRejected) {
  const auto path = std::filesystem::temp_directory_path() / "masklab_snapshot_bad.bin";
  {
    std::ofstream out(path);
    out << "not a snapshot\n";
  }
  EXPECT_ANY_THROW(load_snapshot(path.string()));
  std::filesystem::remove(path);
}
