#include "masklab/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <json.hpp>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

using Rng64 = std::mt19937_64;

double unit(Rng64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

void fill_glorot(Eigen::Map<Matrix> w, Rng64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = (2.0 * unit(rng) - 1.0) * limit;
  }
}

constexpr const char* kSnapshotMagic = "MASKLAB-SNAPSHOT 1";

}  // namespace

MlpActorCritic::MlpActorCritic(NetConfig config, std::uint64_t seed) : config_(config) {
  build_segments();
  params_ = Vector::Zero(segments_.empty() ? 0 : segments_.back().offset + segments_.back().size());
  Rng64 rng(seed);
  for (int l = 0; l < config_.num_layers; ++l) fill_glorot(block("enc" + std::to_string(l) + ".W"), rng);
  fill_glorot(block("value.W"), rng);
  if (config_.classification_heads) fill_glorot(block("cls.W"), rng);
  // policy.W and every bias stay exactly zero: pi_0 = 1/n.
}

MlpActorCritic::MlpActorCritic(NetConfig config, Vector params) : config_(config), params_(std::move(params)) {
  build_segments();
  const int expected = segments_.back().offset + segments_.back().size();
  if (params_.size() != expected) throw InputError("parameter vector size does not match network config");
}

void MlpActorCritic::build_segments() {
  if (config_.obs_dim < 1 || config_.num_actions < 1 || config_.hidden < 1 || config_.num_layers < 1) {
    throw InputError("network dimensions must be positive");
  }
  segments_.clear();
  int offset = 0;
  const auto add = [&](const std::string& name, int rows, int cols) {
    segments_.push_back({name, offset, rows, cols});
    offset += rows * cols;
  };
  int in = config_.obs_dim;
  for (int l = 0; l < config_.num_layers; ++l) {
    add("enc" + std::to_string(l) + ".W", config_.hidden, in);
    add("enc" + std::to_string(l) + ".b", config_.hidden, 1);
    in = config_.hidden;
  }
  add("policy.W", config_.num_actions, in);
  add("policy.b", config_.num_actions, 1);
  add("value.W", 1, in);
  add("value.b", 1, 1);
  if (config_.classification_heads) {
    add("cls.W", config_.num_actions, in);
    add("cls.b", config_.num_actions, 1);
  }
}

const Segment& MlpActorCritic::segment(const std::string& name) const {
  for (const auto& s : segments_) {
    if (s.name == name) return s;
  }
  throw InputError("unknown parameter segment: " + name);
}

Eigen::Map<const Matrix> MlpActorCritic::block(const std::string& name) const {
  const Segment& s = segment(name);
  return Eigen::Map<const Matrix>(params_.data() + s.offset, s.rows, s.cols);
}

Eigen::Map<Matrix> MlpActorCritic::block(const std::string& name) {
  const Segment& s = segment(name);
  return Eigen::Map<Matrix>(params_.data() + s.offset, s.rows, s.cols);
}

ForwardCache MlpActorCritic::forward(const Matrix& obs) const {
  if (obs.cols() != config_.obs_dim) throw InputError("observation width does not match network");
  ForwardCache c;
  c.input = obs;
  const Matrix* x = &c.input;
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "enc" + std::to_string(l);
    Matrix pre = (*x) * block(p + ".W").transpose();
    pre.rowwise() += block(p + ".b").col(0).transpose();
    c.hidden.push_back(pre.array().tanh().matrix());
    x = &c.hidden.back();
  }
  const Matrix& phi = c.features();
  c.logits = phi * block("policy.W").transpose();
  c.logits.rowwise() += block("policy.b").col(0).transpose();
  c.values = phi * block("value.W").row(0).transpose();
  c.values.array() += block("value.b")(0, 0);
  if (config_.classification_heads) {
    c.cls_logits = phi * block("cls.W").transpose();
    c.cls_logits.rowwise() += block("cls.b").col(0).transpose();
    c.validity_probs = (1.0 / (1.0 + (-c.cls_logits.array()).exp())).matrix();
  }
  return c;
}

Vector MlpActorCritic::backward(const ForwardCache& cache, const OutputGrads& grads) const {
  Vector g = Vector::Zero(params_.size());
  const auto gblock = [&](const std::string& name) {
    const Segment& s = segment(name);
    return Eigen::Map<Matrix>(g.data() + s.offset, s.rows, s.cols);
  };
  const Matrix& phi = cache.features();
  const Eigen::Index B = phi.rows();
  Matrix dphi = Matrix::Zero(B, phi.cols());
  if (grads.logits.size() > 0) {
    gblock("policy.W") = grads.logits.transpose() * phi;
    gblock("policy.b") = grads.logits.colwise().sum().transpose();
    dphi += grads.logits * block("policy.W");
  }
  if (grads.values.size() > 0) {
    gblock("value.W") = grads.values.transpose() * phi;
    gblock("value.b")(0, 0) = grads.values.sum();
    dphi += grads.values * block("value.W");
  }
  if (grads.cls_logits.size() > 0) {
    if (!config_.classification_heads) throw InputError("network has no classification heads");
    gblock("cls.W") = grads.cls_logits.transpose() * phi;
    gblock("cls.b") = grads.cls_logits.colwise().sum().transpose();
    dphi += grads.cls_logits * block("cls.W");
  }
  Matrix delta = dphi;
  for (int l = config_.num_layers - 1; l >= 0; --l) {
    const std::string p = "enc" + std::to_string(l);
    const Matrix& h = cache.hidden[static_cast<std::size_t>(l)];
    delta = delta.cwiseProduct((1.0 - h.array().square()).matrix());
    const Matrix& below = l == 0 ? cache.input : cache.hidden[static_cast<std::size_t>(l - 1)];
    gblock(p + ".W") = delta.transpose() * below;
    gblock(p + ".b") = delta.colwise().sum().transpose();
    if (l > 0) delta = delta * block(p + ".W");
  }
  return g;
}

Matrix mask_matrix(const std::vector<ValidityMask>& masks) {
  if (masks.empty()) return Matrix();
  Matrix m(static_cast<Eigen::Index>(masks.size()), masks.front().size());
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (int a = 0; a < masks[i].size(); ++a) m(static_cast<Eigen::Index>(i), a) = masks[i][a] ? 1.0 : 0.0;
  }
  return m;
}

Matrix predicted_mask(const Matrix& validity_probs, double tau, std::vector<bool>* fallback) {
  Matrix m = (validity_probs.array() > tau).cast<double>().matrix();
  if (fallback) fallback->assign(static_cast<std::size_t>(m.rows()), false);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (m.row(i).sum() == 0.0) {
      m.row(i).setOnes();
      if (fallback) (*fallback)[static_cast<std::size_t>(i)] = true;
    }
  }
  return m;
}

PolicyDist masked_softmax(const Matrix& logits, const Matrix& mask) {
  if (mask.rows() != logits.rows() || mask.cols() != logits.cols()) throw InputError("mask shape mismatch");
  PolicyDist d;
  d.support = mask;
  d.log_probs = Matrix::Constant(logits.rows(), logits.cols(), -std::numeric_limits<double>::infinity());
  d.probs = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < logits.cols(); ++a) {
      if (mask(i, a) > 0.0) m = std::max(m, logits(i, a));
    }
    if (!std::isfinite(m)) throw InputError("all actions masked in a row");
    double z = 0.0;
    for (Eigen::Index a = 0; a < logits.cols(); ++a) {
      if (mask(i, a) > 0.0) z += std::exp(logits(i, a) - m);
    }
    const double lz = m + std::log(z);
    for (Eigen::Index a = 0; a < logits.cols(); ++a) {
      if (mask(i, a) > 0.0) {
        d.log_probs(i, a) = logits(i, a) - lz;
        d.probs(i, a) = std::exp(d.log_probs(i, a));
      }
    }
  }
  return d;
}

PolicyDist soft_masked_softmax(const Matrix& logits, const Matrix& mask, double soft_value) {
  const Matrix shifted = logits + (1.0 - mask.array()).matrix() * soft_value;
  PolicyDist d = masked_softmax(shifted, Matrix::Ones(logits.rows(), logits.cols()));
  return d;
}

PolicyDist unmasked_softmax(const Matrix& logits) {
  return masked_softmax(logits, Matrix::Ones(logits.rows(), logits.cols()));
}

PolicyDist policy_distribution(const ForwardCache& cache, PolicyMode mode, const Matrix& oracle,
                               double tau, std::vector<bool>* fallback) {
  switch (mode) {
    case PolicyMode::kOracleMasked:
      return masked_softmax(cache.logits, oracle);
    case PolicyMode::kSoftMasked:
      return soft_masked_softmax(cache.logits, oracle);
    case PolicyMode::kUnmasked:
      return unmasked_softmax(cache.logits);
    case PolicyMode::kPredictedMasked:
      if (cache.validity_probs.size() == 0) {
        if (fallback) fallback->assign(static_cast<std::size_t>(cache.logits.rows()), true);
        return unmasked_softmax(cache.logits);
      }
      return masked_softmax(cache.logits, predicted_mask(cache.validity_probs, tau, fallback));
  }
  throw InputError("unknown policy mode");
}

Matrix log_prob_logit_grad(const PolicyDist& dist, const std::vector<int>& actions, const Vector& weights) {
  Matrix g = -dist.probs;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    g(i, actions[static_cast<std::size_t>(i)]) += 1.0;
    g.row(i) *= weights(i);
  }
  return g.cwiseProduct(dist.support);
}

std::optional<double> pearson(const Vector& x, const Vector& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double sxx = xc.squaredNorm();
  const double syy = yc.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  const double r = xc.dot(yc) / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

CorrelationProbe feature_correlation(const MlpActorCritic& net, const Matrix& obs,
                                     const std::vector<ValidityMask>& masks, int action) {
  CorrelationProbe p;
  p.action = action;
  if (static_cast<Eigen::Index>(masks.size()) != obs.rows()) throw InputError("one mask per observation required");
  const ForwardCache c = net.forward(obs);
  const Matrix& phi = c.features();
  Vector valid_mean = Vector::Zero(phi.cols());
  Vector invalid_mean = Vector::Zero(phi.cols());
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    if (masks[static_cast<std::size_t>(i)][action]) {
      valid_mean += phi.row(i).transpose();
      ++p.num_valid;
    } else {
      invalid_mean += phi.row(i).transpose();
      ++p.num_invalid;
    }
  }
  if (p.num_valid < 2 || p.num_invalid < 2) return p;
  valid_mean /= p.num_valid;
  invalid_mean /= p.num_invalid;
  p.correlation = pearson(valid_mean, invalid_mean);
  return p;
}

Adam::Adam(int size, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

void Adam::step(Vector& params, const Vector& grad) {
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double clip_grad_norm(Vector& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm && norm > 0.0) grad *= max_norm / norm;
  return norm;
}

void save_snapshot(const std::string& path, const MlpActorCritic& net, const std::string& metadata_json) {
  static_assert(std::endian::native == std::endian::little, "snapshot format is little-endian");
  nlohmann::json header;
  const NetConfig& c = net.config();
  header["net"] = {{"obs_dim", c.obs_dim},
                   {"num_actions", c.num_actions},
                   {"hidden", c.hidden},
                   {"num_layers", c.num_layers},
                   {"classification_heads", c.classification_heads}};
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : net.segments()) {
    segs.push_back({{"name", s.name}, {"offset", s.offset}, {"rows", s.rows}, {"cols", s.cols}});
  }
  header["segments"] = segs;
  header["num_params"] = net.num_params();
  header["metadata"] = metadata_json.empty() ? nlohmann::json::object() : nlohmann::json::parse(metadata_json);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write snapshot: " + path);
  out << kSnapshotMagic << '\n' << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(net.params().data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(net.num_params())));
  if (!out) throw InputError("failed writing snapshot: " + path);
}

Snapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open snapshot: " + path);
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kSnapshotMagic) throw SchemaError("not a snapshot file: " + path);
  std::getline(in, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad snapshot header: ") + e.what());
  }
  NetConfig c;
  try {
    const auto& n = header.at("net");
    c.obs_dim = n.at("obs_dim").get<int>();
    c.num_actions = n.at("num_actions").get<int>();
    c.hidden = n.at("hidden").get<int>();
    c.num_layers = n.at("num_layers").get<int>();
    c.classification_heads = n.at("classification_heads").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad snapshot header: ") + e.what());
  }
  const int count = header.at("num_params").get<int>();
  Vector params(count);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(count)));
  if (!in) throw SchemaError("truncated snapshot: " + path);
  return Snapshot{MlpActorCritic(c, std::move(params)), header.at("metadata").dump()};
}

}  // namespace masklab
