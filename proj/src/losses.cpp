#include "masklab/losses.hpp"

#include <algorithm>
#include <cmath>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

constexpr double kProbClamp = 1e-12;

}  // namespace

std::string to_string(Condition c) {
  switch (c) {
    case Condition::kC1: return "C1";
    case Condition::kC2: return "C2";
    case Condition::kC3: return "C3";
    case Condition::kC4: return "C4";
  }
  return "?";
}

Condition condition_from_string(const std::string& s) {
  if (s == "C1") return Condition::kC1;
  if (s == "C2") return Condition::kC2;
  if (s == "C3") return Condition::kC3;
  if (s == "C4") return Condition::kC4;
  throw InputError("unknown condition: " + s);
}

std::string to_string(KlPrefactor p) {
  switch (p) {
    case KlPrefactor::kOracleSoftMasked: return "oracle_soft_masked";
    case KlPrefactor::kOracleMasked: return "oracle_masked";
    case KlPrefactor::kUnmasked: return "unmasked";
  }
  return "?";
}

KlPrefactor kl_prefactor_from_string(const std::string& s) {
  if (s == "oracle_soft_masked") return KlPrefactor::kOracleSoftMasked;
  if (s == "oracle_masked") return KlPrefactor::kOracleMasked;
  if (s == "unmasked") return KlPrefactor::kUnmasked;
  throw InputError("unknown kl prefactor: " + s);
}

void LossConfig::validate() const {
  if (!(clip > 0.0)) throw InputError("clip must be positive");
  if (!(classification_coeff >= 0.0)) throw InputError("classification_coeff must be >= 0");
  if (!(focal_gamma >= 0.0)) throw InputError("focal_gamma must be >= 0");
  if (!(value_coeff >= 0.0) || !(entropy_coeff >= 0.0)) throw InputError("loss coefficients must be >= 0");
  if (!(discount > 0.0 && discount < 1.0)) throw InputError("discount must lie in (0,1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw InputError("gae_lambda must lie in [0,1]");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InputError("threshold must lie in (0,1)");
}

RolloutBatch RolloutBatch::subset(const std::vector<int>& rows) const {
  RolloutBatch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  b.obs.resize(n, obs.cols());
  b.old_log_probs.resize(n);
  b.rewards.resize(n);
  b.values.resize(n);
  b.validity.resize(n, validity.cols());
  b.masks.resize(n, masks.cols());
  b.advantages.resize(n);
  b.returns.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = rows[static_cast<std::size_t>(i)];
    b.obs.row(i) = obs.row(r);
    b.actions.push_back(actions[static_cast<std::size_t>(r)]);
    b.old_log_probs(i) = old_log_probs(r);
    b.rewards(i) = rewards(r);
    b.dones.push_back(dones[static_cast<std::size_t>(r)]);
    b.values(i) = values(r);
    b.validity.row(i) = validity.row(r);
    b.masks.row(i) = masks.row(r);
    b.advantages(i) = advantages.size() ? advantages(r) : 0.0;
    b.returns(i) = returns.size() ? returns(r) : 0.0;
  }
  return b;
}

GaeResult gae(const Vector& rewards, const Vector& values, const std::vector<bool>& dones,
              double bootstrap_value, double gamma, double lambda) {
  const auto T = rewards.size();
  if (values.size() != T || static_cast<Eigen::Index>(dones.size()) != T) {
    throw InputError("gae inputs differ in length");
  }
  GaeResult out{Vector::Zero(T), Vector::Zero(T)};
  double next_adv = 0.0;
  double next_value = bootstrap_value;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double live = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards(t) + gamma * next_value * live - values(t);
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages(t) = next_adv;
    next_value = values(t);
  }
  out.returns = out.advantages + values;
  return out;
}

double kl_balanced_loss(const Matrix& validity_probs, const Matrix& labels, const Matrix& weights,
                        double focal_gamma, Matrix* grad_logits) {
  const auto N = validity_probs.rows();
  const auto n = validity_probs.cols();
  if (labels.rows() != N || labels.cols() != n || weights.rows() != N || weights.cols() != n) {
    throw InputError("classification shapes differ");
  }
  if (N == 0) return 0.0;
  if (grad_logits) *grad_logits = Matrix::Zero(N, n);
  double total = 0.0;
  for (Eigen::Index i = 0; i < N; ++i) {
    for (Eigen::Index a = 0; a < n; ++a) {
      const bool positive = labels(i, a) > 0.5;
      const double p_raw = positive ? validity_probs(i, a) : 1.0 - validity_probs(i, a);
      const double p = std::max(p_raw, kProbClamp);
      const double q = 1.0 - p_raw;
      const double logp = std::log(p);
      const double mod = focal_gamma == 0.0 ? 1.0 : std::pow(std::max(q, 0.0), focal_gamma);
      total -= weights(i, a) * mod * logp;
      if (grad_logits) {
        // p(1-p) d/dp [-(1-p)^g log p] = -(1-p)^{g+1} + g p (1-p)^g log p
        const double d = -mod * q + focal_gamma * p_raw * mod * logp;
        (*grad_logits)(i, a) = (positive ? 1.0 : -1.0) * weights(i, a) * d / static_cast<double>(N);
      }
    }
  }
  return total / static_cast<double>(N);
}

double focal_loss(const Matrix& validity_probs, const Matrix& labels, double focal_gamma) {
  const Matrix w = Matrix::Constant(validity_probs.rows(), validity_probs.cols(),
                                    1.0 / static_cast<double>(validity_probs.cols()));
  return kl_balanced_loss(validity_probs, labels, w, focal_gamma);
}

double binary_cross_entropy(const Matrix& validity_probs, const Matrix& labels) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < validity_probs.rows(); ++i) {
    for (Eigen::Index a = 0; a < validity_probs.cols(); ++a) {
      const double p = validity_probs(i, a);
      total -= labels(i, a) * std::log(std::max(p, kProbClamp)) +
               (1.0 - labels(i, a)) * std::log(std::max(1.0 - p, kProbClamp));
    }
  }
  return total / static_cast<double>(validity_probs.size());
}

KlWeights kl_weights(const Matrix& logits, const Matrix& oracle_mask, const Matrix& predicted,
                     const Matrix& prefactor_probs, double soft_value) {
  const PolicyDist oracle = soft_masked_softmax(logits, oracle_mask, soft_value);
  const PolicyDist pred = soft_masked_softmax(logits, predicted, soft_value);
  KlWeights w;
  w.raw = prefactor_probs.cwiseProduct((oracle.log_probs - pred.log_probs).cwiseAbs());
  w.normalized = w.raw;
  w.uniform_fallback.assign(static_cast<std::size_t>(logits.rows()), false);
  for (Eigen::Index i = 0; i < w.raw.rows(); ++i) {
    const double sum = w.raw.row(i).sum();
    if (sum > 0.0) {
      w.normalized.row(i) /= sum;
    } else {
      w.normalized.row(i).setConstant(1.0 / static_cast<double>(w.raw.cols()));
      w.uniform_fallback[static_cast<std::size_t>(i)] = true;
    }
  }
  return w;
}

Matrix kl_prefactor_probs(const Matrix& logits, const Matrix& oracle_mask, const LossConfig& config) {
  switch (config.kl_prefactor) {
    case KlPrefactor::kOracleSoftMasked:
      return soft_masked_softmax(logits, oracle_mask, config.kl_soft_mask_value).probs;
    case KlPrefactor::kOracleMasked:
      return masked_softmax(logits, oracle_mask).probs;
    case KlPrefactor::kUnmasked:
      return unmasked_softmax(logits).probs;
  }
  throw InputError("unknown kl prefactor");
}

LossResult ppo_loss(const ForwardCache& cache, const RolloutBatch& batch, const LossConfig& config) {
  const int N = batch.size();
  if (N == 0) throw InputError("empty batch");
  const double inv_n = 1.0 / N;
  LossResult out;
  const PolicyDist dist = masked_softmax(cache.logits, batch.masks);

  Vector adv = batch.advantages;
  if (config.normalize_advantages && N > 1) {
    const double mean = adv.mean();
    const double sd = std::sqrt((adv.array() - mean).square().sum() / (N - 1));
    adv = (adv.array() - mean) / (sd + 1e-8);
  }

  Vector dlogp = Vector::Zero(N);  // d loss / d log pi(a_i|s_i)
  double surrogate = 0.0;
  int clipped = 0;
  double approx_kl = 0.0;
  for (int i = 0; i < N; ++i) {
    const double logp = dist.log_probs(i, batch.actions[static_cast<std::size_t>(i)]);
    if (!std::isfinite(logp)) throw NumericalError("action outside the policy support in batch");
    const double log_ratio = logp - batch.old_log_probs(i);
    const double ratio = std::exp(log_ratio);
    const double clipped_ratio = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    const double s1 = ratio * adv(i);
    const double s2 = clipped_ratio * adv(i);
    if (s1 <= s2) {
      surrogate += s1;
      dlogp(i) = -ratio * adv(i) * inv_n;
    } else {
      surrogate += s2;
    }
    if (std::abs(ratio - 1.0) > config.clip) ++clipped;
    approx_kl += (ratio - 1.0) - log_ratio;
  }
  out.terms.policy = -surrogate * inv_n;
  out.terms.clip_fraction = clipped * inv_n;
  out.terms.approx_kl = approx_kl * inv_n;

  const Vector verr = cache.values - batch.returns;
  out.terms.value = verr.squaredNorm() * inv_n;

  Vector entropy(N);
  for (int i = 0; i < N; ++i) {
    double h = 0.0;
    for (Eigen::Index a = 0; a < dist.probs.cols(); ++a) {
      if (dist.probs(i, a) > 0.0) h -= dist.probs(i, a) * dist.log_probs(i, a);
    }
    entropy(i) = h;
  }
  out.terms.entropy = entropy.mean();
  out.terms.ppo = out.terms.policy + config.value_coeff * out.terms.value -
                  config.entropy_coeff * out.terms.entropy;

  // Chain to logits. d log pi_a / dz_j = 1{a=j} - pi_j on the support.
  Matrix glogits = log_prob_logit_grad(dist, batch.actions, dlogp);
  for (int i = 0; i < N; ++i) {
    for (Eigen::Index j = 0; j < dist.probs.cols(); ++j) {
      if (dist.probs(i, j) > 0.0) {
        // d(-beta H)/dz_j = beta pi_j (log pi_j + H)
        glogits(i, j) += config.entropy_coeff * inv_n * dist.probs(i, j) * (dist.log_probs(i, j) + entropy(i));
      }
    }
  }
  out.output_grads.logits = glogits;
  out.output_grads.values = (2.0 * config.value_coeff * inv_n) * verr;
  out.terms.total = out.terms.ppo;
  return out;
}

Matrix classification_weights(const ForwardCache& cache, const RolloutBatch& batch,
                              const LossConfig& config, Condition condition) {
  const auto N = cache.logits.rows();
  const auto n = cache.logits.cols();
  if (condition != Condition::kC4) return Matrix::Constant(N, n, 1.0 / static_cast<double>(n));
  const Matrix pred = predicted_mask(cache.validity_probs, config.threshold);
  return kl_weights(cache.logits, batch.validity, pred,
                    kl_prefactor_probs(cache.logits, batch.validity, config), config.kl_soft_mask_value)
      .normalized;
}

LossResult total_loss(const MlpActorCritic& net, const RolloutBatch& batch, const LossConfig& config,
                      Condition condition, bool compute_grad, const Matrix* frozen_weights) {
  const ForwardCache cache = net.forward(batch.obs);
  LossResult out = ppo_loss(cache, batch, config);
  const bool classify = (condition == Condition::kC3 || condition == Condition::kC4) &&
                        config.classification_coeff > 0.0;
  if (classify) {
    if (cache.validity_probs.size() == 0) throw InputError("condition needs classification heads");
    const Matrix weights =
        frozen_weights ? *frozen_weights : classification_weights(cache, batch, config, condition);
    Matrix gcls;
    out.terms.cls = kl_balanced_loss(cache.validity_probs, batch.validity, weights, config.focal_gamma,
                                     compute_grad ? &gcls : nullptr);
    out.terms.cls_weighted = config.classification_coeff * out.terms.cls;
    out.terms.total += out.terms.cls_weighted;
    if (compute_grad) out.output_grads.cls_logits = config.classification_coeff * gcls;
  }
  if (compute_grad) out.grad = net.backward(cache, out.output_grads);
  return out;
}

}  // namespace masklab
