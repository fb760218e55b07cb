#pragma once

// MLP actor-critic with a shared tanh encoder feeding policy, value and
// per-action validity-classification heads. Manual reverse-mode gradients over
// a flat parameter vector.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "masklab/mdp.hpp"

namespace masklab {

inline constexpr double kSoftMaskValue = -20.0;
inline constexpr double kValidityThreshold = 0.5;

struct NetConfig {
  int obs_dim = 0;
  int num_actions = 0;
  int hidden = 64;
  int num_layers = 2;
  bool classification_heads = true;
};

struct Segment {
  std::string name;
  int offset = 0;
  int rows = 0;
  int cols = 0;
  int size() const { return rows * cols; }
};

// Batch-major activations from one forward pass. Rows are samples.
struct ForwardCache {
  Matrix input;
  std::vector<Matrix> hidden;  // post-tanh activations per encoder layer
  Matrix logits;               // B x n
  Vector values;               // B
  Matrix cls_logits;           // B x n (empty without heads)
  Matrix validity_probs;       // sigmoid(cls_logits)

  const Matrix& features() const { return hidden.back(); }
};

// Upstream gradients of a scalar loss w.r.t. the network outputs. Empty
// matrices mean "no gradient".
struct OutputGrads {
  Matrix logits;
  Vector values;
  Matrix cls_logits;
};

class MlpActorCritic {
 public:
  MlpActorCritic(NetConfig config, std::uint64_t seed);
  MlpActorCritic(NetConfig config, Vector params);

  const NetConfig& config() const { return config_; }
  const std::vector<Segment>& segments() const { return segments_; }
  const Segment& segment(const std::string& name) const;
  int num_params() const { return static_cast<int>(params_.size()); }
  const Vector& params() const { return params_; }
  Vector& params() { return params_; }

  // Views into the flat vector.
  Eigen::Map<const Matrix> block(const std::string& name) const;
  Eigen::Map<Matrix> block(const std::string& name);

  ForwardCache forward(const Matrix& obs) const;
  Vector backward(const ForwardCache& cache, const OutputGrads& grads) const;

 private:
  void build_segments();

  NetConfig config_;
  std::vector<Segment> segments_;
  Vector params_;
};

// Masking modes of the action distribution.
enum class PolicyMode { kOracleMasked, kUnmasked, kSoftMasked, kPredictedMasked };

// Valid indicators as a B x n 0/1 matrix.
Matrix mask_matrix(const std::vector<ValidityMask>& masks);

// Thresholds validity probabilities at tau. Rows where nothing clears the
// threshold fall back to all-valid and are flagged.
Matrix predicted_mask(const Matrix& validity_probs, double tau, std::vector<bool>* fallback = nullptr);

struct PolicyDist {
  Matrix log_probs;  // -inf where excluded
  Matrix probs;      // exact zeros where excluded
  Matrix support;    // 0/1 support actually used
};

// Hard mask: invalid actions excluded. Soft mask: `soft_value` added to invalid
// logits. Throws InputError on an all-invalid hard-mask row.
PolicyDist masked_softmax(const Matrix& logits, const Matrix& mask);
PolicyDist soft_masked_softmax(const Matrix& logits, const Matrix& mask,
                               double soft_value = kSoftMaskValue);
PolicyDist unmasked_softmax(const Matrix& logits);

// Dispatches on mode; `oracle` used by oracle/soft modes, validity_probs by the
// predicted mode.
PolicyDist policy_distribution(const ForwardCache& cache, PolicyMode mode, const Matrix& oracle,
                               double tau = kValidityThreshold,
                               std::vector<bool>* fallback = nullptr);

// Gradient of sum_i w_i log pi(a_i|s_i) w.r.t. the logits under a masked
// softmax: w_i (1{a=j} - pi_j) on the support, 0 off it.
Matrix log_prob_logit_grad(const PolicyDist& dist, const std::vector<int>& actions,
                           const Vector& weights);

// Pearson correlation; nullopt when either side has zero variance.
std::optional<double> pearson(const Vector& x, const Vector& y);

struct CorrelationProbe {
  int action = 0;
  int num_valid = 0;
  int num_invalid = 0;
  std::optional<double> correlation;
};

// Pearson r across feature dimensions between the mean encoder activation of
// the states where `action` is valid and of the states where it is invalid.
CorrelationProbe feature_correlation(const MlpActorCritic& net, const Matrix& obs,
                                     const std::vector<ValidityMask>& masks, int action);

class Adam {
 public:
  explicit Adam(int size, double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  // params -= update(grad) (minimization).
  void step(Vector& params, const Vector& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  Vector m_, v_;
  long t_ = 0;
};

// Scales grad in place so its L2 norm is at most max_norm; returns the norm before clipping.
double clip_grad_norm(Vector& grad, double max_norm);

// Snapshot: a magic line, one line of JSON header (net config, segment map,
// caller metadata), then the raw little-endian doubles.
void save_snapshot(const std::string& path, const MlpActorCritic& net,
                   const std::string& metadata_json);
struct Snapshot {
  MlpActorCritic net;
  std::string metadata_json;
};
Snapshot load_snapshot(const std::string& path);

}  // namespace masklab
