#pragma once

#include <cstdint>
#include <random>

#include "masklab/losses.hpp"

namespace masklab::testing {

inline Matrix uniform_matrix(int r, int c, std::mt19937_64& gen, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(gen);
  return m;
}

// Random batch with a consistent support, labels and actions drawn from it.
inline RolloutBatch make_batch(const MlpActorCritic& net, int N, bool masked, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const int n = net.config().num_actions;
  RolloutBatch b;
  b.obs = uniform_matrix(N, net.config().obs_dim, gen, -1.0, 1.0);
  b.validity = (uniform_matrix(N, n, gen, 0.0, 1.0).array() > 0.4).cast<double>();
  for (int i = 0; i < N; ++i) b.validity(i, i % n) = 1.0;
  b.masks = masked ? b.validity : Matrix::Ones(N, n);
  const ForwardCache c = net.forward(b.obs);
  const PolicyDist d = masked_softmax(c.logits, b.masks);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  b.old_log_probs.resize(N);
  b.advantages.resize(N);
  b.returns.resize(N);
  b.values = c.values;
  b.rewards = Vector::Zero(N);
  for (int i = 0; i < N; ++i) {
    int a = 0;
    double r = u(gen);
    while (a < n - 1 && (b.masks(i, a) == 0.0 || r >= d.probs(i, a))) {
      r -= d.probs(i, a);
      ++a;
    }
    if (b.masks(i, a) == 0.0) a = i % n;
    b.actions.push_back(a);
    b.old_log_probs(i) = d.log_probs(i, a) + 0.05 * g(gen);
    b.advantages(i) = g(gen);
    b.returns(i) = g(gen);
    b.dones.push_back(false);
  }
  return b;
}

inline MlpActorCritic perturbed_net(std::uint64_t seed, int obs = 6, int n = 4, int hidden = 10) {
  MlpActorCritic net({obs, n, hidden, 2, true}, seed);
  std::mt19937_64 gen(seed + 1);
  std::normal_distribution<double> g(0.0, 0.2);
  for (int i = 0; i < net.num_params(); ++i) net.params()(i) += g(gen);
  return net;
}

}  // namespace masklab::testing
