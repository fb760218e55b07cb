#include "masklab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "masklab/errors.hpp"

namespace masklab {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int sample_action(const Eigen::Ref<const Eigen::RowVectorXd>& probs, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  int last_positive = 0;
  for (int a = 0; a < probs.size(); ++a) {
    if (probs(a) <= 0.0) continue;
    acc += probs(a);
    last_positive = a;
    if (u < acc) return a;
  }
  return last_positive;
}

PolicyMode collection_mode(Condition c) {
  return c == Condition::kC2 ? PolicyMode::kUnmasked : PolicyMode::kOracleMasked;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return v.empty() ? kNaN : 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

// Probe quantities at the start of an update.
struct ProbeSnapshot {
  double pi_valid = 0.0;
  double pi_invalid = 0.0;
  Vector probe_pi;        // per probe state
  Vector centered_logit;  // per probe state
};

ProbeSnapshot take_probe(const MlpActorCritic& net, const StateCatalog& cat, PolicyMode mode) {
  ProbeSnapshot p;
  const ForwardCache c = net.forward(cat.obs);
  const Matrix oracle = mask_matrix(cat.masks);
  const PolicyDist dist = policy_distribution(c, mode, oracle);
  const PolicyDist raw = unmasked_softmax(c.logits);
  const int a = cat.critical_action;
  p.probe_pi.resize(static_cast<Eigen::Index>(cat.probe.size()));
  p.centered_logit.resize(static_cast<Eigen::Index>(cat.probe.size()));
  for (std::size_t k = 0; k < cat.probe.size(); ++k) {
    const int i = cat.probe[k];
    p.probe_pi(static_cast<Eigen::Index>(k)) = dist.probs(i, a);
    p.centered_logit(static_cast<Eigen::Index>(k)) = c.logits(i, a) - c.logits.row(i).mean();
  }
  p.pi_valid = p.probe_pi.size() ? p.probe_pi.mean() : kNaN;
  std::vector<double> inv;
  for (std::size_t i = 0; i < cat.masks.size(); ++i) {
    if (!cat.masks[i][a]) inv.push_back(raw.probs(static_cast<Eigen::Index>(i), a));
  }
  p.pi_invalid = mean_of(inv);
  return p;
}

}  // namespace

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::kGroundTruth: return "gt";
    case EvalMode::kPredicted: return "pred";
    case EvalMode::kUnmasked: return "unmasked";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "gt" || s == "ground_truth_mask") return EvalMode::kGroundTruth;
  if (s == "pred" || s == "predicted_mask") return EvalMode::kPredicted;
  if (s == "unmasked") return EvalMode::kUnmasked;
  throw InputError("unknown eval mode: " + s);
}

void TrainConfig::validate() const {
  if (num_envs < 1 || rollout_len < 1 || epochs < 1 || minibatches < 1) {
    throw InputError("num_envs, rollout_len, epochs and minibatches must be positive");
  }
  if (batch_size() % minibatches != 0) throw InputError("batch size must be divisible by minibatches");
  if (!(lr > 0.0)) throw InputError("lr must be positive");
  if (!(max_grad_norm > 0.0)) throw InputError("max_grad_norm must be positive");
  if (total_steps < batch_size()) throw InputError("total_steps smaller than one batch");
  if (eval_episodes < 1) throw InputError("eval_episodes must be positive");
  loss.validate();
}

bool trains_heads(Condition c, const LossConfig& loss) {
  return (c == Condition::kC3 || c == Condition::kC4) && loss.classification_coeff > 0.0;
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricRow>& rows,
                       const std::string& header_comment) {
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << kMetricColumns << '\n';
  for (const auto& r : rows) {
    out << r.update << ',' << r.step << ',' << r.condition << ',' << r.seed << ',' << fmt(r.return_mean)
        << ',' << fmt(r.return_std) << ',' << fmt(r.pi_target_valid) << ',' << fmt(r.pi_target_invalid)
        << ',' << fmt(r.valid_rate) << ',' << fmt(r.feat_corr) << ',' << fmt(r.cls_acc) << ','
        << fmt(r.loss_ppo) << ',' << fmt(r.loss_cls) << ',' << fmt(r.kappa_proxy) << '\n';
  }
}

StateCatalog StateCatalog::build(const EnvSpec& spec) {
  const auto env = spec.make();
  StateCatalog cat{to_tabular(*env, 0.99), {}, Matrix(), {}, {}, spec.critical_action()};
  for (int s = 0; s < cat.tabular.mdp.num_states(); ++s) {
    if (!cat.tabular.terminal[static_cast<std::size_t>(s)]) cat.live.push_back(s);
  }
  cat.obs.resize(static_cast<Eigen::Index>(cat.live.size()), cat.tabular.observations.cols());
  for (std::size_t i = 0; i < cat.live.size(); ++i) {
    const int s = cat.live[i];
    cat.obs.row(static_cast<Eigen::Index>(i)) = cat.tabular.observations.row(s);
    cat.masks.push_back(cat.tabular.masks[static_cast<std::size_t>(s)]);
    if (cat.masks.back()[cat.critical_action]) cat.probe.push_back(static_cast<int>(i));
  }
  return cat;
}

double classification_accuracy(const MlpActorCritic& net, const StateCatalog& catalog, double tau) {
  if (!net.config().classification_heads) return kNaN;
  const ForwardCache c = net.forward(catalog.obs);
  const Matrix oracle = mask_matrix(catalog.masks);
  const Matrix pred = (c.validity_probs.array() > tau).cast<double>().matrix();
  return (pred.array() == oracle.array()).cast<double>().mean();
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  const StateCatalog cat = StateCatalog::build(config.env);
  const int E = config.num_envs;
  const int T = config.rollout_len;
  const int N = E * T;

  std::vector<std::unique_ptr<Environment>> envs;
  for (int i = 0; i < E; ++i) envs.push_back(config.env.make());
  const int n = envs.front()->num_actions();
  const int D = envs.front()->observation_dim();

  NetConfig nc;
  nc.obs_dim = D;
  nc.num_actions = n;
  nc.hidden = config.hidden;
  nc.num_layers = config.num_layers;
  TrainResult result{MlpActorCritic(nc, config.seed * 0x9E3779B97F4A7C15ULL + 1), {}, {}, 0, 0, 0.0, std::nullopt};
  MlpActorCritic& net = result.net;
  Adam adam(net.num_params(), config.lr, 0.9, 0.999, 1e-5);

  Rng rng(config.seed);
  for (auto& env : envs) env->reset(rng);
  std::vector<double> ep_return(static_cast<std::size_t>(E), 0.0);

  const PolicyMode mode = collection_mode(config.condition);
  const bool masked = mode == PolicyMode::kOracleMasked;
  std::vector<std::int64_t> probe_keys;
  for (int k : cat.probe) probe_keys.push_back(cat.tabular.keys[static_cast<std::size_t>(cat.live[k])]);

  std::vector<double> pre_visit_probe;
  long step = 0;
  const int updates = config.num_updates();
  std::vector<int> order(static_cast<std::size_t>(N));
  Matrix obs_now(E, D);

  for (int u = 0; u < updates; ++u) {
    if (config.anneal_lr) adam.set_learning_rate(config.lr * (1.0 - static_cast<double>(u) / updates));
    MetricRow row;
    row.update = u;
    row.condition = to_string(config.condition);
    row.seed = config.seed;

    const ProbeSnapshot before = take_probe(net, cat, mode);
    row.pi_target_valid = before.pi_valid;
    row.pi_target_invalid = before.pi_invalid;
    const auto probe_corr = feature_correlation(net, cat.obs, cat.masks, cat.critical_action);
    row.feat_corr = probe_corr.correlation.value_or(kNaN);
    row.cls_acc = classification_accuracy(net, cat, config.loss.threshold);

    // Collect.
    RolloutBatch batch;
    batch.obs.resize(N, D);
    batch.actions.assign(static_cast<std::size_t>(N), 0);
    batch.old_log_probs.resize(N);
    batch.rewards.resize(N);
    batch.dones.assign(static_cast<std::size_t>(N), false);
    batch.values.resize(N);
    batch.validity.resize(N, n);
    batch.masks.resize(N, n);
    std::vector<double> finished;
    long valid_taken = 0;
    int first_visit_probe = -1;
    for (int t = 0; t < T; ++t) {
      std::vector<ValidityMask> step_masks;
      for (int i = 0; i < E; ++i) {
        obs_now.row(i) = envs[static_cast<std::size_t>(i)]->observation().transpose();
        step_masks.push_back(envs[static_cast<std::size_t>(i)]->validity_mask());
      }
      const Matrix oracle = mask_matrix(step_masks);
      const ForwardCache c = net.forward(obs_now);
      const PolicyDist dist = policy_distribution(c, mode, oracle);
      for (int i = 0; i < E; ++i) {
        const int idx = t * E + i;
        auto& env = *envs[static_cast<std::size_t>(i)];
        if (first_visit_probe < 0 && !result.suppression.visited) {
          const auto it = std::find(probe_keys.begin(), probe_keys.end(), env.state_key());
          if (it != probe_keys.end()) first_visit_probe = static_cast<int>(it - probe_keys.begin());
        }
        const int a = sample_action(dist.probs.row(i), rng);
        batch.obs.row(idx) = obs_now.row(i);
        batch.actions[static_cast<std::size_t>(idx)] = a;
        batch.old_log_probs(idx) = dist.log_probs(i, a);
        batch.values(idx) = c.values(i);
        batch.validity.row(idx) = oracle.row(i);
        if (masked) {
          batch.masks.row(idx) = oracle.row(i);
        } else {
          batch.masks.row(idx).setOnes();
        }
        const bool valid = step_masks[static_cast<std::size_t>(i)][a];
        if (valid) ++valid_taken;
        if (!valid) ++result.invalid_actions_executed;
        const StepResult r = env.step(a);
        batch.rewards(idx) = r.reward;
        ep_return[static_cast<std::size_t>(i)] += r.reward;
        const bool done = r.done || r.truncated || env.done();
        batch.dones[static_cast<std::size_t>(idx)] = done;
        if (done) {
          finished.push_back(ep_return[static_cast<std::size_t>(i)]);
          ep_return[static_cast<std::size_t>(i)] = 0.0;
          env.reset(rng);
        }
      }
    }
    step += N;
    result.env_steps = step;
    row.step = step;
    row.return_mean = mean_of(finished);
    row.return_std = std_of(finished);
    row.valid_rate = static_cast<double>(valid_taken) / N;

    if (!result.suppression.visited) pre_visit_probe.push_back(before.pi_valid);
    if (first_visit_probe >= 0 && !result.suppression.visited) {
      auto& sm = result.suppression;
      sm.visited = true;
      sm.first_visit_update = u;
      sm.first_visit_step = step - N;
      const double p = before.probe_pi(first_visit_probe);
      sm.first_occurrence_logprob = std::log(p);
      sm.suppression_ratio = p * n;
    }

    // Advantages per environment stream.
    for (int i = 0; i < E; ++i) {
      obs_now.row(i) = envs[static_cast<std::size_t>(i)]->observation().transpose();
    }
    const Vector bootstrap = net.forward(obs_now).values;
    batch.advantages.resize(N);
    batch.returns.resize(N);
    for (int i = 0; i < E; ++i) {
      Vector r(T), v(T);
      std::vector<bool> d(static_cast<std::size_t>(T));
      for (int t = 0; t < T; ++t) {
        r(t) = batch.rewards(t * E + i);
        v(t) = batch.values(t * E + i);
        d[static_cast<std::size_t>(t)] = batch.dones[static_cast<std::size_t>(t * E + i)];
      }
      const GaeResult g = gae(r, v, d, bootstrap(i), config.loss.discount, config.loss.gae_lambda);
      for (int t = 0; t < T; ++t) {
        batch.advantages(t * E + i) = g.advantages(t);
        batch.returns(t * E + i) = g.returns(t);
      }
    }

    // Optimize.
    double ppo_sum = 0.0, cls_sum = 0.0;
    int mb_count = 0;
    const int mb_size = N / config.minibatches;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::iota(order.begin(), order.end(), 0);
      for (int k = N - 1; k > 0; --k) {
        const int j = static_cast<int>(uniform01(rng) * (k + 1));
        std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(j)]);
      }
      for (int m = 0; m < config.minibatches; ++m) {
        const std::vector<int> rows(order.begin() + m * mb_size, order.begin() + (m + 1) * mb_size);
        const RolloutBatch mb = batch.subset(rows);
        LossResult lr = total_loss(net, mb, config.loss, config.condition, true);
        if (!std::isfinite(lr.terms.total) || !lr.grad.allFinite()) {
          std::ostringstream msg;
          msg << "non-finite loss at update " << u << " epoch " << epoch << " minibatch " << m
              << ": policy=" << lr.terms.policy << " value=" << lr.terms.value
              << " entropy=" << lr.terms.entropy << " cls=" << lr.terms.cls;
          throw NumericalError(msg.str());
        }
        clip_grad_norm(lr.grad, config.max_grad_norm);
        adam.step(net.params(), lr.grad);
        ppo_sum += lr.terms.ppo;
        cls_sum += lr.terms.cls_weighted;
        ++mb_count;
      }
    }
    row.loss_ppo = ppo_sum / mb_count;
    row.loss_cls = cls_sum / mb_count;

    const ProbeSnapshot after = take_probe(net, cat, mode);
    row.kappa_proxy = before.centered_logit.size()
                          ? (before.centered_logit - after.centered_logit).mean()
                          : kNaN;
    if (result.suppression.visited && result.suppression.time_to_valid < 0 &&
        after.pi_valid > 0.5) {
      result.suppression.time_to_valid = step - result.suppression.first_visit_step;
    }
    result.history.push_back(row);
  }

  result.suppression.min_probe_before_visit =
      pre_visit_probe.empty() ? kNaN : *std::min_element(pre_visit_probe.begin(), pre_visit_probe.end());
  result.cls_accuracy = classification_accuracy(net, cat, config.loss.threshold);
  result.feat_corr = feature_correlation(net, cat.obs, cat.masks, cat.critical_action).correlation;
  return result;
}

EvalReport evaluate(const MlpActorCritic& net, const EnvSpec& spec, EvalMode mode, int episodes,
                    std::uint64_t seed, bool heads_trained, double tau) {
  if (episodes < 1) throw InputError("episodes must be positive");
  EvalReport rep;
  rep.mode = mode;
  rep.episodes = episodes;
  rep.heads_missing = !net.config().classification_heads;
  rep.predictor_untrained = mode == EvalMode::kPredicted && !rep.heads_missing && !heads_trained;

  Rng rng(seed);
  std::vector<double> returns, lengths;
  long steps = 0, fallbacks = 0;
  const int lanes = std::min(episodes, 128);
  while (static_cast<int>(returns.size()) < episodes) {
    const int k = std::min(lanes, episodes - static_cast<int>(returns.size()));
    std::vector<std::unique_ptr<Environment>> envs;
    for (int i = 0; i < k; ++i) {
      envs.push_back(spec.make());
      envs.back()->reset(rng);
    }
    const int D = envs.front()->observation_dim();
    std::vector<double> ret(static_cast<std::size_t>(k), 0.0);
    std::vector<int> len(static_cast<std::size_t>(k), 0);
    std::vector<int> live(static_cast<std::size_t>(k));
    std::iota(live.begin(), live.end(), 0);
    while (!live.empty()) {
      Matrix obs(static_cast<Eigen::Index>(live.size()), D);
      std::vector<ValidityMask> masks;
      for (std::size_t j = 0; j < live.size(); ++j) {
        obs.row(static_cast<Eigen::Index>(j)) = envs[static_cast<std::size_t>(live[j])]->observation().transpose();
        masks.push_back(envs[static_cast<std::size_t>(live[j])]->validity_mask());
      }
      const ForwardCache c = net.forward(obs);
      const Matrix oracle = mask_matrix(masks);
      std::vector<bool> fb;
      PolicyDist dist;
      switch (mode) {
        case EvalMode::kGroundTruth: dist = masked_softmax(c.logits, oracle); break;
        case EvalMode::kUnmasked: dist = unmasked_softmax(c.logits); break;
        case EvalMode::kPredicted:
          dist = policy_distribution(c, PolicyMode::kPredictedMasked, oracle, tau, &fb);
          break;
      }
      std::vector<int> still;
      for (std::size_t j = 0; j < live.size(); ++j) {
        const int i = live[j];
        if (!fb.empty() && fb[j]) ++fallbacks;
        ++steps;
        const int a = sample_action(dist.probs.row(static_cast<Eigen::Index>(j)), rng);
        const StepResult r = envs[static_cast<std::size_t>(i)]->step(a);
        ret[static_cast<std::size_t>(i)] += r.reward;
        ++len[static_cast<std::size_t>(i)];
        if (!(r.done || r.truncated || envs[static_cast<std::size_t>(i)]->done())) still.push_back(i);
      }
      live = std::move(still);
    }
    for (int i = 0; i < k; ++i) {
      returns.push_back(ret[static_cast<std::size_t>(i)]);
      lengths.push_back(len[static_cast<std::size_t>(i)]);
    }
  }
  rep.return_mean = mean_of(returns);
  rep.return_std = std_of(returns);
  rep.length_mean = mean_of(lengths);
  rep.fallback_rate = steps ? static_cast<double>(fallbacks) / steps : 0.0;
  return rep;
}

}  // namespace masklab
