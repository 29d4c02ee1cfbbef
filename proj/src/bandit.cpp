#include "kflow/bandit.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace kflow {

namespace {

long argmax_lowest(const std::vector<double>& v) {
  long best = 0;
  for (long i = 1; i < static_cast<long>(v.size()); ++i) {
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

}  // namespace

LinearGaussianEnv::LinearGaussianEnv(long dim, long actions, std::uint64_t seed, double noise)
    : dim_(dim), actions_(actions), noise_(noise), base_(seed) {
  require(dim >= 1 && actions >= 2, "linear-gaussian env needs dim >= 1 and actions >= 2");
  require(noise >= 0.0, "reward noise must be nonnegative");
  RandomStream rs = base_.sub(0);
  double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (long a = 0; a < actions; ++a) {
    std::vector<double> theta(static_cast<size_t>(dim));
    for (double& v : theta) v = scale * rs.normal();
    thetas_.push_back(std::move(theta));
  }
}

BanditStep LinearGaussianEnv::step(long t) const {
  require(t >= 0, "step index must be nonnegative");
  RandomStream rs = base_.sub(static_cast<std::uint64_t>(t) + 1);
  BanditStep s;
  s.context.resize(static_cast<size_t>(dim_));
  for (double& v : s.context) v = rs.normal();
  for (long a = 0; a < actions_; ++a) {
    double mu = 0.0;
    for (long i = 0; i < dim_; ++i) {
      mu += thetas_[static_cast<size_t>(a)][static_cast<size_t>(i)] *
            s.context[static_cast<size_t>(i)];
    }
    s.expected_reward.push_back(mu);
    s.realized_reward.push_back(mu + noise_ * rs.normal());
  }
  return s;
}

MushroomStyleEnv::MushroomStyleEnv(long dim, std::uint64_t seed) : dim_(dim), base_(seed) {
  require(dim >= 1, "mushroom-style env needs dim >= 1");
}

BanditStep MushroomStyleEnv::step(long t) const {
  require(t >= 0, "step index must be nonnegative");
  RandomStream rs = base_.sub(static_cast<std::uint64_t>(t) + 1);
  BanditStep s;
  s.context.resize(static_cast<size_t>(dim_));
  for (double& v : s.context) v = rs.uniform01() < 0.5 ? 0.0 : 1.0;
  bool good = s.context[0] > 0.5;
  double p = good ? 0.95 : 0.1;
  s.expected_reward = {0.0, 40.0 * p - 35.0};
  s.realized_reward = {0.0, rs.uniform01() < p ? 5.0 : -35.0};
  return s;
}

std::unique_ptr<BanditEnv> make_env(const std::string& kind, long dim, long actions,
                                    std::uint64_t seed) {
  if (kind == "linear-gaussian") return std::make_unique<LinearGaussianEnv>(dim, actions, seed);
  if (kind == "mushroom-style") return std::make_unique<MushroomStyleEnv>(dim, seed);
  fail("unknown bandit environment '" + kind + "'");
}

long UniformAgent::choose(long, const std::vector<double>&, RandomStream& rs) {
  return static_cast<long>(rs.uniform_below(static_cast<std::uint64_t>(actions_)));
}

long OracleAgent::choose(long t, const std::vector<double>&, RandomStream&) {
  return argmax_lowest(env_.step(t).expected_reward);
}

ThompsonMlpAgent::ThompsonMlpAgent(long dim, long actions, const ThompsonOptions& opt,
                                   std::uint64_t seed)
    : dim_(dim), actions_(actions), opt_(opt), model_([&] {
        MlpOptions mo;
        mo.family = opt.family;
        mo.init_sigma = opt.init_sigma;
        mo.flow = opt.flow;
        RandomStream rs(seed);
        return StochasticMLP({dim, opt.hidden, actions}, mo, rs);
      }()) {
  require(opt.retrain_period >= 1 && opt.retrain_iters >= 0, "retrain schedule must be positive");
  require(opt.noise_sigma > 0.0 && opt.prior_lambda > 0.0 && opt.beta >= 0.0,
          "agent scales must be positive");
  prior_.center = StochasticMLP::flatten_centers(model_.snapshot_centers());
  prior_.lambda = opt.prior_lambda;
  opt_state_ = std::make_unique<Adam>(model_.parameters(), opt.lr);
}

long ThompsonMlpAgent::choose(long, const std::vector<double>& context, RandomStream& rs) {
  require(static_cast<long>(context.size()) == dim_, "context dimension mismatch");
  if (opt_.warmup && seen_ < actions_) return seen_;
  NoGradGuard ng;
  Tensor x({1, dim_}, std::vector<double>(context));
  ForwardSample fs = model_.forward_sampled(x, rs);
  return argmax_lowest(fs.logits.values());
}

void ThompsonMlpAgent::observe(const std::vector<double>& context, long action, double reward,
                               RandomStream& rs) {
  require(action >= 0 && action < actions_, "observed action out of range");
  contexts_.insert(contexts_.end(), context.begin(), context.end());
  actions_taken_.push_back(action);
  rewards_.push_back(reward);
  ++seen_;
  if (seen_ % opt_.retrain_period == 0) retrain(rs);
}

void ThompsonMlpAgent::retrain(RandomStream& rs) {
  long m = buffer_size();
  if (m == 0 || opt_.retrain_iters == 0) return;
  long batch = std::min(opt_.batch_size, m);
  auto centers = model_.split_center(prior_.center);
  Tensor lambda = Tensor::scalar(prior_.lambda);
  double fit_scale = 0.5 / (opt_.noise_sigma * opt_.noise_sigma);

  for (long it = 0; it < opt_.retrain_iters; ++it) {
    std::vector<double> xv(static_cast<size_t>(batch * dim_));
    std::vector<long> acts(static_cast<size_t>(batch));
    std::vector<double> rv(static_cast<size_t>(batch));
    for (long i = 0; i < batch; ++i) {
      auto src = static_cast<size_t>(rs.uniform_below(static_cast<std::uint64_t>(m)));
      std::copy_n(contexts_.begin() + static_cast<long>(src) * dim_, dim_,
                  xv.begin() + i * dim_);
      acts[static_cast<size_t>(i)] = actions_taken_[src];
      rv[static_cast<size_t>(i)] = rewards_[src];
    }
    Tensor xb({batch, dim_}, std::move(xv));
    Tensor rb({batch, 1}, std::move(rv));
    ForwardSample fs = model_.forward_sampled(xb, rs);
    Tensor pred = gather_labels(fs.logits, acts);
    Tensor fit = mean(square(pred - rb)) * fit_scale;
    Tensor integrand = mc_kl_integrand(fs.draws, centers, lambda);
    Tensor loss = fit + integrand * (opt_.beta / static_cast<double>(m));
    backward(loss);
    opt_state_->step();
    opt_state_->zero_grad();
  }
}

BlrThompsonAgent::BlrThompsonAgent(long dim, long actions, double prior_tau, double noise)
    : dim_(dim), actions_(actions), noise_(noise) {
  require(dim >= 1 && actions >= 2, "blr agent needs dim >= 1 and actions >= 2");
  require(prior_tau > 0.0 && noise > 0.0, "blr scales must be positive");
  Mat p0 = Mat::Identity(dim, dim) / (prior_tau * prior_tau);
  for (long a = 0; a < actions; ++a) {
    precision_.push_back(p0);
    xty_.push_back(Vec::Zero(dim));
  }
}

long BlrThompsonAgent::choose(long, const std::vector<double>& context, RandomStream& rs) {
  require(static_cast<long>(context.size()) == dim_, "context dimension mismatch");
  Vec x = Eigen::Map<const Vec>(context.data(), dim_);
  std::vector<double> sampled(static_cast<size_t>(actions_));
  for (long a = 0; a < actions_; ++a) {
    const Mat& lam = precision_[static_cast<size_t>(a)];
    Mat l = cholesky_lower(lam);
    Vec mu = l.transpose().triangularView<Eigen::Upper>().solve(
        l.triangularView<Eigen::Lower>().solve(xty_[static_cast<size_t>(a)]));
    Vec z(dim_);
    for (long i = 0; i < dim_; ++i) z(i) = rs.normal();
    Vec theta = mu + l.transpose().triangularView<Eigen::Upper>().solve(z);
    sampled[static_cast<size_t>(a)] = theta.dot(x);
  }
  return argmax_lowest(sampled);
}

void BlrThompsonAgent::observe(const std::vector<double>& context, long action, double reward,
                               RandomStream&) {
  require(action >= 0 && action < actions_, "observed action out of range");
  Vec x = Eigen::Map<const Vec>(context.data(), dim_);
  double inv = 1.0 / (noise_ * noise_);
  precision_[static_cast<size_t>(action)] += inv * (x * x.transpose());
  xty_[static_cast<size_t>(action)] += inv * reward * x;
}

double RegretTrace::final_regret() const {
  return records.empty() ? 0.0 : records.back().cum_regret;
}

double RegretTrace::regret_at(long t) const {
  require(t >= 0 && t < static_cast<long>(records.size()), "regret index out of range");
  return records[static_cast<size_t>(t)].cum_regret;
}

void RegretTrace::write_csv(std::ostream& os) const {
  os << "t,action,reward,inst_regret,cum_regret\n";
  for (const auto& r : records) {
    os << r.t << "," << r.action << "," << format_double(r.reward) << ","
       << format_double(r.inst_regret) << "," << format_double(r.cum_regret) << "\n";
  }
}

RegretTrace run_episode(BanditAgent& agent, const BanditEnv& env, long t_max,
                        RandomStream& rs) {
  require(t_max >= 1, "episode length must be positive");
  RegretTrace trace;
  trace.records.reserve(static_cast<size_t>(t_max));
  double cum = 0.0;
  for (long t = 0; t < t_max; ++t) {
    BanditStep s = env.step(t);
    long a = agent.choose(t, s.context, rs);
    require(a >= 0 && a < env.action_count(), "agent chose an action out of range");
    double best = *std::max_element(s.expected_reward.begin(), s.expected_reward.end());
    double inst = best - s.expected_reward[static_cast<size_t>(a)];
    cum += inst;
    agent.observe(s.context, a, s.realized_reward[static_cast<size_t>(a)], rs);
    trace.records.push_back({t, a, s.realized_reward[static_cast<size_t>(a)], inst, cum});
  }
  return trace;
}

double normalized_regret(const RegretTrace& agent_trace, const RegretTrace& uniform_trace) {
  require(!agent_trace.records.empty() && !uniform_trace.records.empty(),
          "normalized regret needs nonempty traces");
  double u = uniform_trace.final_regret();
  require(u > 0.0, "uniform regret is zero, environment is degenerate");
  return agent_trace.final_regret() / u;
}

}  // namespace kflow
