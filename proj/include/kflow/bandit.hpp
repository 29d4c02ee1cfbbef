#pragma once
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "kflow/linalg.hpp"
#include "kflow/optim.hpp"
#include "kflow/random.hpp"
#include "kflow/snn.hpp"

namespace kflow {

// everything random about a step is a pure function of (env seed, t), so
// agents acting differently still see identical contexts and reward draws
struct BanditStep {
  std::vector<double> context;
  std::vector<double> expected_reward;  // per action, known to the simulator
  std::vector<double> realized_reward;  // per action, pre-drawn
};

class BanditEnv {
 public:
  virtual ~BanditEnv() = default;
  virtual std::string kind() const = 0;
  virtual long context_dim() const = 0;
  virtual long action_count() const = 0;
  virtual BanditStep step(long t) const = 0;
};

// rewards theta_a . x + gaussian noise with per-action theta
class LinearGaussianEnv final : public BanditEnv {
 public:
  LinearGaussianEnv(long dim, long actions, std::uint64_t seed, double noise = 0.5);
  std::string kind() const override { return "linear-gaussian"; }
  long context_dim() const override { return dim_; }
  long action_count() const override { return actions_; }
  BanditStep step(long t) const override;
  const std::vector<std::vector<double>>& thetas() const { return thetas_; }

 private:
  long dim_, actions_;
  double noise_;
  RandomStream base_;
  std::vector<std::vector<double>> thetas_;
};

// binary contexts; action 0 is safe (reward 0), action 1 pays +5 or -35 with
// odds set by a hidden label readable from the first context bit
class MushroomStyleEnv final : public BanditEnv {
 public:
  explicit MushroomStyleEnv(long dim, std::uint64_t seed);
  std::string kind() const override { return "mushroom-style"; }
  long context_dim() const override { return dim_; }
  long action_count() const override { return 2; }
  BanditStep step(long t) const override;

 private:
  long dim_;
  RandomStream base_;
};

std::unique_ptr<BanditEnv> make_env(const std::string& kind, long dim, long actions,
                                    std::uint64_t seed);

class BanditAgent {
 public:
  virtual ~BanditAgent() = default;
  virtual std::string name() const = 0;
  virtual long choose(long t, const std::vector<double>& context, RandomStream& rs) = 0;
  virtual void observe(const std::vector<double>&, long, double, RandomStream&) {}
};

class UniformAgent final : public BanditAgent {
 public:
  explicit UniformAgent(long actions) : actions_(actions) {}
  std::string name() const override { return "uniform"; }
  long choose(long t, const std::vector<double>& context, RandomStream& rs) override;

 private:
  long actions_;
};

// replays the environment's own expected rewards; regret reference point
class OracleAgent final : public BanditAgent {
 public:
  explicit OracleAgent(const BanditEnv& env) : env_(env) {}
  std::string name() const override { return "oracle"; }
  long choose(long t, const std::vector<double>& context, RandomStream& rs) override;

 private:
  const BanditEnv& env_;
};

struct ThompsonOptions {
  std::string family = "diag";
  long hidden = 50;
  long retrain_period = 50;
  long retrain_iters = 50;
  long batch_size = 128;
  double lr = 0.01;
  double init_sigma = 0.1;
  double noise_sigma = 1.0;   // gaussian reward likelihood scale
  double prior_lambda = 1.0;
  double beta = 1.0;          // weight on the divergence term while retraining
  bool warmup = true;         // play each action once before sampling
  KroneckerNonlinear::Options flow;
};

// one posterior draw per decision, greedy on the sampled reward heads
class ThompsonMlpAgent final : public BanditAgent {
 public:
  ThompsonMlpAgent(long dim, long actions, const ThompsonOptions& opt, std::uint64_t seed);
  std::string name() const override { return "thompson-" + opt_.family; }
  long choose(long t, const std::vector<double>& context, RandomStream& rs) override;
  void observe(const std::vector<double>& context, long action, double reward,
               RandomStream& rs) override;
  StochasticMLP& model() { return model_; }
  long buffer_size() const { return static_cast<long>(rewards_.size()); }

 private:
  void retrain(RandomStream& rs);

  long dim_, actions_;
  ThompsonOptions opt_;
  StochasticMLP model_;
  IsotropicPrior prior_;
  std::unique_ptr<Adam> opt_state_;
  std::vector<double> contexts_;  // flattened rows
  std::vector<long> actions_taken_;
  std::vector<double> rewards_;
  long seen_ = 0;
};

// exact conjugate posterior for a linear reward model, one block per action
class BlrThompsonAgent final : public BanditAgent {
 public:
  BlrThompsonAgent(long dim, long actions, double prior_tau = 3.0, double noise = 0.5);
  std::string name() const override { return "blr-thompson"; }
  long choose(long t, const std::vector<double>& context, RandomStream& rs) override;
  void observe(const std::vector<double>& context, long action, double reward,
               RandomStream& rs) override;

 private:
  long dim_, actions_;
  double noise_;
  std::vector<Mat> precision_;  // per action
  std::vector<Vec> xty_;
};

struct RegretRecord {
  long t = 0;
  long action = 0;
  double reward = 0.0;
  double inst_regret = 0.0;
  double cum_regret = 0.0;
};

struct RegretTrace {
  std::vector<RegretRecord> records;
  double final_regret() const;
  double regret_at(long t) const;  // cumulative regret after step t
  void write_csv(std::ostream& os) const;
};

RegretTrace run_episode(BanditAgent& agent, const BanditEnv& env, long t_max,
                        RandomStream& rs);

// R_T(agent) / R_T(uniform) with matched environment randomness
double normalized_regret(const RegretTrace& agent_trace, const RegretTrace& uniform_trace);

}  // namespace kflow
