#include "kflow/bandit.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"

using namespace kflow;

namespace {

// every action pays the same, so regret is identically zero
class FlatEnv final : public BanditEnv {
 public:
  std::string kind() const override { return "flat"; }
  long context_dim() const override { return 2; }
  long action_count() const override { return 3; }
  BanditStep step(long) const override {
    return {{0.0, 1.0}, {1.0, 1.0, 1.0}, {1.0, 1.0, 1.0}};
  }
};

}  // namespace

TEST_CASE("environment steps are pure functions of seed and time") {
  LinearGaussianEnv a(8, 4, 21), b(8, 4, 21), c(8, 4, 22);
  BanditStep s1 = a.step(5);
  BanditStep s2 = b.step(5);
  for (size_t i = 0; i < s1.context.size(); ++i) CHECK(s1.context[i] == s2.context[i]);
  for (size_t i = 0; i < s1.realized_reward.size(); ++i) {
    CHECK(s1.realized_reward[i] == s2.realized_reward[i]);
  }
  // later queries do not disturb earlier ones
  b.step(123);
  BanditStep s3 = b.step(5);
  CHECK(s3.context == s1.context);
  CHECK(c.step(5).context != s1.context);
  CHECK_THROWS_WITH_AS(a.step(-1), doctest::Contains("nonnegative"), kflow::error);
  CHECK_THROWS_WITH_AS(make_env("poker", 4, 2, 1), doctest::Contains("unknown bandit"),
                       kflow::error);
}

TEST_CASE("mushroom rewards follow the hidden label") {
  MushroomStyleEnv env(6, 31);
  for (long t = 0; t < 200; ++t) {
    BanditStep s = env.step(t);
    CHECK(s.expected_reward[0] == 0.0);
    CHECK(s.realized_reward[0] == 0.0);
    bool good = s.context[0] > 0.5;
    CHECK(s.expected_reward[1] == (good ? 3.0 : -31.0));
    CHECK((s.realized_reward[1] == 5.0 || s.realized_reward[1] == -35.0));
    for (double v : s.context) CHECK((v == 0.0 || v == 1.0));
  }
}

TEST_CASE("a collapsed posterior plays greedily and ignores output shifts") {
  ThompsonOptions opt;
  opt.init_sigma = 1e-12;
  opt.warmup = false;
  opt.hidden = 12;
  ThompsonMlpAgent agent(4, 3, opt, 77);
  std::vector<double> ctx{0.4, -1.2, 0.3, 0.9};

  Tensor x({1, 4}, std::vector<double>(ctx));
  Tensor lm = agent.model().forward_mean(x);
  long greedy = 0;
  for (long j = 1; j < 3; ++j) {
    if (lm.values()[static_cast<size_t>(j)] > lm.values()[static_cast<size_t>(greedy)]) {
      greedy = j;
    }
  }
  RandomStream rs(5);
  for (int i = 0; i < 10; ++i) CHECK(agent.choose(i, ctx, rs) == greedy);

  // adding the same constant to every head leaves the argmax alone
  for (auto& [name, p] : agent.model().named_parameters()) {
    if (name == "layer1.bias.M") {
      for (double& v : p.mutable_values()) v += 3.7;
    }
  }
  CHECK(agent.choose(0, ctx, rs) == greedy);
}

TEST_CASE("a symmetric posterior splits two actions evenly") {
  ThompsonOptions opt;
  opt.warmup = false;
  opt.hidden = 16;
  ThompsonMlpAgent agent(4, 2, opt, 3);
  for (auto& [name, p] : agent.model().named_parameters()) {
    bool is_mean = name.size() >= 2 && name.compare(name.size() - 2, 2, ".M") == 0;
    bool is_rho = name.size() >= 4 && name.compare(name.size() - 4, 4, ".rho") == 0;
    for (double& v : p.mutable_values()) {
      if (is_mean) v = 0.0;
      if (is_rho) v = inv_softplus_d(0.3);
    }
  }
  std::vector<double> ctx{0.8, -0.3, 1.1, 0.2};
  RandomStream rs(9);
  long zeros = 0;
  const long n = 10000;
  for (long i = 0; i < n; ++i) {
    if (agent.choose(i, ctx, rs) == 0) ++zeros;
  }
  double sd = std::sqrt(0.25 * n);
  CHECK(std::abs(static_cast<double>(zeros) - 0.5 * n) < 3.0 * sd);
}

TEST_CASE("oracle regret is zero and uniform normalizes to one") {
  LinearGaussianEnv env(8, 4, 99);
  OracleAgent oracle(env);
  UniformAgent uniform(4);
  RandomStream r1(1), r2(1);
  RegretTrace to = run_episode(oracle, env, 200, r1);
  RegretTrace tu = run_episode(uniform, env, 200, r2);

  CHECK(to.final_regret() == 0.0);
  CHECK(normalized_regret(tu, tu) == 1.0);
  CHECK(normalized_regret(to, tu) == 0.0);

  double prev = 0.0;
  bool monotone = true, nonneg = true;
  for (const auto& r : tu.records) {
    monotone = monotone && r.cum_regret >= prev;
    nonneg = nonneg && r.inst_regret >= 0.0;
    prev = r.cum_regret;
  }
  CHECK(monotone);
  CHECK(nonneg);

  FlatEnv flat;
  UniformAgent fu(3);
  RandomStream r3(1);
  RegretTrace tf = run_episode(fu, flat, 50, r3);
  CHECK_THROWS_WITH_AS(normalized_regret(tf, tf), doctest::Contains("degenerate"),
                       kflow::error);
}

TEST_CASE("conjugate linear thompson sampling has sublinear regret") {
  LinearGaussianEnv env(8, 4, 99);
  BlrThompsonAgent agent(8, 4);
  RandomStream rs(1);
  RegretTrace tr = run_episode(agent, env, 2000, rs);
  double early = tr.regret_at(199) / 200.0;
  double late = tr.regret_at(1999) / 2000.0;
  CHECK(late < 0.5 * early);
}

TEST_CASE("stochastic network thompson sampling beats uniform on both environments") {
  for (const char* kind : {"linear-gaussian", "mushroom-style"}) {
    auto env = make_env(kind, 8, 4, 99);
    ThompsonOptions opt;
    if (env->kind() == "mushroom-style") opt.noise_sigma = 10.0;
    ThompsonMlpAgent agent(env->context_dim(), env->action_count(), opt, 107);
    UniformAgent uniform(env->action_count());
    RandomStream ra(7), ru(7);
    RegretTrace ta = run_episode(agent, *env, 1200, ra);
    RegretTrace tu = run_episode(uniform, *env, 1200, ru);
    CHECK(normalized_regret(ta, tu) < 0.8);
  }
}

TEST_CASE("regret traces serialize deterministically") {
  LinearGaussianEnv env(6, 3, 13);
  UniformAgent uniform(3);
  RandomStream r1(4), r2(4);
  RegretTrace t1 = run_episode(uniform, env, 40, r1);
  RegretTrace t2 = run_episode(uniform, env, 40, r2);
  std::ostringstream s1, s2;
  t1.write_csv(s1);
  t2.write_csv(s2);
  CHECK(s1.str() == s2.str());
  CHECK(s1.str().substr(0, 38) == "t,action,reward,inst_regret,cum_regret");
  CHECK(t1.records.size() == 40);
  CHECK_THROWS_WITH_AS(t1.regret_at(40), doctest::Contains("out of range"), kflow::error);
  CHECK_THROWS_WITH_AS(run_episode(uniform, env, 0, r1),
                       doctest::Contains("episode length must be positive"), kflow::error);
}
