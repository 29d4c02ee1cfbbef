#include "kflow/runner.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>
#include <vector>

#include "kflow/bandit.hpp"
#include "kflow/certify.hpp"
#include "kflow/common.hpp"
#include "kflow/datasets.hpp"
#include "kflow/experiments.hpp"
#include "kflow/io.hpp"
#include "kflow/snn.hpp"

namespace kflow {

namespace {

long parse_long_token(const std::string& tok, const std::string& what) {
  try {
    size_t used = 0;
    long v = std::stol(tok, &used);
    require(used == tok.size(), what + " is not an integer: " + tok);
    return v;
  } catch (const kflow::error&) {
    throw;
  } catch (const std::exception&) {
    fail(what + " is not an integer: " + tok);
  }
}

double parse_double_token(const std::string& tok, const std::string& what) {
  try {
    size_t used = 0;
    double v = std::stod(tok, &used);
    require(used == tok.size(), what + " is not a number: " + tok);
    return v;
  } catch (const kflow::error&) {
    throw;
  } catch (const std::exception&) {
    fail(what + " is not a number: " + tok);
  }
}

// "4x4" or "2x3x4" into an axis list
Shape parse_shape(const std::string& tok) {
  Shape dims;
  size_t start = 0;
  while (start <= tok.size()) {
    size_t x = tok.find('x', start);
    if (x == std::string::npos) x = tok.size();
    dims.push_back(parse_long_token(tok.substr(start, x - start), "shape axis"));
    start = x + 1;
  }
  require(dims.size() >= 2, "shape needs at least two axes, got " + tok);
  return dims;
}

KroneckerNonlinear::Options flow_options(const Config& cfg, const std::string& sec) {
  KroneckerNonlinear::Options f;
  f.layer_type = cfg.get_or(sec, "flow_layer_type", f.layer_type);
  f.layers_per_axis =
      static_cast<int>(cfg.get_long_or(sec, "flow_layers_per_axis", f.layers_per_axis));
  f.scaled_layers = cfg.get_bool_or(sec, "flow_scaled_layers", f.scaled_layers);
  f.outer_affine = cfg.get_bool_or(sec, "flow_outer_affine", f.outer_affine);
  f.reverse_axis_order = cfg.get_bool_or(sec, "flow_reverse_axis_order", f.reverse_axis_order);
  f.init_scale = cfg.get_double_or(sec, "flow_init_scale", f.init_scale);
  f.init_sigma = cfg.get_double_or(sec, "flow_init_sigma", f.init_sigma);
  return f;
}

Dataset load_dataset(const Config& cfg, std::uint64_t seed) {
  const std::string source = cfg.get_or("data", "source", "blobs");
  RandomStream rs(seed, 17);
  if (source == "blobs") {
    return make_blobs(cfg.get_long_or("data", "n", 600), cfg.get_long_or("data", "classes", 3),
                      rs, cfg.get_double_or("data", "stddev", 0.5),
                      cfg.get_double_or("data", "radius", 2.0));
  }
  if (source == "moons") {
    return make_moons(cfg.get_long_or("data", "n", 600), rs,
                      cfg.get_double_or("data", "noise", 0.1));
  }
  if (source == "idx") {
    return load_idx(cfg.get("data", "images"), cfg.get("data", "labels"),
                    cfg.get_long_or("data", "max_count", 0));
  }
  fail("unknown data source " + source);
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& d, double frac) {
  require(frac >= 0.0 && frac < 1.0, "holdout fraction must lie in [0,1)");
  const long n = d.size();
  const long n_eval = static_cast<long>(std::llround(frac * static_cast<double>(n)));
  const long n_train = n - n_eval;
  require(n_train >= 1, "holdout leaves no training data");
  Dataset train = subset(d, 0, n_train, "train");
  Dataset hold;
  if (n_eval > 0) hold = subset(d, n_train, n_eval, "holdout");
  return {std::move(train), std::move(hold)};
}

MlpOptions model_options(const Config& cfg) {
  MlpOptions mo;
  mo.family = cfg.get_or("model", "family", "diag");
  mo.hidden_activation = cfg.get_or("model", "activation", "tanh");
  mo.init_sigma = cfg.get_double_or("model", "init_sigma", 0.05);
  mo.flow = flow_options(cfg, "model");
  return mo;
}

std::vector<long> model_widths(const Config& cfg, const Dataset& d) {
  std::vector<long> widths{d.features()};
  if (cfg.has("model", "hidden")) {
    for (const auto& tok : cfg.get_list("model", "hidden")) {
      widths.push_back(parse_long_token(tok, "hidden width"));
    }
  }
  widths.push_back(d.classes);
  return widths;
}

TrainConfig train_config(const Config& cfg, std::uint64_t seed) {
  TrainConfig tc;
  tc.lr = cfg.get_double_or("train", "lr", tc.lr);
  tc.epochs = cfg.get_long_or("train", "epochs", 10);
  tc.batch_size = cfg.get_long_or("train", "batch_size", tc.batch_size);
  tc.beta_start = cfg.get_double_or("train", "beta_start", tc.beta_start);
  tc.beta_end = cfg.get_double_or("train", "beta_end", tc.beta_end);
  tc.anneal_iters = cfg.get_long_or("train", "anneal_iters", tc.anneal_iters);
  tc.polyak = cfg.get_double_or("train", "polyak", tc.polyak);
  tc.train_samples = cfg.get_long_or("train", "train_samples", tc.train_samples);
  tc.objective = cfg.get_or("train", "objective", tc.objective);
  tc.prior.lambda = cfg.get_double_or("train", "lambda", tc.prior.lambda);
  tc.seed = seed;
  tc.delta = cfg.get_double_or("train", "delta", tc.delta);
  tc.catoni_beta = cfg.get_double_or("train", "catoni_beta", tc.catoni_beta);
  tc.train_beta = cfg.get_bool_or("train", "train_beta", tc.train_beta);
  tc.train_lambda = cfg.get_bool_or("train", "train_lambda", tc.train_lambda);
  tc.lambda_b = cfg.get_double_or("train", "lambda_b", tc.lambda_b);
  tc.lambda_c = cfg.get_double_or("train", "lambda_c", tc.lambda_c);
  tc.cosine_lr = cfg.get_bool_or("train", "cosine_lr", tc.cosine_lr);
  tc.pretrain_epochs = cfg.get_long_or("train", "pretrain_epochs", tc.pretrain_epochs);
  return tc;
}

// keep plotted series small without touching the csv records
std::vector<size_t> plot_indexes(size_t n, size_t cap = 200) {
  std::vector<size_t> idx;
  if (n == 0) return idx;
  const size_t stride = std::max<size_t>(1, n / cap);
  for (size_t i = 0; i < n; i += stride) idx.push_back(i);
  if (idx.back() != n - 1) idx.push_back(n - 1);
  return idx;
}

}  // namespace

std::string run_simulate(const Config& cfg, std::uint64_t seed, const std::string& out_dir) {
  std::vector<Shape> shapes;
  for (const auto& tok : cfg.get_list("simulate", "shapes")) shapes.push_back(parse_shape(tok));
  std::vector<std::string> families = cfg.get_list("simulate", "families");
  const long trials = cfg.get_long_or("simulate", "trials", 25);
  FitOptions fit;
  fit.steps = cfg.get_long_or("simulate", "steps", fit.steps);
  fit.lr = cfg.get_double_or("simulate", "lr", fit.lr);
  fit.rounds = cfg.get_long_or("simulate", "rounds", fit.rounds);
  fit.cosine_lr = cfg.get_bool_or("simulate", "cosine_lr", fit.cosine_lr);

  RandomStream rs(seed, 11);
  SimulateResults res = simulate_kl(shapes, families, trials, fit, rs);

  ensure_dir(out_dir);
  std::ostringstream csv;
  csv << provenance_line(cfg.hash(), seed);
  csv << "record,shape,d,family,trial,final_kl,mean_kl,std_kl\n";
  for (const auto& r : res.rows) {
    csv << "trial," << r.shape << ',' << r.d << ',' << r.family << ',' << r.trial << ','
        << format_double(r.kl) << ",,\n";
  }
  for (const auto& s : res.summary) {
    csv << "summary," << s.shape << ',' << s.d << ',' << s.family << ",,,"
        << format_double(s.mean) << ',' << format_double(s.stddev) << '\n';
  }
  write_text_file(out_dir + "/simulate_kl.csv", csv.str());

  if (!res.summary.empty()) {
    std::vector<PlotSeries> series;
    for (const auto& fam : families) {
      PlotSeries ps;
      ps.label = fam;
      for (const auto& s : res.summary) {
        if (s.family != fam) continue;
        ps.x.push_back(static_cast<double>(s.d));
        ps.y.push_back(std::max(s.mean, 1e-12));
        ps.band.push_back(0.1 * s.stddev);
      }
      series.push_back(std::move(ps));
    }
    PlotOptions po;
    po.title = "final kl against dense random targets";
    po.x_label = "weight dimension";
    po.y_label = "kl divergence";
    po.log_y = true;
    po.config_hash = cfg.hash();
    po.seed = seed;
    std::ostringstream svg;
    write_svg_plot(svg, series, po);
    write_text_file(out_dir + "/simulate_kl.svg", svg.str());
  }

  std::ostringstream sum;
  sum << "simulate-kl: " << res.rows.size() << " trials over " << res.summary.size()
      << " shape-family cells, outputs in " << out_dir;
  return sum.str();
}

namespace {

// train plus both error rates; shared by the train and certify runners
struct TrainedRun {
  Dataset train_set;
  Dataset eval_set;
  MlpOptions mo;
  TrainConfig tc;
  TrainResult result;
  double train_error;
  double holdout_error;  // negative means no holdout split
};

TrainedRun run_training(const Config& cfg, std::uint64_t seed) {
  Dataset all = load_dataset(cfg, seed);
  auto split = split_holdout(all, cfg.get_double_or("data", "holdout", 0.2));
  MlpOptions mo = model_options(cfg);
  RandomStream ms(seed, 29);
  StochasticMLP model(model_widths(cfg, all), mo, ms);
  TrainConfig tc = train_config(cfg, seed);
  TrainResult result = train(model, split.first, tc);

  const long eval_samples = cfg.get_long_or("train", "eval_samples", 100);
  RandomStream er(seed, 43);
  double train_error = classification_error(result.polyak, split.first, eval_samples, er);
  double holdout_error = -1.0;
  if (split.second.size() > 0) {
    holdout_error = classification_error(result.polyak, split.second, eval_samples, er);
  }
  return {std::move(split.first), std::move(split.second), std::move(mo),
          std::move(tc),          std::move(result),       train_error,
          holdout_error};
}

void write_trace_outputs(const Config& cfg, std::uint64_t seed, const std::string& out_dir,
                         const TrainedRun& run) {
  std::ostringstream trace_csv;
  trace_csv << provenance_line(cfg.hash(), seed);
  run.result.trace.write_csv(trace_csv);
  write_text_file(out_dir + "/train_trace.csv", trace_csv.str());

  const auto& recs = run.result.trace.records;
  if (recs.empty()) return;
  PlotSeries obj, risk;
  obj.label = "objective";
  risk.label = "risk";
  for (const auto& r : recs) {
    obj.x.push_back(static_cast<double>(r.epoch));
    obj.y.push_back(r.objective);
    risk.x.push_back(static_cast<double>(r.epoch));
    risk.y.push_back(r.risk);
  }
  PlotOptions po;
  po.title = "training progress";
  po.x_label = "epoch";
  po.y_label = "value";
  po.config_hash = cfg.hash();
  po.seed = seed;
  std::ostringstream svg;
  write_svg_plot(svg, {obj, risk}, po);
  write_text_file(out_dir + "/objective.svg", svg.str());
}

}  // namespace

std::string run_train_snn(const Config& cfg, std::uint64_t seed, const std::string& out_dir) {
  TrainedRun run = run_training(cfg, seed);
  ensure_dir(out_dir);
  write_trace_outputs(cfg, seed, out_dir, run);

  std::ostringstream ck;
  serialize_mlp(ck, run.result.polyak);
  write_text_file(out_dir + "/model_checkpoint.txt", ck.str());

  std::ostringstream sum;
  sum << provenance_line(cfg.hash(), seed);
  sum << "family " << run.mo.family << '\n';
  sum << "objective " << run.tc.objective << '\n';
  sum << "epochs " << run.tc.epochs << '\n';
  sum << "train_size " << run.train_set.size() << '\n';
  sum << "holdout_size " << run.eval_set.size() << '\n';
  sum << "train_error " << format_double(run.train_error) << '\n';
  if (run.holdout_error >= 0.0) {
    sum << "holdout_error " << format_double(run.holdout_error) << '\n';
  }
  sum << "final_beta " << format_double(run.result.trace.final_beta) << '\n';
  sum << "final_lambda " << format_double(run.result.trace.final_lambda) << '\n';
  write_text_file(out_dir + "/summary.txt", sum.str());

  std::ostringstream line;
  line << "train-snn: family " << run.mo.family << ", train error "
       << format_double(run.train_error);
  if (run.holdout_error >= 0.0) {
    line << ", holdout error " << format_double(run.holdout_error);
  }
  line << ", outputs in " << out_dir;
  return line.str();
}

std::string run_certify(const Config& cfg, std::uint64_t seed, const std::string& out_dir) {
  TrainedRun run = run_training(cfg, seed);

  IsotropicPrior prior = run.result.trace.prior;
  if (run.result.trace.final_lambda > 0.0) prior.lambda = run.result.trace.final_lambda;

  CertifyOptions co;
  co.delta_total = cfg.get_double_or("certify", "delta_total", co.delta_total);
  co.risk_samples = cfg.get_long_or("certify", "risk_samples", co.risk_samples);
  co.kl_samples = cfg.get_long_or("certify", "kl_samples", co.kl_samples);
  co.kl_mode = cfg.get_or("certify", "kl_mode", co.kl_mode);
  co.lambda_tuned = run.tc.train_lambda;
  co.lambda_b = run.tc.lambda_b;
  co.lambda_c = run.tc.lambda_c;
  co.seed = seed;
  CertifiedBound cb = certify(run.result.polyak, run.train_set, prior, co);

  ensure_dir(out_dir);
  write_trace_outputs(cfg, seed, out_dir, run);

  std::ostringstream rep;
  rep << provenance_line(cfg.hash(), seed);
  write_certified_report(rep, cb);
  rep << "train_error " << format_double(run.train_error) << '\n';
  if (run.holdout_error >= 0.0) {
    rep << "holdout_error " << format_double(run.holdout_error) << '\n';
  }
  write_text_file(out_dir + "/certify_report.txt", rep.str());

  std::ostringstream ledger;
  ledger << provenance_line(cfg.hash(), seed);
  ledger << report_csv_header() << '\n' << report_csv_row(cb.report) << '\n';
  write_text_file(out_dir + "/certify_results.csv", ledger.str());

  std::ostringstream line;
  line << "certify: family " << run.mo.family << ", bound " << format_double(cb.report.value)
       << ", gibbs risk " << format_double(cb.gibbs_risk);
  if (run.holdout_error >= 0.0) {
    line << ", holdout error " << format_double(run.holdout_error);
  }
  line << ", outputs in " << out_dir;
  return line.str();
}

namespace {

struct EpisodeRow {
  std::string env;
  std::string agent;
  long seed = 0;
  double final_regret = 0.0;
  double normalized = 0.0;
};

ThompsonOptions thompson_options(const Config& cfg, const std::string& family) {
  ThompsonOptions to;
  to.family = family;
  to.hidden = cfg.get_long_or("bandit", "hidden", to.hidden);
  to.retrain_period = cfg.get_long_or("bandit", "retrain_period", to.retrain_period);
  to.retrain_iters = cfg.get_long_or("bandit", "retrain_iters", to.retrain_iters);
  to.batch_size = cfg.get_long_or("bandit", "batch_size", to.batch_size);
  to.lr = cfg.get_double_or("bandit", "lr", to.lr);
  to.init_sigma = cfg.get_double_or("bandit", "init_sigma", to.init_sigma);
  to.prior_lambda = cfg.get_double_or("bandit", "prior_lambda", to.prior_lambda);
  to.beta = cfg.get_double_or("bandit", "beta", to.beta);
  to.warmup = cfg.get_bool_or("bandit", "warmup", to.warmup);
  to.flow = flow_options(cfg, "bandit");
  return to;
}

}  // namespace

std::string run_bandit(const Config& cfg, std::uint64_t seed, const std::string& out_dir) {
  std::vector<std::string> envs = cfg.has("bandit", "environments")
                                      ? cfg.get_list("bandit", "environments")
                                      : std::vector<std::string>{"linear-gaussian"};
  require(!envs.empty(), "bandit needs at least one environment");
  const long dim = cfg.get_long_or("bandit", "context_dim", 8);
  const long actions = cfg.get_long_or("bandit", "actions", 4);
  const long t_max = cfg.get_long_or("bandit", "t_max", 2000);
  std::vector<long> ep_seeds;
  if (cfg.has("bandit", "seeds")) {
    for (const auto& tok : cfg.get_list("bandit", "seeds")) {
      ep_seeds.push_back(parse_long_token(tok, "bandit seed"));
    }
  } else {
    ep_seeds = {0, 1, 2};
  }
  require(!ep_seeds.empty(), "bandit needs at least one seed");
  std::vector<std::string> families;
  if (cfg.has("bandit", "families")) families = cfg.get_list("bandit", "families");
  const bool include_blr = cfg.get_bool_or("bandit", "include_blr", true);
  const bool include_oracle = cfg.get_bool_or("bandit", "include_oracle", true);

  // reward noise passed to the thompson agents, one value per environment
  // (a single value applies everywhere)
  std::vector<double> noise(envs.size(), 1.0);
  if (cfg.has("bandit", "noise_sigma")) {
    auto toks = cfg.get_list("bandit", "noise_sigma");
    require(toks.size() == 1 || toks.size() == envs.size(),
            "noise_sigma needs one value or one per environment");
    for (size_t i = 0; i < envs.size(); ++i) {
      noise[i] = parse_double_token(toks[toks.size() == 1 ? 0 : i], "noise_sigma");
    }
  }

  ensure_dir(out_dir);
  std::vector<EpisodeRow> rows;
  RandomStream base(seed, 57);

  for (size_t ei = 0; ei < envs.size(); ++ei) {
    std::vector<PlotSeries> curves;
    for (size_t si = 0; si < ep_seeds.size(); ++si) {
      const long s = ep_seeds[si];
      auto env = make_env(envs[ei], dim, actions,
                          seed + static_cast<std::uint64_t>(s));
      const std::uint64_t tag_base = (static_cast<std::uint64_t>(ei) << 32) |
                                     (static_cast<std::uint64_t>(si) << 16);

      UniformAgent uniform(env->action_count());
      RandomStream ur = base.sub(tag_base);
      RegretTrace tu = run_episode(uniform, *env, t_max, ur);

      struct Ran {
        std::string name;
        RegretTrace trace;
      };
      std::vector<Ran> ran;
      ran.push_back({uniform.name(), tu});

      if (include_oracle) {
        OracleAgent oracle(*env);
        RandomStream orr = base.sub(tag_base + 1);
        ran.push_back({oracle.name(), run_episode(oracle, *env, t_max, orr)});
      }
      if (include_blr) {
        BlrThompsonAgent blr(env->context_dim(), env->action_count());
        RandomStream br = base.sub(tag_base + 2);
        ran.push_back({blr.name(), run_episode(blr, *env, t_max, br)});
      }
      for (size_t fi = 0; fi < families.size(); ++fi) {
        ThompsonOptions to = thompson_options(cfg, families[fi]);
        to.noise_sigma = noise[ei];
        const std::uint64_t agent_seed =
            seed * 7919 + tag_base + 16 + static_cast<std::uint64_t>(fi);
        ThompsonMlpAgent agent(env->context_dim(), env->action_count(), to, agent_seed);
        RandomStream ar = base.sub(tag_base + 16 + static_cast<std::uint64_t>(fi));
        ran.push_back({agent.name(), run_episode(agent, *env, t_max, ar)});
      }

      for (const auto& r : ran) {
        EpisodeRow row;
        row.env = envs[ei];
        row.agent = r.name;
        row.seed = s;
        row.final_regret = r.trace.final_regret();
        row.normalized = normalized_regret(r.trace, tu);
        rows.push_back(row);
        if (si == 0) {
          PlotSeries ps;
          ps.label = r.name;
          for (size_t i : plot_indexes(r.trace.records.size())) {
            ps.x.push_back(static_cast<double>(r.trace.records[i].t));
            ps.y.push_back(r.trace.records[i].cum_regret);
          }
          curves.push_back(std::move(ps));
        }
      }
    }

    PlotOptions po;
    po.title = "cumulative regret, " + envs[ei];
    po.x_label = "step";
    po.y_label = "cumulative regret";
    po.config_hash = cfg.hash();
    po.seed = seed;
    std::ostringstream svg;
    write_svg_plot(svg, curves, po);
    write_text_file(out_dir + "/regret_" + envs[ei] + ".svg", svg.str());
  }

  std::ostringstream csv;
  csv << provenance_line(cfg.hash(), seed);
  csv << "record,env,agent,seed,final_regret,normalized_regret\n";
  for (const auto& r : rows) {
    csv << "episode," << r.env << ',' << r.agent << ',' << r.seed << ','
        << format_double(r.final_regret) << ',' << format_double(r.normalized) << '\n';
  }
  // per (env, agent) means over the seed list, in first-appearance order
  std::vector<std::pair<std::string, std::string>> cells;
  for (const auto& r : rows) {
    std::pair<std::string, std::string> key{r.env, r.agent};
    if (std::find(cells.begin(), cells.end(), key) == cells.end()) cells.push_back(key);
  }
  for (const auto& key : cells) {
    double fr = 0.0, nr = 0.0;
    long n = 0;
    for (const auto& r : rows) {
      if (r.env != key.first || r.agent != key.second) continue;
      fr += r.final_regret;
      nr += r.normalized;
      ++n;
    }
    csv << "mean," << key.first << ',' << key.second << ",,"
        << format_double(fr / static_cast<double>(n)) << ','
        << format_double(nr / static_cast<double>(n)) << '\n';
  }
  write_text_file(out_dir + "/bandit_summary.csv", csv.str());

  std::ostringstream line;
  line << "bandit: " << rows.size() << " episodes across " << envs.size()
       << " environments, outputs in " << out_dir;
  return line.str();
}

std::string run_experiment(const Config& cfg, std::uint64_t seed, const std::string& out_dir) {
  const std::string kind = cfg.get("experiment", "kind");
  if (kind == "simulate-kl") return run_simulate(cfg, seed, out_dir);
  if (kind == "train-snn") return run_train_snn(cfg, seed, out_dir);
  if (kind == "certify") return run_certify(cfg, seed, out_dir);
  if (kind == "bandit") return run_bandit(cfg, seed, out_dir);
  fail("unknown experiment kind " + kind);
}

}  // namespace kflow
