#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "env.hpp"
#include "pretrain.hpp"
#include "rewards.hpp"
#include "snapshot.hpp"
#include "trainer.hpp"

namespace thinkedit {

inline constexpr const char* kOutDirEnv = "THINKEDIT_OUT_DIR";
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumeric = 3;

// Everything a command needs: training hyperparameters, the variant, the judge
// noise and the settings of the seeded studies.
struct RunConfig {
  TrainConfig train;
  VariantFlags variant;
  JudgeNoise noise;
  std::vector<std::uint64_t> seeds{1, 2, 3};  // ablation seed list
  int rv_pairs = 50;
  int rv_reps = 1000;
  int rv_n_obj = 2;                       // two objects give four checklist items
  std::uint64_t rv_seed = 17;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T out{};
  in >> out;
  std::string rest;
  if (in.fail() || (in >> rest)) throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  if constexpr (std::is_unsigned_v<T>)
    if (!v.empty() && v[0] == '-') throw ConfigError("config key '" + key + "': must be non-negative");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& v) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(parse_number<std::uint64_t>(key, trim(tok)));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = [] {
    std::map<std::string, Setter> k;
    auto i = [&](const char* name, int TrainConfig::*f) {
      k[name] = [f](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.*f = parse_number<int>(key, v);
      };
    };
    auto d = [&](const char* name, double TrainConfig::*f) {
      k[name] = [f](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.*f = parse_number<double>(key, v);
      };
    };
    auto u = [&](const char* name, std::uint64_t TrainConfig::*f) {
      k[name] = [f](RunConfig& c, const std::string& key, const std::string& v) {
        c.train.*f = parse_number<std::uint64_t>(key, v);
      };
    };
    i("G", &TrainConfig::G);
    i("T", &TrainConfig::T);
    d("tau", &TrainConfig::tau);
    d("epsilon_clip", &TrainConfig::epsilon_clip);
    d("beta_kl", &TrainConfig::beta_kl);
    d("sigma_a", &TrainConfig::sigma_a);
    d("eta", &TrainConfig::eta);
    d("eta_und", &TrainConfig::eta_und);
    i("M", &TrainConfig::M);
    u("seed", &TrainConfig::seed);
    d("t_min", &TrainConfig::t_min);
    d("temperature_plan", &TrainConfig::temperature_plan);
    d("sigma_floor", &TrainConfig::sigma_floor);
    i("batch_tasks", &TrainConfig::batch_tasks);
    d("adam_beta1", &TrainConfig::adam_beta1);
    d("adam_beta2", &TrainConfig::adam_beta2);
    d("adam_eps", &TrainConfig::adam_eps);
    d("weight_decay", &TrainConfig::weight_decay);
    d("grad_clip", &TrainConfig::grad_clip);
    k["shared_plan"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.train.shared_plan = parse_bool(key, v);
    };
    k["refined_credits_plan"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.train.refined_credits_plan = parse_bool(key, v);
    };
    i("n_obj", &TrainConfig::n_obj);
    i("hidden", &TrainConfig::hidden);
    i("plan_len", &TrainConfig::plan_len);
    i("eval_every", &TrainConfig::eval_every);
    i("eval_tasks", &TrainConfig::eval_tasks);
    i("checkpoint_every", &TrainConfig::checkpoint_every);
    u("base_seed", &TrainConfig::base_seed);
    i("pretrain_steps", &TrainConfig::pretrain_steps);

    k["variant"] = [](RunConfig& c, const std::string&, const std::string& v) { c.variant = VariantFlags::parse(v); };
    auto flag = [&](const char* name, bool VariantFlags::*f) {
      k[name] = [f](RunConfig& c, const std::string& key, const std::string& v) { c.variant.*f = parse_bool(key, v); };
    };
    flag("use_gen", &VariantFlags::use_gen);
    flag("use_und", &VariantFlags::use_und);
    flag("use_plan", &VariantFlags::use_plan);
    flag("use_reflect", &VariantFlags::use_reflect);
    flag("use_ucpg", &VariantFlags::use_ucpg);
    flag("use_checklist", &VariantFlags::use_checklist);
    k["flip_prob"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.noise.flip_prob = parse_number<double>(key, v);
    };
    k["interval_sigma"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.noise.interval_sigma = parse_number<double>(key, v);
    };
    k["seeds"] = [](RunConfig& c, const std::string& key, const std::string& v) { c.seeds = parse_seed_list(key, v); };
    k["rv_pairs"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.rv_pairs = parse_number<int>(key, v);
    };
    k["rv_reps"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.rv_reps = parse_number<int>(key, v);
    };
    k["rv_n_obj"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.rv_n_obj = parse_number<int>(key, v);
    };
    k["rv_seed"] = [](RunConfig& c, const std::string& key, const std::string& v) {
      c.rv_seed = parse_number<std::uint64_t>(key, v);
    };
    return k;
  }();
  return keys;
}

}  // namespace detail

inline void validate(const RunConfig& c) {
  c.train.validate();
  c.variant.validate();
  c.noise.validate();
  if (c.rv_pairs < 1 || c.rv_reps < 2) throw ConfigError("rv_pairs must be >= 1 and rv_reps >= 2");
  if (c.rv_n_obj < 2 || c.rv_n_obj > 5) throw ConfigError("rv_n_obj must lie in [2, 5]");
}

// Flat `key = value` text; '#' starts a comment. Unknown or repeated keys are errors.
inline RunConfig parse_config(std::istream& in, RunConfig base = {}) {
  const auto& keys = detail::config_keys();
  std::map<std::string, int> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = keys.find(key);
    if (it == keys.end()) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    if (value.empty()) throw ConfigError("config key '" + key + "': empty value");
    it->second(base, key, value);
  }
  validate(base);
  return base;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config file: " + path);
  return parse_config(f);
}

inline std::filesystem::path default_out_dir() {
  if (const char* env = std::getenv(kOutDirEnv); env != nullptr && *env != '\0') return env;
  return "runs";
}

// --- JSON records --------------------------------------------------------------------

inline nlohmann::json config_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  return {{"G", t.G},
          {"T", t.T},
          {"tau", t.tau},
          {"epsilon_clip", t.epsilon_clip},
          {"beta_kl", t.beta_kl},
          {"sigma_a", t.sigma_a},
          {"eta", t.eta},
          {"eta_und", t.eta_und},
          {"M", t.M},
          {"seed", t.seed},
          {"t_min", t.t_min},
          {"temperature_plan", t.temperature_plan},
          {"sigma_floor", t.sigma_floor},
          {"batch_tasks", t.batch_tasks},
          {"adam_beta1", t.adam_beta1},
          {"adam_beta2", t.adam_beta2},
          {"adam_eps", t.adam_eps},
          {"weight_decay", t.weight_decay},
          {"grad_clip", t.grad_clip},
          {"shared_plan", t.shared_plan},
          {"refined_credits_plan", t.refined_credits_plan},
          {"n_obj", t.n_obj},
          {"hidden", t.hidden},
          {"plan_len", t.plan_len},
          {"eval_every", t.eval_every},
          {"eval_tasks", t.eval_tasks},
          {"checkpoint_every", t.checkpoint_every},
          {"base_seed", t.base_seed},
          {"pretrain_steps", t.pretrain_steps},
          {"variant", c.variant.to_string()},
          {"flip_prob", c.noise.flip_prob},
          {"interval_sigma", c.noise.interval_sigma}};
}

inline nlohmann::json iteration_json(const IterationMetrics& m) {
  return {{"type", "iteration"},
          {"iteration", m.iteration},
          {"mean_IF", m.mean_reward[0]},
          {"mean_VC", m.mean_reward[1]},
          {"mean_VQ", m.mean_reward[2]},
          {"chain_len_mean", m.chain_len_mean},
          {"group_size", m.group_size},
          {"und_objective", m.und_objective},
          {"gen_objective", m.gen_objective},
          {"und_kl", m.und_kl},
          {"gen_kl", m.gen_kl},
          {"und_clip_fraction", m.und_clip_fraction},
          {"gen_clip_fraction", m.gen_clip_fraction},
          {"und_grad_norm", m.und_grad_norm},
          {"gen_grad_norm", m.gen_grad_norm},
          {"und_samples", m.und_samples},
          {"gen_samples", m.gen_samples},
          {"timesteps", m.timesteps}};
}

inline nlohmann::json eval_json(const EvalPoint& p) {
  return {{"type", "eval"},        {"iteration", p.iteration}, {"mean_IF", p.mean_if},
          {"mean_VC", p.mean_vc},  {"mean_VQ", p.mean_vq},     {"noop_rate", p.noop_rate}};
}

inline nlohmann::json scene_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects())
    objs.push_back({{"pos", {o.pos[0], o.pos[1]}}, {"size", o.size}, {"color", o.color_id}, {"shape", o.shape_id}});
  return objs;
}

inline nlohmann::json instruction_json(const Instruction& in) {
  nlohmann::json j{{"family", family_name(in.family)}, {"referent", descriptor_name(in.referent)}};
  if (in.referent_color >= 0) j["referent_color"] = in.referent_color;
  if (in.family == Family::Move || in.family == Family::RelationalMove) {
    static const char* dirs[] = {"+x", "-x", "+y", "-y"};
    j["direction"] = dirs[static_cast<int>(in.direction)];
    j["magnitude"] = in.magnitude;
  }
  if (in.target_color >= 0) j["target_color"] = in.target_color;
  return j;
}

inline nlohmann::json trace_json(const PlanVocab& v, const ReasoningTrace& tr) {
  nlohmann::json toks = nlohmann::json::array();
  for (int t : tr.tokens) toks.push_back(v.name(t));
  return toks;
}

inline nlohmann::json checklist_json(const Checklist& cl) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : cl.items)
    items.push_back({{"predicate", predicate_name(it.predicate)}, {"object", it.object}, {"goal", it.goal}});
  return items;
}

// One line of a task dump, for corpus inspection and regression pinning.
inline nlohmann::json task_record_json(std::uint64_t seed, const Task& t) {
  return {{"seed", seed},
          {"family", family_name(t.instruction.family)},
          {"scene", scene_json(t.scene)},
          {"instruction", instruction_json(t.instruction)},
          {"checklist", checklist_json(build_checklist(t.scene, t.instruction))}};
}

// --- output helpers --------------------------------------------------------------------

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& p) : out_(p, std::ios::trunc) {
    if (!out_) throw ConfigError("cannot write " + p.string());
  }
  void write(const nlohmann::json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

inline void ensure_dir(const std::filesystem::path& d) {
  std::error_code ec;
  std::filesystem::create_directories(d, ec);
  if (ec) throw ConfigError("cannot create output directory " + d.string() + ": " + ec.message());
}

inline void write_plot_data(const std::filesystem::path& p, const std::vector<EvalPoint>& evals) {
  std::ofstream f(p, std::ios::trunc);
  if (!f) throw ConfigError("cannot write " + p.string());
  f << "iteration,mean_IF,mean_VC,mean_VQ\n";
  f << std::setprecision(10);
  for (const auto& e : evals) f << e.iteration << ',' << e.mean_if << ',' << e.mean_vc << ',' << e.mean_vq << '\n';
}

// --- commands ---------------------------------------------------------------------------

// Runs one training experiment. Files in out_dir:
//   metrics.jsonl  header, iteration and eval records, summary (deterministic)
//   timing.jsonl   wall-clock time per iteration
//   plot.csv       held-out curve
//   ckpt_<iter>.tksn, final.tksn
inline int cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log = std::cout) {
  validate(cfg);
  ensure_dir(out_dir);
  JsonlWriter metrics(out_dir / "metrics.jsonl");
  JsonlWriter timing(out_dir / "timing.jsonl");
  metrics.write({{"type", "header"}, {"command", "train"}, {"seeds", {cfg.train.seed}}, {"config", config_json(cfg)}});
  ExperimentHooks hooks;
  hooks.on_iteration = [&](const IterationMetrics& m, double ms) {
    metrics.write(iteration_json(m));
    timing.write({{"iteration", m.iteration}, {"wall_ms", ms}});
  };
  hooks.on_eval = [&](const EvalPoint& p) {
    metrics.write(eval_json(p));
    log << "eval  iter " << p.iteration << "  IF " << p.mean_if << "  VC " << p.mean_vc << "  VQ " << p.mean_vq << '\n';
  };
  hooks.on_checkpoint = [&](int it, const PolicySnapshot& s) {
    save_snapshot(out_dir / ("ckpt_" + std::to_string(it) + ".tksn"), s);
  };
  const ExperimentResult r = run_experiment(cfg.train, cfg.variant, hooks, cfg.noise);
  save_snapshot(out_dir / "final.tksn", r.final_snapshot);
  write_plot_data(out_dir / "plot.csv", r.evals);
  const EvalPoint& first = r.evals.front();
  const EvalPoint& last = r.evals.back();
  metrics.write({{"type", "summary"},
                 {"iterations", static_cast<int>(r.iterations.size())},
                 {"initial", eval_json(first)},
                 {"final", eval_json(last)}});
  return kExitOk;
}

// Evaluates a checkpoint on the held-out set; writes one record per task with
// the plan and reflection traces.
inline int cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& out_dir,
                    std::ostream& log = std::cout) {
  validate(cfg);
  const ModelSpec spec = ModelSpec::from_config(cfg.train);
  const PolicySnapshot snap = spec.check(load_snapshot(checkpoint));
  const std::vector<Task> tasks = eval_task_set(spec.limits, cfg.train.eval_tasks);
  const EvalResult r = evaluate(spec, snap, tasks, cfg.train, cfg.variant.pipeline(), true);
  ensure_dir(out_dir);
  JsonlWriter out(out_dir / "eval.jsonl");
  out.write({{"type", "header"}, {"command", "eval"}, {"checkpoint", checkpoint.string()}, {"config", config_json(cfg)}});
  const PlanVocab v = spec.und.vocab();
  for (const EvalRecord& rec : r.records) {
    const Task& t = tasks[rec.task_index];
    out.write({{"type", "task"},
               {"task", rec.task_index},
               {"family", family_name(t.instruction.family)},
               {"instruction", instruction_json(t.instruction)},
               {"scene", scene_json(t.scene)},
               {"plan", trace_json(v, rec.result.plan)},
               {"reflection", trace_json(v, rec.result.reflection)},
               {"output", scene_json(rec.result.scene)},
               {"IF", rec.reward[RewardDim::IF]},
               {"VC", rec.reward[RewardDim::VC]},
               {"VQ", rec.reward[RewardDim::VQ]}});
  }
  out.write({{"type", "summary"},
             {"mean_IF", r.mean_if},
             {"mean_VC", r.mean_vc},
             {"mean_VQ", r.mean_vq},
             {"noop_rate", r.noop_rate}});
  log << "IF " << r.mean_if << "  VC " << r.mean_vc << "  VQ " << r.mean_vq << "  no-op " << r.noop_rate << '\n';
  return kExitOk;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& x) {
  MeanStd r;
  if (x.empty()) return r;
  for (double v : x) r.mean += v;
  r.mean /= static_cast<double>(x.size());
  for (double v : x) r.std += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(r.std / static_cast<double>(x.size()));
  return r;
}

struct AblationResult {
  std::string name;
  VariantFlags flags;
  std::vector<EvalPoint> finals;  // one per seed
  MeanStd IF, VC, VQ, noop;
};

// Trains every row of the ablation matrix for every seed in cfg.seeds.
inline std::vector<AblationResult> run_ablation(const RunConfig& cfg,
                                                const std::function<void(const AblationResult&)>& on_row = {}) {
  validate(cfg);
  std::vector<AblationResult> rows;
  std::map<std::string, std::vector<EvalPoint>> cache;  // rows sharing flags share runs
  for (const AblationRow& row : ablation_matrix()) {
    AblationResult res{row.name, row.flags, {}, {}, {}, {}, {}};
    const std::string key = row.flags.to_string();
    if (auto it = cache.find(key); it != cache.end()) {
      res.finals = it->second;
    } else {
      for (std::uint64_t seed : cfg.seeds) {
        TrainConfig tc = cfg.train;
        tc.seed = seed;
        res.finals.push_back(run_experiment(tc, row.flags, {}, cfg.noise).evals.back());
      }
      cache[key] = res.finals;
    }
    std::vector<double> a, b, c, d;
    for (const auto& e : res.finals) {
      a.push_back(e.mean_if);
      b.push_back(e.mean_vc);
      c.push_back(e.mean_vq);
      d.push_back(e.noop_rate);
    }
    res.IF = mean_std(a);
    res.VC = mean_std(b);
    res.VQ = mean_std(c);
    res.noop = mean_std(d);
    if (on_row) on_row(res);
    rows.push_back(std::move(res));
  }
  return rows;
}

inline int cmd_ablate(const RunConfig& cfg, const std::filesystem::path& out_dir, std::ostream& log = std::cout) {
  validate(cfg);
  ensure_dir(out_dir);
  JsonlWriter out(out_dir / "ablation.jsonl");
  out.write({{"type", "header"}, {"command", "ablate"}, {"seeds", cfg.seeds}, {"config", config_json(cfg)}});
  std::ofstream table(out_dir / "ablation.txt", std::ios::trunc);
  std::ostringstream head;
  head << "# seeds:";
  for (auto s : cfg.seeds) head << ' ' << s;
  head << '\n'
       << std::left << std::setw(20) << "variant" << std::setw(42) << "flags" << "IF               VC               VQ"
       << "               no-op\n";
  table << head.str();
  log << head.str();
  auto cell = [](const MeanStd& m) {
    std::ostringstream c;
    c << std::fixed << std::setprecision(2) << 100.0 * m.mean << " +- " << 100.0 * m.std;
    return c.str();
  };
  run_ablation(cfg, [&](const AblationResult& r) {
    nlohmann::json per_seed = nlohmann::json::array();
    for (std::size_t i = 0; i < r.finals.size(); ++i) {
      nlohmann::json e = eval_json(r.finals[i]);
      e.erase("type");
      e["seed"] = cfg.seeds[i];
      per_seed.push_back(e);
    }
    out.write({{"type", "row"},
               {"variant", r.name},
               {"flags", r.flags.to_string()},
               {"IF_mean", r.IF.mean},
               {"IF_std", r.IF.std},
               {"VC_mean", r.VC.mean},
               {"VC_std", r.VC.std},
               {"VQ_mean", r.VQ.mean},
               {"VQ_std", r.VQ.std},
               {"noop_rate_mean", r.noop.mean},
               {"noop_rate_std", r.noop.std},
               {"per_seed", per_seed}});
    std::ostringstream line;
    line << std::left << std::setw(20) << r.name << std::setw(42) << r.flags.to_string() << std::setw(17)
         << cell(r.IF) << std::setw(17) << cell(r.VC) << std::setw(17) << cell(r.VQ) << cell(r.noop) << '\n';
    table << line.str();
    table.flush();
    log << line.str() << std::flush;
  });
  return kExitOk;
}

// --- reward-variance study ------------------------------------------------------------

struct VariancePair {
  Task task;
  Scene candidate;
  std::string kind;  // oracle, no-op or perturbed
};

// Fixed panel: per task an exact edit, an untouched scene or a random plan
// carried out exactly, cycling in that order with two perturbed pairs per cycle.
inline std::vector<VariancePair> variance_panel(int n_pairs, int n_obj, std::uint64_t seed) {
  SceneLimits lim;
  lim.n_obj = n_obj;
  RngStream rng(seed);
  const PlanVocab v(n_obj, lim.n_colors);
  std::vector<VariancePair> out;
  for (int i = 0; i < n_pairs; ++i) {
    Task t = make_mixed_task(lim, rng);
    VariancePair p{t, t.scene, ""};
    switch (i % 4) {
      case 0:
        p.candidate = oracle_edit(t.scene, t.instruction);
        p.kind = "oracle";
        break;
      case 1:
        p.kind = "no-op";
        break;
      default: {
        const int slot = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_obj)));
        const std::vector<int> plan{v.select(slot), detail::random_edit_token(v, rng), v.end()};
        const Vec lat = plan_effect(v, t.scene, plan).planned;
        p.candidate = decode_scene(lat, t.scene, lim);
        p.kind = "perturbed";
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

struct PairVariance {
  double checklist_mean = 0.0;
  double checklist_var = 0.0;
  double interval_mean = 0.0;
  double interval_var = 0.0;
};

struct VarianceStudy {
  std::vector<VariancePair> panel;
  std::vector<PairVariance> pairs;
  double checklist_var = 0.0;  // mean of per-pair variances
  double interval_var = 0.0;
  double ratio = 0.0;          // checklist / interval; 0 when both vanish
};

inline VarianceStudy reward_variance_study(int n_pairs, int reps, int n_obj, std::uint64_t seed,
                                           const JudgeNoise& noise) {
  noise.validate();
  VarianceStudy st;
  st.panel = variance_panel(n_pairs, n_obj, seed);
  RngStream judge(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const VariancePair& p : st.panel) {
    const Checklist cl = build_checklist(p.task.scene, p.task.instruction);
    Vec a, b;
    for (int r = 0; r < reps; ++r) {
      a.push_back(eval_checklist(cl, p.task.scene, p.candidate, &noise, judge));
      b.push_back(interval_score(p.task.scene, p.candidate, p.task.instruction, &noise, judge));
    }
    const MeanStd ma = mean_std(a), mb = mean_std(b);
    st.pairs.push_back({ma.mean, ma.std * ma.std, mb.mean, mb.std * mb.std});
    st.checklist_var += ma.std * ma.std / static_cast<double>(n_pairs);
    st.interval_var += mb.std * mb.std / static_cast<double>(n_pairs);
  }
  st.ratio = st.interval_var > 0.0 ? st.checklist_var / st.interval_var : 0.0;
  return st;
}

inline int cmd_reward_variance(const RunConfig& cfg, const std::filesystem::path& out_dir,
                               std::ostream& log = std::cout) {
  validate(cfg);
  const VarianceStudy st = reward_variance_study(cfg.rv_pairs, cfg.rv_reps, cfg.rv_n_obj, cfg.rv_seed, cfg.noise);
  ensure_dir(out_dir);
  JsonlWriter out(out_dir / "reward_variance.jsonl");
  out.write({{"type", "header"},
             {"command", "reward-variance"},
             {"seeds", {cfg.rv_seed}},
             {"pairs", cfg.rv_pairs},
             {"reps", cfg.rv_reps},
             {"n_obj", cfg.rv_n_obj},
             {"flip_prob", cfg.noise.flip_prob},
             {"interval_sigma", cfg.noise.interval_sigma}});
  for (std::size_t i = 0; i < st.pairs.size(); ++i) {
    const PairVariance& p = st.pairs[i];
    out.write({{"type", "pair"},
               {"pair", i},
               {"kind", st.panel[i].kind},
               {"family", family_name(st.panel[i].task.instruction.family)},
               {"checklist_mean", p.checklist_mean},
               {"checklist_var", p.checklist_var},
               {"interval_mean", p.interval_mean},
               {"interval_var", p.interval_var}});
  }
  // truth table of the first non-trivial pair: every item with its clean verdict
  std::size_t shown = 0;
  for (std::size_t i = 0; i < st.panel.size(); ++i)
    if (st.panel[i].kind == "perturbed") {
      shown = i;
      break;
    }
  const VariancePair& tp = st.panel[shown];
  const Checklist cl = build_checklist(tp.task.scene, tp.task.instruction);
  const auto verdicts = checklist_verdicts(cl, tp.task.scene, tp.candidate);
  nlohmann::json items = checklist_json(cl);
  for (std::size_t k = 0; k < items.size(); ++k) items[k]["verdict"] = static_cast<bool>(verdicts[k]);
  out.write({{"type", "truth_table"},
             {"pair", shown},
             {"instruction", instruction_json(tp.task.instruction)},
             {"scene", scene_json(tp.task.scene)},
             {"candidate", scene_json(tp.candidate)},
             {"items", items}});
  out.write({{"type", "summary"},
             {"checklist_var", st.checklist_var},
             {"interval_var", st.interval_var},
             {"ratio", st.ratio}});

  log << "# seeds: " << cfg.rv_seed << "  pairs " << cfg.rv_pairs << "  reps " << cfg.rv_reps << '\n';
  log << "truth table for pair " << shown << " (" << family_name(tp.task.instruction.family) << ")\n";
  for (std::size_t k = 0; k < cl.items.size(); ++k)
    log << "  " << std::left << std::setw(16) << predicate_name(cl.items[k].predicate) << " object "
        << cl.items[k].object << "  " << (verdicts[k] ? "yes" : "no") << '\n';
  log << "checklist variance " << st.checklist_var << "\ninterval variance  " << st.interval_var
      << "\nratio              " << st.ratio << '\n';
  return kExitOk;
}

// Maps library exceptions onto exit codes.
template <class F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const NumericError& e) {
    err << "numeric abort: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const FormatError& e) {
    err << "corrupt checkpoint: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "file error: " << e.what() << '\n';
    return kExitConfig;
  }
}

}  // namespace thinkedit
