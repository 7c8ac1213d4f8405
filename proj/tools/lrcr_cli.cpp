// Command-line driver: dataset generation, matcher/model training, inference,
// evaluation and the gradient audit, glued together by a small key=value
// config format with flag overrides.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lrcr/cost_volume.hpp"
#include "lrcr/data_io.hpp"
#include "lrcr/evaluation.hpp"
#include "lrcr/geometry.hpp"
#include "lrcr/model.hpp"
#include "lrcr/training.hpp"

namespace fs = std::filesystem;
using namespace lrcr;
using ad::Tensor;

namespace {

// ---- config ----

const std::set<std::string> kKnownKeys = {
    "scene.height",          "scene.width",
    "scene.d_max",           "scene.d_bg",
    "scene.rect_count",      "scene.rect_d_min",
    "scene.rect_d_max",      "scene.noise_amplitude",
    "data.dir",              "data.n_samples",
    "data.n_val",            "data.seed",
    "cost.source",           "cost.census_window",
    "cost.matcher_checkpoint",
    "matcher.margin",        "matcher.epochs",
    "matcher.lr",            "matcher.seed",
    "model.share_towers",    "model.branch_channels",
    "model.init_seed",
    "train.stage",           "train.stage1_epochs",
    "train.stage2_epochs",   "train.base_lr",
    "train.momentum",        "train.steps",
    "train.decay_every_stage1", "train.decay_every_stage2",
    "train.stage1_checkpoint",
    "run.out",
    "eval.checkpoint",       "eval.steps",
    "eval.lr_threshold",
};

struct Config {
  std::map<std::string, std::string> kv;

  std::string str(const std::string& key, const std::string& def) const {
    auto it = kv.find(key);
    return it == kv.end() ? def : it->second;
  }
  long num(const std::string& key, long def) const {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    std::size_t pos = 0;
    long v = std::stol(it->second, &pos);
    if (pos != it->second.size())
      throw ad::ConfigError("config: " + key + " is not an integer: " + it->second);
    return v;
  }
  double real(const std::string& key, double def) const {
    auto it = kv.find(key);
    if (it == kv.end()) return def;
    std::size_t pos = 0;
    double v = std::stod(it->second, &pos);
    if (pos != it->second.size())
      throw ad::ConfigError("config: " + key + " is not a number: " + it->second);
    return v;
  }
  void set(const std::string& key, const std::string& value) {
    if (!kKnownKeys.count(key)) throw ad::ConfigError("config: unknown key " + key);
    kv[key] = value;
  }
};

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r");
  auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

Config load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ad::ConfigError("cannot open config file: " + path);
  Config cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ad::ConfigError("config: malformed line " + std::to_string(lineno) +
                            " in " + path);
    std::string key = trim(line.substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

void print_resolved(const Config& cfg, const std::string& command) {
  std::cout << "# resolved config (" << command << ")\n";
  for (const auto& [k, v] : cfg.kv) std::cout << k << "=" << v << "\n";
  std::cout << "#\n";
}

io::SceneParams scene_params(const Config& cfg) {
  io::SceneParams p;
  p.height = static_cast<int>(cfg.num("scene.height", 64));
  p.width = static_cast<int>(cfg.num("scene.width", 64));
  p.d_max = static_cast<int>(cfg.num("scene.d_max", 16));
  p.d_bg = static_cast<int>(cfg.num("scene.d_bg", 3));
  p.rect_count = static_cast<int>(cfg.num("scene.rect_count", 2));
  p.rect_d_min = static_cast<int>(cfg.num("scene.rect_d_min", 6));
  p.rect_d_max = static_cast<int>(cfg.num("scene.rect_d_max", 12));
  p.noise_amplitude = cfg.real("scene.noise_amplitude", 0.35);
  return p;
}

// ---- siamese matcher weight file ----

constexpr char kMatcherMagic[8] = {'L', 'R', 'C', 'R', 'S', 'M', '1', '\n'};

void save_matcher(cost::SiameseWeights& w, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMatcherMagic, sizeof(kMatcherMagic));
  for (auto& p : w.params()) {
    std::uint32_t rank = static_cast<std::uint32_t>(p.shape().size());
    f.write(reinterpret_cast<const char*>(&rank), sizeof(rank));
    for (int e : p.shape()) {
      std::uint32_t v = static_cast<std::uint32_t>(e);
      f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    f.write(reinterpret_cast<const char*>(p.data().data()),
            static_cast<std::streamsize>(p.size() * sizeof(double)));
  }
  if (!f) throw std::runtime_error("short write: " + path);
}

cost::SiameseWeights load_matcher(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open matcher checkpoint: " + path);
  char magic[8];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMatcherMagic, sizeof(kMatcherMagic)) != 0)
    throw std::runtime_error("bad matcher checkpoint magic in " + path);
  auto w = cost::SiameseWeights::init(0);
  for (auto& p : w.params()) {
    std::uint32_t rank;
    f.read(reinterpret_cast<char*>(&rank), sizeof(rank));
    ad::Shape shape(rank);
    for (auto& e : shape) {
      std::uint32_t v;
      f.read(reinterpret_cast<char*>(&v), sizeof(v));
      e = static_cast<int>(v);
    }
    if (shape != p.shape())
      throw std::runtime_error("matcher checkpoint shape mismatch in " + path);
    f.read(reinterpret_cast<char*>(p.data().data()),
           static_cast<std::streamsize>(p.size() * sizeof(double)));
    if (!f) throw std::runtime_error("short matcher checkpoint: " + path);
  }
  return w;
}

// ---- sample preparation ----

std::vector<io::StereoSample> load_dataset(const std::string& dir) {
  int n = io::count_samples(dir);
  if (n == 0) throw ad::ContractError("no samples found under " + dir);
  std::vector<io::StereoSample> out;
  for (int i = 0; i < n; ++i) out.push_back(io::load_sample(dir, i));
  return out;
}

train::PreparedSample prepare_any(const io::StereoSample& s, const Config& cfg) {
  const int d_max = static_cast<int>(cfg.num("scene.d_max", 16));
  std::string source = cfg.str("cost.source", "census");
  if (source == "census") {
    return train::prepare_sample(
        s, d_max, static_cast<int>(cfg.num("cost.census_window", 5)));
  }
  if (source != "siamese")
    throw ad::ConfigError("cost.source must be census or siamese");
  std::string ckpt = cfg.str("cost.matcher_checkpoint", "");
  if (ckpt.empty())
    throw ad::ConfigError("cost.source=siamese needs cost.matcher_checkpoint");
  auto w = load_matcher(ckpt);
  ad::Tape tape;
  auto [cl, cr] = cost::siamese_cost_volume(s.left, s.right, w, d_max);
  cost::CostVolume dl{cl.view, cl.values.detached(), cl.d_max};
  cost::CostVolume dr{cr.view, cr.values.detached(), cr.d_max};
  tape.clear();
  train::PreparedSample p;
  p.cost_left = cost::normalize_cost_volume(dl);
  p.cost_right = cost::normalize_cost_volume(dr);
  p.gt_left = s.gt_left;
  p.gt_right = s.gt_right;
  return p;
}

// ---- commands ----

int cmd_gen_data(const Config& cfg) {
  auto params = scene_params(cfg);
  const int n = static_cast<int>(cfg.num("data.n_samples", 25));
  if (n <= 0) throw ad::ContractError("gen-data: data.n_samples must be > 0");
  const std::uint64_t seed = cfg.num("data.seed", 0);
  const std::string dir = cfg.str("run.out", cfg.str("data.dir", "data"));
  fs::create_directories(dir);
  for (int i = 0; i < n; ++i) {
    auto s = io::generate_sample(params, seed + static_cast<std::uint64_t>(i));
    io::save_sample(s, dir, i);
    std::cout << "sample " << i << " seed=" << s.seed
              << " occluded_left=" << (s.gt_left.values.size() - s.gt_left.count_valid())
              << "\n";
  }
  std::cout << "wrote " << n << " samples to " << dir << "\n";
  return 0;
}

int cmd_train_matcher(const Config& cfg) {
  auto dataset = load_dataset(cfg.str("data.dir", "data"));
  auto weights = cost::SiameseWeights::init(cfg.num("matcher.seed", 0));
  cost::MatcherTrainConfig mc;
  mc.margin = cfg.real("matcher.margin", 0.2);
  mc.epochs = static_cast<int>(cfg.num("matcher.epochs", 10));
  mc.lr = cfg.real("matcher.lr", 0.05);
  mc.d_max = static_cast<int>(cfg.num("scene.d_max", 16));
  mc.seed = cfg.num("matcher.seed", 0);
  auto losses = cost::train_matcher(dataset, weights, mc);
  for (std::size_t e = 0; e < losses.size(); ++e)
    std::cout << "epoch " << e << " hinge_loss " << losses[e] << "\n";
  const std::string out = cfg.str("run.out", "out");
  fs::create_directories(out);
  save_matcher(weights, out + "/matcher.bin");
  std::cout << "wrote " << out << "/matcher.bin\n";
  return 0;
}

int cmd_train(const Config& cfg) {
  auto dataset = load_dataset(cfg.str("data.dir", "data"));
  const int n_val = static_cast<int>(cfg.num("data.n_val", 5));
  const std::uint64_t seed = cfg.num("data.seed", 0);
  auto [train_ids, val_ids] =
      io::make_split(static_cast<int>(dataset.size()), n_val, seed);

  std::vector<train::PreparedSample> train_set, val_set;
  for (int i : train_ids) train_set.push_back(prepare_any(dataset[i], cfg));
  for (int i : val_ids) val_set.push_back(prepare_any(dataset[i], cfg));

  model::ModelConfig mc;
  mc.d_max = static_cast<int>(cfg.num("scene.d_max", 16));
  mc.height = static_cast<int>(cfg.num("scene.height", 64));
  mc.width = static_cast<int>(cfg.num("scene.width", 64));
  mc.share_towers = cfg.num("model.share_towers", 1) != 0;
  mc.branch_channels = static_cast<int>(cfg.num("model.branch_channels", 8));

  const std::string out = cfg.str("run.out", "out");
  fs::create_directories(out);
  const std::string stage = cfg.str("train.stage", "both");

  model::LrcrWeights weights = model::LrcrWeights::init(mc, cfg.num("model.init_seed", 0));
  if (stage == "2") {
    std::string ckpt = cfg.str("train.stage1_checkpoint", "");
    if (ckpt.empty())
      throw ad::ContractError("train.stage=2 needs train.stage1_checkpoint");
    weights = model::load_checkpoint(ckpt);
  } else if (stage != "1" && stage != "both") {
    throw ad::ConfigError("train.stage must be 1, 2 or both");
  }

  if (stage == "1" || stage == "both") {
    train::TrainConfig tc;
    tc.stage = 1;
    tc.epochs = static_cast<int>(cfg.num("train.stage1_epochs", 15));
    tc.base_lr = cfg.real("train.base_lr", 0.01);
    tc.lr_decay_every = static_cast<int>(cfg.num("train.decay_every_stage1", 5));
    tc.momentum = cfg.real("train.momentum", 0.9);
    tc.seed = seed;
    auto log = train::train_stage1(train_set, val_set, weights, tc);
    train::write_train_log(log, out + "/train_stage1.csv");
    model::save_checkpoint(weights, out + "/stage1.ckpt");
    std::cout << "stage 1 done: loss " << log.front().train_loss << " -> "
              << log.back().train_loss << "; wrote " << out << "/stage1.ckpt\n";
  }
  if (stage == "2" || stage == "both") {
    train::TrainConfig tc;
    tc.stage = 2;
    tc.epochs = static_cast<int>(cfg.num("train.stage2_epochs", 30));
    tc.base_lr = cfg.real("train.base_lr", 0.01);
    tc.lr_decay_every = static_cast<int>(cfg.num("train.decay_every_stage2", 10));
    tc.steps = static_cast<int>(cfg.num("train.steps", 5));
    tc.momentum = cfg.real("train.momentum", 0.9);
    tc.seed = seed;
    auto log = train::train_stage2(train_set, val_set, weights, tc);
    train::write_train_log(log, out + "/train_stage2.csv");
    model::save_checkpoint(weights, out + "/stage2.ckpt");
    std::cout << "stage 2 done: loss " << log.front().train_loss << " -> "
              << log.back().train_loss << "; wrote " << out << "/stage2.ckpt\n";
  }
  return 0;
}

int cmd_infer(const Config& cfg) {
  std::string ckpt = cfg.str("eval.checkpoint", "");
  if (ckpt.empty()) throw ad::ContractError("infer needs eval.checkpoint");
  auto weights = model::load_checkpoint(ckpt);
  auto dataset = load_dataset(cfg.str("data.dir", "data"));
  const int steps = static_cast<int>(cfg.num("eval.steps", 5));
  const std::string out = cfg.str("run.out", "out");
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    auto p = prepare_any(dataset[i], cfg);
    auto outs = model::lrcr_unroll(weights, p.cost_left, p.cost_right, steps);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%04d", static_cast<int>(i));
    std::string sd = out + "/" + buf;
    fs::create_directories(sd);
    for (int t = 0; t < steps; ++t) {
      auto d = model::to_disparity_map(outs[t].disp_left);
      io::write_pfm(d, sd + "/disp_left_t" + std::to_string(t + 1) + ".pfm");
    }
  }
  std::cout << "wrote disparities for " << dataset.size() << " samples to " << out
            << "\n";
  return 0;
}

int cmd_eval(const Config& cfg, const std::string& baseline, bool dump_images) {
  auto dataset = load_dataset(cfg.str("data.dir", "data"));
  std::vector<eval::EvalSample> samples;
  for (const auto& s : dataset) {
    auto p = prepare_any(s, cfg);
    samples.push_back({p.cost_left, p.cost_right, p.gt_left, p.gt_right});
  }
  const std::string out = cfg.str("run.out", "out");
  fs::create_directories(out);

  eval::MetricsReport report;
  if (!baseline.empty()) {
    eval::BaselineKind kind;
    if (baseline == "wta")
      kind = eval::BaselineKind::Wta;
    else if (baseline == "refined")
      kind = eval::BaselineKind::WtaRefined;
    else
      throw ad::ConfigError("--baseline must be wta or refined");
    report = eval::evaluate_baseline(samples, kind, cfg.real("eval.lr_threshold", 1.0));
  } else {
    std::string ckpt = cfg.str("eval.checkpoint", "");
    if (ckpt.empty()) throw ad::ContractError("eval needs eval.checkpoint or --baseline");
    auto weights = model::load_checkpoint(ckpt);
    const int steps = static_cast<int>(cfg.num("eval.steps", 5));
    report = eval::evaluate_lrcr(weights, samples, steps);

    if (dump_images) {
      const int d_max = static_cast<int>(cfg.num("scene.d_max", 16));
      for (std::size_t i = 0; i < samples.size(); ++i) {
        auto outs = model::lrcr_unroll(weights, samples[i].cost_left,
                                       samples[i].cost_right, steps);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "sample_%04d", static_cast<int>(i));
        std::string sd = out + "/" + buf;
        fs::create_directories(sd);
        for (int t = 0; t < steps; ++t) {
          std::string suffix = "_t" + std::to_string(t + 1) + ".pgm";
          auto d = model::to_disparity_map(outs[t].disp_left);
          io::write_pgm(eval::disparity_image(d, d_max), sd + "/disp" + suffix);
          io::write_pgm(eval::error_heat_image(d, samples[i].gt_left),
                        sd + "/error" + suffix);
          io::write_pgm(eval::attention_heat_image(outs[t].err_left),
                        sd + "/attention" + suffix);
        }
      }
    }
  }
  eval::write_report_csv(report, out + "/report.csv");
  std::cout << "step,epe,bad1,bad2,bad3,bad5\n";
  for (std::size_t t = 0; t < report.per_step.size(); ++t) {
    const auto& m = report.per_step[t];
    std::cout << (t + 1) << "," << m.epe;
    for (double k : eval::kBadThresholds) std::cout << "," << m.bad_k.at(k);
    std::cout << "\n";
  }
  std::cout << "wrote " << out << "/report.csv\n";
  return 0;
}

// ---- gradient audit ----

struct AuditResult {
  std::string op;
  double max_err;
  double tol;
};

Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

double audit_pointwise(const std::function<Tensor(const Tensor&)>& f,
                       std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    Tensor p = random_tensor({3, 4}, rng, lo, hi);
    worst = std::max(worst, ad::finite_diff_check(f, p, 1e-5));
  }
  return worst;
}

std::vector<AuditResult> run_audits(const std::string& filter, bool inject_flip) {
  std::vector<AuditResult> results;
  auto wants = [&](const std::string& op) {
    return filter.empty() || op.find(filter) != std::string::npos;
  };
  std::mt19937_64 rng(2024);

  if (wants("conv2d")) {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      Tensor k = random_tensor({3, 2, 3, 3}, rng);
      Tensor b = random_tensor({3}, rng);
      auto f = [&](const Tensor& x) { return ad::sum(ad::conv2d(x, k, b, 1)); };
      worst = std::max(worst, ad::finite_diff_check(f, random_tensor({2, 5, 5}, rng), 1e-5));
    }
    results.push_back({"conv2d", worst, 1e-5});
  }
  if (wants("sigmoid")) {
    // checked by hand so --inject-flip can corrupt the analytic side only
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      Tensor p = random_tensor({3, 4}, rng);
      std::vector<double> analytic;
      {
        ad::Tape tape;
        Tensor x = Tensor::from(p.shape(), p.data(), true);
        tape.backward(ad::sum(ad::sigmoid(x)));
        analytic = x.grad();
      }
      double flip = inject_flip ? -1.0 : 1.0;
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double step = 1e-5, orig = p.data()[j];
        auto eval_at = [&](double v) {
          ad::Tape tape;
          p.data()[j] = v;
          double r = ad::sum(ad::sigmoid(p)).value();
          tape.clear();
          p.data()[j] = orig;
          return r;
        };
        double num = (eval_at(orig + step) - eval_at(orig - step)) / (2 * step);
        worst = std::max(worst, std::fabs(flip * analytic[j] - num) /
                                    std::max(1e-8, std::fabs(num)));
      }
    }
    results.push_back({"sigmoid", worst, 1e-5});
  }
  if (wants("tanh"))
    results.push_back({"tanh", audit_pointwise([](const Tensor& x) {
                         return ad::sum(ad::tanh_op(x));
                       }, rng),
                       1e-5});
  if (wants("relu"))
    results.push_back({"relu", audit_pointwise([](const Tensor& x) {
                         return ad::sum(ad::relu(ad::add_scalar(x, 3.0)));
                       }, rng),
                       1e-5});
  if (wants("abs"))
    results.push_back({"abs", audit_pointwise([](const Tensor& x) {
                         return ad::sum(ad::abs_op(ad::add_scalar(x, 3.0)));
                       }, rng),
                       1e-5});
  if (wants("hadamard"))
    results.push_back({"hadamard", audit_pointwise([](const Tensor& x) {
                         return ad::sum(ad::hadamard(x, x));
                       }, rng),
                       1e-5});
  if (wants("rsqrt"))
    results.push_back({"rsqrt", audit_pointwise([](const Tensor& x) {
                         return ad::sum(ad::rsqrt_eps(
                             ad::add_scalar(ad::hadamard(x, x), 1.0), 1e-8));
                       }, rng),
                       1e-5});
  if (wants("softmax")) {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      Tensor w = random_tensor({4, 3, 3}, rng);
      auto f = [&](const Tensor& x) {
        return ad::sum(ad::hadamard(ad::softmax_over_disparity(x), w));
      };
      worst = std::max(worst, ad::finite_diff_check(f, random_tensor({4, 3, 3}, rng), 1e-5));
    }
    results.push_back({"softmax_over_disparity", worst, 1e-5});
  }
  if (wants("soft_argmin")) {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      auto f = [](const Tensor& x) { return ad::sum(model::soft_argmin(x)); };
      worst = std::max(worst, ad::finite_diff_check(f, random_tensor({5, 3, 3}, rng), 1e-5));
    }
    results.push_back({"soft_argmin", worst, 1e-5});
  }
  if (wants("convlstm_step")) {
    model::ModelConfig mc;
    mc.d_max = 4;
    mc.height = 4;
    mc.width = 4;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      auto w = model::LrcrWeights::init(mc, 100 + i);
      auto& cell = w.towers[0].cells[0];
      model::ConvLstmState prev{random_tensor({4, 4, 4}, rng),
                                random_tensor({4, 4, 4}, rng)};
      auto f = [&](const Tensor& x) {
        return ad::sum(convlstm_step(cell, x, prev).h);
      };
      worst = std::max(worst, ad::finite_diff_check(f, random_tensor({5, 4, 4}, rng), 1e-5));
    }
    results.push_back({"convlstm_step", worst, 1e-5});
  }
  if (wants("tower_forward") || wants("lrcr_unroll")) {
    model::ModelConfig mc;
    mc.d_max = 8;
    mc.height = 8;
    mc.width = 8;
    auto w = model::LrcrWeights::init(mc, 7);
    for (double& v : w.towers[0].head_w3.data()) v *= 10.0;
    cost::CostVolume cl{cost::View::Left, random_tensor({8, 8, 8}, rng, 0.0, 1.0), 8};
    cost::CostVolume cr{cost::View::Right, random_tensor({8, 8, 8}, rng, 0.0, 1.0), 8};
    auto params = model::parameters(w);
    if (wants("tower_forward")) {
      std::vector<model::ConvLstmState> states;
      for (int c : {8, 16, 16, 8}) states.push_back(model::zero_state(c, 8, 8));
      auto loss = [&]() {
        auto out = model::tower_forward(w.towers[0], cl.values,
                                        Tensor::full({8, 8}, 0.5), states);
        return ad::scale(ad::sum(out.scores), 1.0 / out.scores.size());
      };
      double worst = 0.0;
      std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
      for (int i = 0; i < 10; ++i) {
        auto& p = params[pick_param(rng)];
        if (p.group == model::ParamGroup::Branch) continue;
        std::uniform_int_distribution<std::size_t> pick(0, p.tensor.size() - 1);
        worst = std::max(worst, ad::finite_diff_check_coords(loss, p.tensor,
                                                             {pick(rng)}, 1e-5));
      }
      results.push_back({"tower_forward", worst, 1e-5});
    }
    if (wants("lrcr_unroll")) {
      auto loss = [&]() {
        auto steps = model::lrcr_unroll(w, cl, cr, 2);
        Tensor total = ad::add(ad::sum(steps[0].disp_left), ad::sum(steps[1].disp_left));
        return ad::scale(ad::add(total, ad::sum(steps[1].disp_right)),
                         1.0 / cl.values.size());
      };
      double worst = 0.0;
      std::uniform_int_distribution<std::size_t> pick_param(0, params.size() - 1);
      for (int i = 0; i < 10; ++i) {
        auto& p = params[pick_param(rng)];
        std::uniform_int_distribution<std::size_t> pick(0, p.tensor.size() - 1);
        worst = std::max(worst, ad::finite_diff_check_coords(loss, p.tensor,
                                                             {pick(rng)}, 1e-3));
      }
      results.push_back({"lrcr_unroll", worst, 1e-4});
    }
  }
  if (wants("comparative_branch")) {
    model::ModelConfig mc;
    mc.d_max = 8;
    mc.height = 8;
    mc.width = 8;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      auto w = model::LrcrWeights::init(mc, 300 + i);
      Tensor b = random_tensor({8, 8}, rng, 0.0, 1.0);
      auto f = [&](const Tensor& a) {
        return ad::sum(model::comparative_branch(w.branch, a, b));
      };
      worst = std::max(worst, ad::finite_diff_check(f, random_tensor({8, 8}, rng, 0.0, 1.0), 1e-4));
    }
    results.push_back({"comparative_branch", worst, 1e-5});
  }
  if (wants("siamese_cost")) {
    io::SceneParams sp;
    sp.height = 16;
    sp.width = 16;
    sp.d_max = 4;
    sp.rect_count = 0;
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      auto s = io::generate_sample(sp, 500 + i);
      auto w = cost::SiameseWeights::init(600 + i);
      auto loss = [&]() {
        auto [cl, cr] = cost::siamese_cost_volume(s.left, s.right, w, 4);
        return ad::scale(ad::sum(cl.values), 1.0 / cl.values.size());
      };
      for (Tensor p : w.params()) {
        std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
        worst = std::max(worst,
                         ad::finite_diff_check_coords(loss, p, {pick(rng)}, 1e-5));
      }
    }
    results.push_back({"siamese_cost", worst, 1e-5});
  }
  if (wants("l1_loss")) {
    DisparityMap gt(3, 4);
    std::uniform_real_distribution<double> u(0.0, 8.0);
    for (auto& v : gt.values) v = u(rng);
    gt.invalidate(1, 1);
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      auto f = [&](const Tensor& x) { return train::l1_disparity_loss(x, gt); };
      worst = std::max(worst, ad::finite_diff_check(f, random_tensor({3, 4}, rng, 9.0, 20.0), 1e-5));
    }
    results.push_back({"l1_loss", worst, 1e-5});
  }
  return results;
}

int cmd_check_grads(const std::string& filter, bool inject_flip) {
  auto results = run_audits(filter, inject_flip);
  if (results.empty()) throw ad::ConfigError("--ops matched no audited operation");
  bool ok = true;
  for (const auto& r : results) {
    bool pass = r.max_err < r.tol;
    ok = ok && pass;
    std::cout << (pass ? "PASS " : "FAIL ") << r.op << " max_rel_err=" << r.max_err
              << " tol=" << r.tol << "\n";
  }
  std::cout << (ok ? "gradient audit passed\n" : "gradient audit FAILED\n");
  return ok ? 0 : 2;
}

void usage() {
  std::cout <<
      "usage: lrcr <command> [options]\n"
      "commands:\n"
      "  gen-data      generate a synthetic stereo dataset\n"
      "  train-matcher train the siamese matcher on a dataset\n"
      "  train         two-stage model training (train.stage = 1|2|both)\n"
      "  infer         write per-step disparity maps for a dataset\n"
      "  eval          metrics report for a checkpoint or --baseline wta|refined\n"
      "  check-grads   finite-difference audit of all differentiable ops\n"
      "options:\n"
      "  --config FILE   key=value config with [section] headers\n"
      "  --seed N        override data.seed / matcher.seed / model.init_seed\n"
      "  --out DIR       override run.out\n"
      "  --baseline KIND eval without a checkpoint (wta|refined)\n"
      "  --dump-images   eval: write disparity/error/attention PGMs per step\n"
      "  --ops NAME      check-grads: restrict the audit to matching ops\n";
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    usage();
    return 1;
  }
  std::string command = argv[1];
  Config cfg;
  std::string baseline, ops;
  bool dump_images = false, inject_flip = false;
  try {
    std::optional<std::string> config_path, seed, out;
    for (int i = 2; i < argc; ++i) {
      std::string a = argv[i];
      auto next = [&]() -> std::string {
        if (i + 1 >= argc) throw ad::ConfigError(a + " needs a value");
        return argv[++i];
      };
      if (a == "--config")
        config_path = next();
      else if (a == "--seed")
        seed = next();
      else if (a == "--out")
        out = next();
      else if (a == "--baseline")
        baseline = next();
      else if (a == "--ops")
        ops = next();
      else if (a == "--dump-images")
        dump_images = true;
      else if (a == "--inject-flip")
        inject_flip = true;  // audit self-test: corrupts one gradient on purpose
      else
        throw ad::ConfigError("unknown flag " + a);
    }
    if (config_path) cfg = load_config(*config_path);
    if (seed) {
      cfg.set("data.seed", *seed);
      cfg.set("matcher.seed", *seed);
      cfg.set("model.init_seed", *seed);
    }
    if (out) cfg.set("run.out", *out);

    if (command != "check-grads") print_resolved(cfg, command);
    if (command == "gen-data") return cmd_gen_data(cfg);
    if (command == "train-matcher") return cmd_train_matcher(cfg);
    if (command == "train") return cmd_train(cfg);
    if (command == "infer") return cmd_infer(cfg);
    if (command == "eval") return cmd_eval(cfg, baseline, dump_images);
    if (command == "check-grads") return cmd_check_grads(ops, inject_flip);
    usage();
    return 1;
  } catch (const ad::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
