#include "codebias/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "codebias/attribution.hpp"
#include "codebias/errors.hpp"
#include "codebias/random.hpp"

namespace codebias {

// ---------------------------------------------------------------- methods

std::string Method::name() const {
  std::string n(to_string(mitigation));
  return bpr ? n + "+bpr" : n;
}

Method Method::parse(std::string_view name) {
  Method m;
  constexpr std::string_view kSuffix = "+bpr";
  if (name.size() > kSuffix.size() && name.substr(name.size() - kSuffix.size()) == kSuffix) {
    m.bpr = true;
    name.remove_suffix(kSuffix.size());
  }
  m.mitigation = mitigation_from_string(name);
  return m;
}

std::vector<Method> standard_methods() {
  return {{Mitigation::None, false},    {Mitigation::Reweight, false}, {Mitigation::Poe, false},
          {Mitigation::AdvTrain, false}, {Mitigation::AdvTrain, true},  {Mitigation::GradRev, false},
          {Mitigation::GradRev, true}};
}

// ---------------------------------------------------------------- config

EmbedMode ExperimentConfig::resolved_bpr_mode() const {
  if (bpr_mode) return *bpr_mode;
  return task == Task::TypeInf ? EmbedMode::AstBow : EmbedMode::CfgPaths;
}

GenConfig ExperimentConfig::resolved_generator() const {
  GenConfig g = generator;
  g.task = task;
  g.split_seed = split_seed;
  return g;
}

void ExperimentConfig::validate() const {
  if (method.bpr && method.mitigation != Mitigation::None && method.mitigation != Mitigation::AdvTrain &&
      method.mitigation != Mitigation::GradRev) {
    throw ConfigError("bpr combines only with none, advtrain or gradrev");
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (method.bpr && batch_size < 2) throw ConfigError("bpr needs batch_size >= 2");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (ig_steps < 1) throw ConfigError("ig_steps must be >= 1");
  if (attack.k < 1) throw ConfigError("attack.k must be >= 1");
  if (embed_dim < 1 || hidden_dim < 1 || head_dim < 1) throw ConfigError("model dimensions must be >= 1");
  if (reversal_coef < 0.0) throw ConfigError("reversal_coef must be >= 0");
  for (std::size_t b : sweep_batch_sizes) {
    if (b < 2) throw ConfigError("sweep batch sizes must be >= 2");
  }
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["task"] = to_string(c.task);
  j["generator"] = {{"num_projects", c.generator.num_projects},
                    {"samples_per_project", c.generator.samples_per_project},
                    {"bias_strength", c.generator.bias_strength},
                    {"seed", c.generator.seed}};
  j["split_seed"] = c.split_seed;
  j["model"] = {{"embed_dim", c.embed_dim}, {"hidden_dim", c.hidden_dim}, {"head_dim", c.head_dim}};
  j["training"] = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr}};
  j["mitigation"] = to_string(c.method.mitigation);
  j["bpr"] = c.method.bpr;
  j["bpr_mode"] = to_string(c.resolved_bpr_mode());
  j["reversal_coef"] = c.reversal_coef;
  j["seeds"] = c.seeds;
  j["attack"] = {{"k", c.attack.k}, {"pool_cap", c.attack.pool_cap}, {"fresh", c.attack.fresh}, {"seed", c.attack.seed}};
  j["ig_steps"] = c.ig_steps;
  j["report"] = {{"svg_max_bars", c.svg_max_bars}, {"case_pages", c.case_pages}};
  j["output_dir"] = c.output_dir;
  j["corpus_path"] = c.corpus_path;
  nlohmann::json tasks = nlohmann::json::array();
  for (Task t : c.suite_tasks) tasks.push_back(to_string(t));
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : c.suite_methods.empty() ? standard_methods() : c.suite_methods) methods.push_back(m.name());
  j["suite"] = {{"tasks", tasks},
                {"methods", methods},
                {"batch_sweep",
                 {{"sizes", c.sweep_batch_sizes}, {"method", c.sweep_method}, {"seeds", c.sweep_seeds}}}};
  return j;
}

namespace {

void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    check_keys(j,
               {"task", "generator", "split_seed", "model", "training", "mitigation", "bpr", "bpr_mode",
                "reversal_coef", "seeds", "attack", "ig_steps", "report", "output_dir", "corpus_path", "suite"},
               "config");
    if (j.contains("task")) c.task = task_from_string(j.at("task").get<std::string>());
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      check_keys(g, {"num_projects", "samples_per_project", "bias_strength", "seed"}, "generator");
      read(g, "num_projects", c.generator.num_projects);
      read(g, "samples_per_project", c.generator.samples_per_project);
      read(g, "bias_strength", c.generator.bias_strength);
      read(g, "seed", c.generator.seed);
    }
    read(j, "split_seed", c.split_seed);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"embed_dim", "hidden_dim", "head_dim"}, "model");
      read(m, "embed_dim", c.embed_dim);
      read(m, "hidden_dim", c.hidden_dim);
      read(m, "head_dim", c.head_dim);
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      check_keys(t, {"epochs", "batch_size", "lr"}, "training");
      read(t, "epochs", c.epochs);
      read(t, "batch_size", c.batch_size);
      read(t, "lr", c.lr);
    }
    if (j.contains("mitigation")) c.method.mitigation = mitigation_from_string(j.at("mitigation").get<std::string>());
    read(j, "bpr", c.method.bpr);
    if (j.contains("bpr_mode")) c.bpr_mode = embed_mode_from_string(j.at("bpr_mode").get<std::string>());
    read(j, "reversal_coef", c.reversal_coef);
    read(j, "seeds", c.seeds);
    if (j.contains("attack")) {
      const auto& a = j.at("attack");
      check_keys(a, {"k", "pool_cap", "fresh", "seed"}, "attack");
      read(a, "k", c.attack.k);
      read(a, "pool_cap", c.attack.pool_cap);
      read(a, "fresh", c.attack.fresh);
      read(a, "seed", c.attack.seed);
    }
    read(j, "ig_steps", c.ig_steps);
    if (j.contains("report")) {
      const auto& r = j.at("report");
      check_keys(r, {"svg_max_bars", "case_pages"}, "report");
      read(r, "svg_max_bars", c.svg_max_bars);
      read(r, "case_pages", c.case_pages);
    }
    read(j, "output_dir", c.output_dir);
    read(j, "corpus_path", c.corpus_path);
    if (j.contains("suite")) {
      const auto& s = j.at("suite");
      check_keys(s, {"tasks", "methods", "batch_sweep"}, "suite");
      if (s.contains("tasks")) {
        c.suite_tasks.clear();
        for (const auto& t : s.at("tasks")) c.suite_tasks.push_back(task_from_string(t.get<std::string>()));
      }
      if (s.contains("methods")) {
        c.suite_methods.clear();
        for (const auto& m : s.at("methods")) c.suite_methods.push_back(Method::parse(m.get<std::string>()));
      }
      if (s.contains("batch_sweep")) {
        const auto& b = s.at("batch_sweep");
        check_keys(b, {"sizes", "method", "seeds"}, "suite.batch_sweep");
        read(b, "sizes", c.sweep_batch_sizes);
        read(b, "method", c.sweep_method);
        read(b, "seeds", c.sweep_seeds);
        Method::parse(c.sweep_method);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------- data

PreparedData prepare_data(const ExperimentConfig& cfg) {
  cfg.validate();
  PreparedData d;
  if (!cfg.corpus_path.empty()) {
    d.corpus = load_corpus(cfg.corpus_path);
    if (d.corpus.task != cfg.task) throw ConfigError("corpus task differs from config task");
  } else {
    d.corpus = generate_corpus(cfg.resolved_generator());
  }
  d.split = split_projects(d.corpus, cfg.split_seed);
  d.samples = assign_samples(d.corpus, d.split);
  const auto fresh = fresh_names(d.corpus, cfg.attack.fresh, cfg.attack.seed);
  d.vocab = build_vocabulary(d.corpus, name_pieces(fresh));
  d.bias_words.assign(d.corpus.bias_vocab.begin(), d.corpus.bias_vocab.end());
  d.pool = build_candidate_pool(d.corpus, d.vocab, fresh, cfg.attack);
  d.train_items = items_of(d.corpus, d.samples.train);
  // Corpus order groups samples by project. Ties in the similarity ordering
  // are broken by item index, so a fixed shuffle keeps them from following it.
  Rng order_rng(mix_seed(cfg.split_seed, 0x7a1));
  order_rng.shuffle(d.train_items);
  d.intra_items = items_of(d.corpus, d.samples.iid_test);
  d.inter_items = items_of(d.corpus, d.samples.ood_test);
  return d;
}

void ensure_similarity(PreparedData& data, EmbedMode mode) {
  if (data.similarity && data.similarity->mode == mode) return;
  const auto emb = embed_items(data.corpus, data.train_items, mode);
  data.similarity = similarity_matrix(emb);
  data.similarity->mode = mode;
  data.ordering = unshuffle(*data.similarity);
}

ModelConfig model_config(const ExperimentConfig& cfg, const PreparedData& data, Activation act) {
  ModelConfig mc;
  mc.vocab_size = data.vocab.size();
  mc.embed_dim = cfg.embed_dim;
  mc.hidden_dim = cfg.hidden_dim;
  mc.head_dim = cfg.head_dim;
  mc.num_classes = num_classes(cfg.task);
  mc.bias_dim = std::max<std::size_t>(1, data.bias_words.size());
  mc.task = cfg.task;
  mc.activation = act;
  return mc;
}

// ---------------------------------------------------------------- training

TrainOutcome train_model(const ExperimentConfig& cfg, PreparedData& data, std::uint64_t seed) {
  const ModelConfig mc = model_config(cfg, data);
  TrainOutcome out;
  out.params = init_params(mc, mix_seed(seed, 1));
  const Method& method = cfg.method;

  std::vector<Example> examples;
  examples.reserve(data.train_items.size());
  for (const Item& item : data.train_items) examples.push_back(make_example(data.corpus, data.vocab, item));

  if (method.mitigation == Mitigation::Reweight || method.mitigation == Mitigation::Poe) {
    FitConfig fc{cfg.epochs, cfg.batch_size, cfg.lr, mix_seed(seed, 2)};
    const BiasOnlyModel bias_only = train_bias_only(data.corpus, data.train_items, data.vocab, mc, fc);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const Item& item = data.train_items[i];
      examples[i].p_b = bias_only.probs(data.corpus.samples[item.sample], item.target, data.vocab);
      examples[i].p_b_true = examples[i].p_b[static_cast<std::size_t>(item.label)];
    }
  }
  if (method.mitigation == Mitigation::GradRev) {
    for (std::size_t i = 0; i < examples.size(); ++i) {
      examples[i].bias_members = bias_members(data.corpus.samples[data.train_items[i].sample], data.bias_words);
    }
  }

  std::vector<std::vector<std::size_t>> fixed_batches;
  if (method.bpr) {
    ensure_similarity(data, cfg.resolved_bpr_mode());
    fixed_batches = batchify(data.ordering, cfg.batch_size);
  }
  const std::size_t n = examples.size();
  const std::size_t batches_per_epoch = method.bpr ? fixed_batches.size() : (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = batches_per_epoch * static_cast<std::size_t>(cfg.epochs);

  AdamState adam = make_adam_state(out.params);
  AdamHyper hyper;
  hyper.lr = cfg.lr;
  Rng rng(mix_seed(seed, 3));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> batch_order(fixed_batches.size());
  std::iota(batch_order.begin(), batch_order.end(), 0);

  std::vector<Example> batch;
  std::vector<double> weights;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (method.mitigation == Mitigation::AdvTrain) {
      for (std::size_t i = 0; i < n; ++i) {
        const Item& item = data.train_items[i];
        try {
          examples[i].adv_ids = bfs_attack(out.params, data.vocab, data.corpus.samples[item.sample], item.target,
                                           item.label, data.pool, cfg.attack.k)
                                    .ids;
        } catch (const NoRenameable&) {
          examples[i].adv_ids = examples[i].ids;
        }
      }
    }
    std::vector<std::vector<std::size_t>> epoch_batches;
    if (method.bpr) {
      rng.shuffle(batch_order);
      for (std::size_t b : batch_order) epoch_batches.push_back(fixed_batches[b]);
    } else {
      rng.shuffle(order);
      for (std::size_t s = 0; s < n; s += cfg.batch_size) {
        epoch_batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(s),
                                   order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s + cfg.batch_size)));
      }
    }
    double epoch_loss = 0.0;
    for (const auto& idx : epoch_batches) {
      batch.clear();
      for (std::size_t i : idx) batch.push_back(examples[i]);
      LossSpec spec;
      spec.mitigation = method.mitigation;
      spec.reversal_coef = cfg.reversal_coef;
      if (method.bpr) {
        const double progress = static_cast<double>(out.steps) / static_cast<double>(std::max<std::size_t>(1, total_steps));
        spec.bpr_coef = gamma_p(progress);
        weights.assign(idx.size() * idx.size(), 0.0);
        for (std::size_t a = 0; a < idx.size(); ++a) {
          for (std::size_t b = 0; b < idx.size(); ++b) weights[a * idx.size() + b] = data.similarity->at(idx[a], idx[b]);
        }
        spec.pair_weights = weights;
      }
      const LossResult r = loss_and_backward(out.params, batch, spec);
      adam_step(out.params, r.grads, adam, hyper);
      epoch_loss += r.loss;
      ++out.steps;
    }
    out.final_loss = epoch_batches.empty() ? 0.0 : epoch_loss / static_cast<double>(epoch_batches.size());
  }
  if (!all_finite(out.params)) throw NonFinite("training produced non-finite parameters");
  return out;
}

// ---------------------------------------------------------------- evaluation

namespace {

double item_accuracy(const ModelParams& params, const PreparedData& data, const std::vector<Item>& items) {
  if (items.empty()) return 0.0;
  std::size_t ok = 0;
  for (const Item& it : items) {
    ok += predict(params, data.vocab.encode(data.corpus.samples[it.sample].tokens), it.target) == it.label ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(items.size());
}

}  // namespace

SeedResult evaluate_model(const ExperimentConfig& cfg, const PreparedData& data, const ModelParams& params,
                          std::uint64_t seed, std::optional<PlotData>* plot, std::vector<CaseStudy>* cases) {
  SeedResult r;
  r.seed = seed;
  r.intra = item_accuracy(params, data, data.intra_items);
  r.inter = item_accuracy(params, data, data.inter_items);

  const auto adv = build_adversarial_set(params, data.vocab, data.corpus, data.inter_items, data.pool, cfg.attack.k);
  std::size_t ok = 0, flipped = 0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    const int p_adv = predict(params, adv[i].ids, adv[i].target);
    ok += p_adv == adv[i].label ? 1 : 0;
    if (adv[i].perturbed) {
      ++r.attacked;
      const Item& it = data.inter_items[i];
      const int p_orig = predict(params, data.vocab.encode(data.corpus.samples[it.sample].tokens), it.target);
      flipped += p_adv != p_orig ? 1 : 0;
    }
  }
  r.adv = adv.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(adv.size());
  r.attack_success = r.attacked == 0 ? 0.0 : static_cast<double>(flipped) / static_cast<double>(r.attacked);

  // Attributions on the IID test items, for the predicted class.
  std::vector<AttributedSample> attributed;
  std::vector<int> predicted;
  attributed.reserve(data.intra_items.size());
  for (const Item& it : data.intra_items) {
    const Sample& s = data.corpus.samples[it.sample];
    const auto ids = data.vocab.encode(s.tokens);
    const int pred = predict(params, ids, it.target);
    auto attr = integrated_gradients(params, ids, it.target, pred, cfg.ig_steps);
    attributed.push_back({&s, std::move(attr.per_token)});
    predicted.push_back(pred);
  }
  for (std::size_t n = 1; n <= 3; ++n) {
    r.ratio_contains[n - 1] = topn_bias_ratio(attributed, data.corpus.bias_vocab, n, RatioMode::Contains);
    r.ratio_only[n - 1] = topn_bias_ratio(attributed, data.corpus.bias_vocab, n, RatioMode::Only);
  }

  if (!attributed.empty()) {
    const SortedIgDistribution dist = mean_ig_distribution(attributed);
    const Corpus train = subset(data.corpus, data.split.train_projects, data.samples.train);
    double sum = 0.0;
    int used = 0;
    for (int label = 0; label < num_classes(cfg.task); ++label) {
      const CondIdfTable table = cond_idf(train, label);
      try {
        const Alignment al = alignment(dist, table);
        sum += al.pearson_r;
        ++used;
        if (plot != nullptr && label == num_classes(cfg.task) - 1) {
          PlotData pd;
          pd.label = label;
          const std::size_t bars = std::min(cfg.svg_max_bars, al.fitted.size());
          std::size_t rank = 0;
          for (const auto& e : dist.entries) {
            if (rank >= bars) break;
            if (!table.rows.count(e.word)) continue;
            pd.bars.push_back(e);
            pd.fitted.push_back(al.fitted[rank]);
            pd.cond_idf.push_back(al.cond_idf[rank]);
            ++rank;
          }
          *plot = std::move(pd);
        }
      } catch (const DegenerateVariance&) {
      } catch (const Underdetermined&) {
      }
    }
    if (used > 0) r.alignment_r = sum / used;
  }

  if (cases != nullptr) {
    cases->clear();
    for (std::size_t i = 0; i < std::min(cfg.case_pages, data.intra_items.size()); ++i) {
      const Item& it = data.intra_items[i];
      const Sample& s = data.corpus.samples[it.sample];
      cases->push_back({s.sample_id, s.tokens, attributed[i].per_token, s.evidence_indices, it.target, it.label,
                        predicted[i]});
    }
  }
  return r;
}

SettingResult run_experiment(const ExperimentConfig& cfg, PreparedData& data) {
  SettingResult res;
  res.task = cfg.task;
  res.method = cfg.method;
  res.bpr_mode = cfg.resolved_bpr_mode();
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) {
    const std::uint64_t seed = cfg.seeds[i];
    try {
      TrainOutcome t = train_model(cfg, data, seed);
      SeedResult r = i == 0 ? evaluate_model(cfg, data, t.params, seed, &res.plot, &res.cases)
                            : evaluate_model(cfg, data, t.params, seed);
      r.final_loss = t.final_loss;
      res.seeds.push_back(r);
    } catch (const Error& e) {
      res.valid = false;
      res.error = "seed " + std::to_string(seed) + ": " + e.what();
      break;
    }
  }
  return res;
}

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  ExperimentReport report;
  report.config = to_json(cfg);
  PreparedData data = prepare_data(cfg);
  report.settings.push_back(run_experiment(cfg, data));
  return report;
}

ExperimentReport run_suite(const ExperimentConfig& cfg) {
  cfg.validate();
  ExperimentReport report;
  report.config = to_json(cfg);
  const auto methods = cfg.suite_methods.empty() ? standard_methods() : cfg.suite_methods;
  for (Task task : cfg.suite_tasks) {
    ExperimentConfig tc = cfg;
    tc.task = task;
    tc.bpr_mode.reset();
    if (cfg.bpr_mode && cfg.suite_tasks.size() == 1) tc.bpr_mode = cfg.bpr_mode;
    PreparedData data = prepare_data(tc);
    for (const Method& m : methods) {
      ExperimentConfig mc = tc;
      mc.method = m;
      mc.validate();
      report.settings.push_back(run_experiment(mc, data));
    }
    if (!cfg.sweep_batch_sizes.empty() && !cfg.sweep_seeds.empty()) {
      std::vector<SweepPoint> points;
      for (std::size_t b : cfg.sweep_batch_sizes) {
        ExperimentConfig sc = tc;
        sc.method = Method::parse(cfg.sweep_method);
        sc.batch_size = b;
        sc.seeds = cfg.sweep_seeds;
        sc.validate();
        SweepPoint p;
        p.batch_size = b;
        for (std::uint64_t seed : sc.seeds) {
          TrainOutcome t = train_model(sc, data, seed);
          p.intra += item_accuracy(t.params, data, data.intra_items);
          p.inter += item_accuracy(t.params, data, data.inter_items);
          const auto adv = build_adversarial_set(t.params, data.vocab, data.corpus, data.inter_items, data.pool,
                                                 sc.attack.k);
          std::size_t ok = 0;
          for (const auto& a : adv) ok += predict(t.params, a.ids, a.target) == a.label ? 1 : 0;
          p.adv += adv.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(adv.size());
        }
        const auto k = static_cast<double>(sc.seeds.size());
        p.intra /= k;
        p.inter /= k;
        p.adv /= k;
        points.push_back(p);
      }
      report.sweeps.emplace_back(task, std::move(points));
    }
  }
  return report;
}

}  // namespace codebias
