// Command-line front end: gen, train, attack, analyze, report, run-all.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "codebias/attribution.hpp"
#include "codebias/biasmetrics.hpp"
#include "codebias/errors.hpp"
#include "codebias/harness.hpp"

namespace fs = std::filesystem;
using namespace codebias;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string model;
  std::string metrics;
};

ExperimentConfig resolve(const GlobalOptions& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.seed) cfg.seeds = {*g.seed};
  cfg.validate();
  return cfg;
}

fs::path out_dir(const ExperimentConfig& cfg) {
  fs::path dir = cfg.output_dir;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void echo_config(const ExperimentConfig& cfg, const fs::path& dir) {
  write_json(dir / "config.resolved.json", to_json(cfg));
}

std::uint64_t first_seed(const ExperimentConfig& cfg) { return cfg.seeds.empty() ? 0 : cfg.seeds.front(); }

ModelParams load_model(const GlobalOptions& g, const fs::path& dir, const PreparedData& data) {
  const fs::path path = g.model.empty() ? dir / "model.json" : fs::path(g.model);
  Vocabulary vocab;
  ModelParams params = load_checkpoint(path, &vocab);
  if (vocab.words() != data.vocab.words()) {
    throw ConfigError("checkpoint vocabulary does not match the corpus of this config");
  }
  return params;
}

int cmd_gen(const GlobalOptions& g) {
  ExperimentConfig cfg = resolve(g);
  if (g.seed) cfg.generator.seed = *g.seed;
  const fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  const Corpus corpus = generate_corpus(cfg.resolved_generator());
  save_corpus(corpus, dir / "corpus.jsonl");
  std::cout << "wrote " << corpus.samples.size() << " samples to " << (dir / "corpus.jsonl").string() << '\n';
  return 0;
}

int cmd_train(const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve(g);
  const fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  PreparedData data = prepare_data(cfg);
  const std::uint64_t seed = first_seed(cfg);
  const TrainOutcome t = train_model(cfg, data, seed);
  save_checkpoint(t.params, data.vocab, dir / "model.json");
  std::vector<Example> intra, inter;
  for (const auto& it : data.intra_items) intra.push_back(make_example(data.corpus, data.vocab, it));
  for (const auto& it : data.inter_items) inter.push_back(make_example(data.corpus, data.vocab, it));
  const nlohmann::json summary = {{"method", cfg.method.name()},   {"seed", seed},
                                  {"final_loss", t.final_loss},    {"steps", t.steps},
                                  {"intra", accuracy(t.params, intra)}, {"inter", accuracy(t.params, inter)}};
  write_json(dir / "train.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_attack(const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve(g);
  const fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  const PreparedData data = prepare_data(cfg);
  const ModelParams params = load_model(g, dir, data);
  const auto adv = build_adversarial_set(params, data.vocab, data.corpus, data.inter_items, data.pool, cfg.attack.k);
  std::ofstream out(dir / "adversarial.jsonl");
  if (!out) throw IoError("cannot write adversarial set");
  write_adversarial_set(data.corpus, adv, out);
  std::size_t ok = 0, perturbed = 0;
  for (const auto& a : adv) {
    ok += predict(params, a.ids, a.target) == a.label ? 1 : 0;
    perturbed += a.perturbed ? 1 : 0;
  }
  const nlohmann::json summary = {
      {"samples", adv.size()},
      {"perturbed", perturbed},
      {"adv_accuracy", adv.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(adv.size())}};
  write_json(dir / "attack.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_analyze(const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve(g);
  const fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  const PreparedData data = prepare_data(cfg);
  const ModelParams params = load_model(g, dir, data);

  std::vector<AttributionRecord> records;
  std::vector<AttributedSample> attributed;
  for (const Item& it : data.intra_items) {
    const Sample& s = data.corpus.samples[it.sample];
    const auto ids = data.vocab.encode(s.tokens);
    const int pred = predict(params, ids, it.target);
    auto attr = integrated_gradients(params, ids, it.target, pred, cfg.ig_steps);
    records.push_back({s.sample_id, it.target, pred, cfg.ig_steps, attr.per_token});
    attributed.push_back({&s, std::move(attr.per_token)});
  }
  {
    std::ofstream out(dir / "attributions.jsonl");
    if (!out) throw IoError("cannot write attributions");
    write_attributions(records, out);
  }
  const Corpus train = subset(data.corpus, data.split.train_projects, data.samples.train);
  std::vector<CondIdfTable> tables;
  for (int l = 0; l < num_classes(cfg.task); ++l) tables.push_back(cond_idf(train, l));
  {
    std::ofstream out(dir / "cond_idf.csv");
    if (!out) throw IoError("cannot write cond_idf.csv");
    write_cond_idf_csv(tables, out);
  }
  const SortedIgDistribution dist = mean_ig_distribution(attributed);
  nlohmann::json summary = {{"distribution", to_json(dist)}};
  nlohmann::json ratios;
  for (std::size_t n = 1; n <= 3; ++n) {
    ratios["contains"].push_back(topn_bias_ratio(attributed, data.corpus.bias_vocab, n, RatioMode::Contains));
    ratios["only"].push_back(topn_bias_ratio(attributed, data.corpus.bias_vocab, n, RatioMode::Only));
  }
  summary["bias_ratio"] = ratios;
  const CondIdfTable& table = tables.back();
  try {
    const Alignment al = alignment(dist, table);
    summary["alignment_r"] = al.pearson_r;
    nlohmann::json bars = nlohmann::json::array();
    std::size_t rank = 0;
    for (const auto& e : dist.entries) {
      if (rank >= std::min(cfg.svg_max_bars, al.fitted.size())) break;
      if (!table.rows.count(e.word)) continue;
      bars.push_back({{"word", e.word},
                      {"mean_ig", e.mean_ig},
                      {"category", to_string(e.category)},
                      {"cond_idf", al.cond_idf[rank]},
                      {"fitted", al.fitted[rank]}});
      ++rank;
    }
    const nlohmann::json plot = {{"label", table.label}, {"bars", bars}};
    std::ofstream svg(dir / "distribution.svg");
    svg << distribution_svg(plot, "Sorted mean IG (" + std::string(to_string(cfg.task)) + ")");
  } catch (const DegenerateVariance& e) {
    summary["alignment_r"] = nullptr;
    summary["alignment_error"] = e.what();
  }
  write_json(dir / "analysis.json", summary);
  std::cout << "alignment_r " << summary["alignment_r"].dump() << ", top-3 contains "
            << ratios["contains"][2].dump() << '\n';
  return 0;
}

int cmd_report(const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve(g);
  const fs::path dir = out_dir(cfg);
  const fs::path path = g.metrics.empty() ? dir / "metrics.json" : fs::path(g.metrics);
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  nlohmann::json metrics;
  try {
    in >> metrics;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(1, e.what());
  }
  emit_from_metrics(metrics, dir);
  std::cout << "report written to " << dir.string() << '\n';
  return 0;
}

int cmd_run_all(const GlobalOptions& g) {
  const ExperimentConfig cfg = resolve(g);
  const fs::path dir = out_dir(cfg);
  echo_config(cfg, dir);
  const ExperimentReport report = run_suite(cfg);
  emit_report(report, dir);
  for (const auto& s : report.settings) {
    std::vector<double> intra, inter, adv;
    for (const auto& r : s.seeds) {
      intra.push_back(r.intra);
      inter.push_back(r.inter);
      adv.push_back(r.adv);
    }
    std::printf("%-8s %-14s INTRA %.3f  INTER %.3f  ADV %.3f%s\n", std::string(to_string(s.task)).c_str(),
                s.method.name().c_str(), aggregate(intra).mean, aggregate(inter).mean, aggregate(adv).mean,
                s.valid ? "" : "  (invalid)");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Project-specific bias experiments on a synthetic code corpus", "codebias"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "experiment config (JSON)");
  app.add_option("--seed", g.seed, "override the seed list with one seed");
  app.add_option("--out", g.out, "output directory");

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const GlobalOptions&);
  };
  const Sub subs[] = {{"gen", "generate a corpus", cmd_gen},
                      {"train", "train one model", cmd_train},
                      {"attack", "build the adversarial set for a trained model", cmd_attack},
                      {"analyze", "attributions, Cond-Idf and alignment for a trained model", cmd_analyze},
                      {"report", "rebuild tables and plots from metrics.json", cmd_report},
                      {"run-all", "every task and method over all seeds", cmd_run_all}};
  int (*chosen)(const GlobalOptions&) = nullptr;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    sub->fallthrough();
    if (std::string_view(s.name) == "attack" || std::string_view(s.name) == "analyze") {
      sub->add_option("--model", g.model, "checkpoint (default <out>/model.json)");
    }
    if (std::string_view(s.name) == "report") sub->add_option("--metrics", g.metrics, "metrics.json to render");
    sub->callback([&chosen, run = s.run] { chosen = run; });
  }

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  try {
    return chosen(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
