#pragma once

// Experiment orchestration: configuration, training with any loss
// composition, INTRA / INTER / ADV evaluation, diagnostics, and reports.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "codebias/biasmetrics.hpp"
#include "codebias/corpus.hpp"
#include "codebias/debias.hpp"
#include "codebias/model.hpp"
#include "codebias/simbpr.hpp"
#include "codebias/vocab.hpp"

namespace codebias {

struct Method {
  Mitigation mitigation = Mitigation::None;
  bool bpr = false;

  std::string name() const;  // "advtrain+bpr", ...
  static Method parse(std::string_view name);
  bool operator==(const Method&) const = default;
};

struct ExperimentConfig {
  Task task = Task::VulnDet;
  GenConfig generator;  // task and split_seed are taken from this config
  std::uint64_t split_seed = 0;
  std::size_t embed_dim = 32;
  std::size_t hidden_dim = 64;
  std::size_t head_dim = 32;
  int epochs = 10;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  Method method;
  std::optional<EmbedMode> bpr_mode;  // default: AstBow for TypeInf, CfgPaths for VulnDet
  double reversal_coef = 0.1;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  AttackConfig attack;
  int ig_steps = 50;
  std::size_t svg_max_bars = 120;
  std::size_t case_pages = 4;
  std::string output_dir = "out";
  std::string corpus_path;  // load instead of generating when set

  // run-all only
  std::vector<Task> suite_tasks = {Task::TypeInf, Task::VulnDet};
  std::vector<Method> suite_methods;  // default: the seven standard settings
  std::vector<std::size_t> sweep_batch_sizes = {4, 8, 16, 32};
  std::string sweep_method = "gradrev+bpr";
  std::vector<std::uint64_t> sweep_seeds = {0};

  EmbedMode resolved_bpr_mode() const;
  GenConfig resolved_generator() const;
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
// Unknown keys are rejected. Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

std::vector<Method> standard_methods();

// Everything derived from the corpus that does not depend on the training
// seed.
struct PreparedData {
  Corpus corpus;
  SplitSpec split;
  SampleSplit samples;
  Vocabulary vocab;
  std::vector<std::string> bias_words;  // sorted bias vocabulary
  CandidatePool pool;
  std::vector<Item> train_items;
  std::vector<Item> intra_items;
  std::vector<Item> inter_items;
  std::optional<SimilarityMatrix> similarity;  // over train_items, built on demand
  std::vector<std::size_t> ordering;           // unshuffle(similarity)
};

PreparedData prepare_data(const ExperimentConfig& cfg);
void ensure_similarity(PreparedData& data, EmbedMode mode);

ModelConfig model_config(const ExperimentConfig& cfg, const PreparedData& data, Activation act = Activation::Tanh);

struct TrainOutcome {
  ModelParams params;
  double final_loss = 0.0;
  std::size_t steps = 0;
};

// Trains one model with the configured method. Batches come from the
// similarity ordering under BPR and from seeded shuffles otherwise.
TrainOutcome train_model(const ExperimentConfig& cfg, PreparedData& data, std::uint64_t seed);

struct CaseStudy {
  std::string sample_id;
  std::vector<Token> tokens;
  std::vector<double> per_token;
  std::vector<std::size_t> evidence;
  std::optional<std::size_t> target;
  int label = 0;
  int predicted = 0;
};

struct SeedResult {
  std::uint64_t seed = 0;
  double intra = 0.0;
  double inter = 0.0;
  double adv = 0.0;
  double attack_success = 0.0;
  std::size_t attacked = 0;
  std::array<double, 3> ratio_contains{};  // top-1/2/3
  std::array<double, 3> ratio_only{};
  std::optional<double> alignment_r;
  double final_loss = 0.0;
};

struct PlotData {
  std::vector<IgEntry> bars;      // capped at svg_max_bars
  std::vector<double> fitted;     // Cond-Idf fit per bar
  std::vector<double> cond_idf;   // raw Cond-Idf per bar
  int label = 0;
};

struct SettingResult {
  Task task = Task::VulnDet;
  Method method;
  EmbedMode bpr_mode = EmbedMode::CfgPaths;
  bool valid = true;
  std::string error;
  std::vector<SeedResult> seeds;
  std::optional<PlotData> plot;     // first seed
  std::vector<CaseStudy> cases;     // first seed
};

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;
};

struct SweepPoint {
  std::size_t batch_size = 0;
  double intra = 0.0;
  double inter = 0.0;
  double adv = 0.0;
};

struct ExperimentReport {
  nlohmann::json config;
  std::vector<SettingResult> settings;
  std::vector<std::pair<Task, std::vector<SweepPoint>>> sweeps;
};

// Evaluates a trained model on one prepared data set.
SeedResult evaluate_model(const ExperimentConfig& cfg, const PreparedData& data, const ModelParams& params,
                          std::uint64_t seed, std::optional<PlotData>* plot = nullptr,
                          std::vector<CaseStudy>* cases = nullptr);

// All seeds of the configured method. Errors inside a seed mark the setting
// invalid and keep the completed seeds.
SettingResult run_experiment(const ExperimentConfig& cfg, PreparedData& data);
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Every suite task x method, plus the batch-size sweep.
ExperimentReport run_suite(const ExperimentConfig& cfg);

// ---------------------------------------------------------------- reports

Aggregate aggregate(const std::vector<double>& values);
nlohmann::json report_to_json(const ExperimentReport& report);

// metrics.json, tables.csv, distribution.svg (and one SVG per setting),
// batch_sweep.svg, cases/*.html. Throws IoError.
void emit_report(const ExperimentReport& report, const std::filesystem::path& out_dir);
// Rebuilds tables.csv and the SVG/HTML files from a metrics.json.
void emit_from_metrics(const nlohmann::json& metrics, const std::filesystem::path& out_dir);

std::string distribution_svg(const nlohmann::json& plot, const std::string& title);
std::string case_html(const nlohmann::json& case_study, const std::string& title);

}  // namespace codebias
