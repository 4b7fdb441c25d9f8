#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "codebias/lang.hpp"

namespace codebias {

enum class Task : std::uint8_t { TypeInf, VulnDet };

std::string_view to_string(Task task);
Task task_from_string(std::string_view name);
int num_classes(Task task);

// TypeInf classes.
inline constexpr int kNumber = 0;
inline constexpr int kString = 1;
inline constexpr int kBoolean = 2;
std::string_view type_class_name(int type_class);
int type_class_from_name(std::string_view name);

struct TypeTarget {
  std::size_t token_index = 0;
  int type_class = kNumber;

  bool operator==(const TypeTarget&) const = default;
};

struct Sample {
  std::string sample_id;
  std::string project_id;
  std::vector<Token> tokens;
  Task task = Task::VulnDet;
  int vuln_label = 0;               // VulnDet: 1 = vulnerable
  std::vector<TypeTarget> targets;  // TypeInf
  std::vector<std::size_t> evidence_indices;
  std::vector<std::size_t> bias_token_indices;

  bool operator==(const Sample&) const = default;
};

struct Corpus {
  Task task = Task::VulnDet;
  std::vector<std::string> projects;
  std::set<std::string> bias_vocab;
  // Label-correlated subword of every project, indexed by class.
  std::map<std::string, std::vector<std::string>> label_subwords;
  std::vector<Sample> samples;

  bool operator==(const Corpus&) const = default;
};

// One classification instance: a VulnDet sample, or one TypeInf target.
struct Item {
  std::size_t sample = 0;
  std::optional<std::size_t> target;  // token index for TypeInf
  int label = 0;
};

std::vector<Item> items_of(const Corpus& corpus, std::size_t sample_index);
std::vector<Item> items_of(const Corpus& corpus, const std::vector<std::size_t>& sample_indices);

struct GenConfig {
  int num_projects = 20;
  int samples_per_project = 200;
  double bias_strength = 0.9;
  Task task = Task::VulnDet;
  std::uint64_t seed = 0;
  // Seed of the project split that decides which projects are TRAIN; label
  // bias is only injected there.
  std::uint64_t split_seed = 0;
};

Corpus generate_corpus(const GenConfig& cfg);

struct SplitSpec {
  std::vector<std::string> train_projects;
  std::vector<std::string> ood_val_projects;
  std::vector<std::string> ood_test_projects;
  double iid_test_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Shuffles projects by seed and cuts them 70/10/20 (TRAIN / OOD-val /
// OOD-test), each partition holding at least one project.
SplitSpec split_projects(const Corpus& corpus, std::uint64_t seed);

struct SampleSplit {
  std::vector<std::size_t> train;     // TRAIN projects, IID training part
  std::vector<std::size_t> iid_test;  // TRAIN projects, held-out part
  std::vector<std::size_t> ood_val;
  std::vector<std::size_t> ood_test;
};

// Holds out iid_test_fraction of every TRAIN project's samples.
SampleSplit assign_samples(const Corpus& corpus, const SplitSpec& split);

// Restricts a corpus to the given projects (keeps project order).
Corpus subset(const Corpus& corpus, const std::vector<std::string>& projects,
              const std::vector<std::size_t>& sample_indices);

// JSON-lines: a header {"task","projects","bias_vocab",...} then one sample
// per line.
void write_corpus(const Corpus& corpus, std::ostream& out);
Corpus read_corpus(std::istream& in);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace codebias
