#include <fstream>
#include <stdexcept>

#include "codebias/errors.hpp"
#include "codebias/json_io.hpp"

namespace codebias {

using nlohmann::json;

json token_to_json(const Token& token) {
  return json{{"text", token.text}, {"kind", to_string(token.kind)}, {"span", {token.begin, token.end}}};
}

Token token_from_json(const json& j) {
  Token t;
  t.text = j.at("text").get<std::string>();
  t.kind = token_kind_from_string(j.at("kind").get<std::string>());
  const auto& span = j.at("span");
  if (!span.is_array() || span.size() != 2) throw std::invalid_argument("token span must be [start, end]");
  t.begin = span[0].get<std::size_t>();
  t.end = span[1].get<std::size_t>();
  return t;
}

json sample_to_json(const Sample& s) {
  json tokens = json::array();
  for (const auto& t : s.tokens) tokens.push_back(token_to_json(t));
  json j{{"sample_id", s.sample_id}, {"project_id", s.project_id}, {"task", to_string(s.task)}, {"tokens", tokens}};
  if (s.task == Task::VulnDet) {
    j["label"] = s.vuln_label;
  } else {
    json label = json::array();
    for (const auto& t : s.targets) label.push_back({t.token_index, type_class_name(t.type_class)});
    j["label"] = label;
  }
  j["evidence_indices"] = s.evidence_indices;
  j["bias_token_indices"] = s.bias_token_indices;
  return j;
}

Sample sample_from_json(const json& j) {
  Sample s;
  s.sample_id = j.at("sample_id").get<std::string>();
  s.project_id = j.at("project_id").get<std::string>();
  s.task = task_from_string(j.at("task").get<std::string>());
  for (const auto& t : j.at("tokens")) s.tokens.push_back(token_from_json(t));
  const auto& label = j.at("label");
  if (s.task == Task::VulnDet) {
    s.vuln_label = label.get<int>();
    if (s.vuln_label != 0 && s.vuln_label != 1) throw std::invalid_argument("VulnDet label must be 0 or 1");
  } else {
    for (const auto& t : label) {
      if (!t.is_array() || t.size() != 2) throw std::invalid_argument("TypeInf label entries are [index, type]");
      s.targets.push_back({t[0].get<std::size_t>(), type_class_from_name(t[1].get<std::string>())});
    }
  }
  s.evidence_indices = j.at("evidence_indices").get<std::vector<std::size_t>>();
  s.bias_token_indices = j.at("bias_token_indices").get<std::vector<std::size_t>>();

  const std::size_t n = s.tokens.size();
  auto check = [n](std::size_t i) {
    if (i >= n) throw std::invalid_argument("index " + std::to_string(i) + " out of range");
  };
  for (auto i : s.evidence_indices) check(i);
  for (auto i : s.bias_token_indices) check(i);
  for (const auto& t : s.targets) check(t.token_index);
  return s;
}

json corpus_header(const Corpus& corpus) {
  return json{{"task", to_string(corpus.task)},
              {"projects", corpus.projects},
              {"bias_vocab", corpus.bias_vocab},
              {"label_subwords", corpus.label_subwords}};
}

void write_corpus(const Corpus& corpus, std::ostream& out) {
  out << corpus_header(corpus).dump() << '\n';
  for (const auto& s : corpus.samples) out << sample_to_json(s).dump() << '\n';
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::set<std::string> projects;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() && in.eof()) break;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError(line_no, e.what());
    }
    try {
      if (!have_header) {
        corpus.task = task_from_string(j.at("task").get<std::string>());
        corpus.projects = j.at("projects").get<std::vector<std::string>>();
        corpus.bias_vocab = j.at("bias_vocab").get<std::set<std::string>>();
        if (j.contains("label_subwords")) {
          corpus.label_subwords = j.at("label_subwords").get<std::map<std::string, std::vector<std::string>>>();
        }
        projects.insert(corpus.projects.begin(), corpus.projects.end());
        have_header = true;
        continue;
      }
      Sample s = sample_from_json(j);
      if (s.task != corpus.task) throw std::invalid_argument("sample task differs from header task");
      if (!projects.count(s.project_id)) throw std::invalid_argument("unknown project '" + s.project_id + "'");
      corpus.samples.push_back(std::move(s));
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception& e) {
      throw FormatError(line_no, e.what());
    }
  }
  if (!have_header) throw FormatError(line_no == 0 ? 1 : line_no, "missing corpus header line");
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_corpus(corpus, out);
  if (!out) throw IoError("write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return read_corpus(in);
}

}  // namespace codebias
