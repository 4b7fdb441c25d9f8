#include "codebias/vocab.hpp"

#include "codebias/corpus.hpp"

namespace codebias {

Vocabulary::Vocabulary() {
  add("[UNK]");
  add("[MASK]");
}

int Vocabulary::add(std::string_view word) {
  auto [it, inserted] = index_.try_emplace(std::string(word), static_cast<int>(words_.size()));
  if (inserted) words_.emplace_back(word);
  return it->second;
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

std::vector<int> Vocabulary::encode(std::span<const Token> tokens) const {
  std::vector<int> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t.text));
  return ids;
}

Vocabulary build_vocabulary(const Corpus& corpus, const std::vector<std::string>& extra) {
  Vocabulary v;
  for (const auto& s : corpus.samples) {
    for (const auto& t : s.tokens) v.add(t.text);
  }
  for (const auto& w : extra) v.add(w);
  return v;
}

}  // namespace codebias
