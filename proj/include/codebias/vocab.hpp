#pragma once

#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "codebias/lang.hpp"

namespace codebias {

struct Corpus;

// Token-text vocabulary with two reserved entries.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kMask = 1;

  Vocabulary();

  int add(std::string_view word);
  // kUnk for unknown words.
  int id(std::string_view word) const;
  bool contains(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  std::vector<int> encode(std::span<const Token> tokens) const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, int> index_;
};

// Every token text of the corpus plus any extra words, in first-seen order.
Vocabulary build_vocabulary(const Corpus& corpus, const std::vector<std::string>& extra = {});

}  // namespace codebias
