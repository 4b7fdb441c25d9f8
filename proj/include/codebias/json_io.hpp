#pragma once

// JSON encodings shared by the corpus, adversarial-set and report files.

#include <json.hpp>

#include "codebias/corpus.hpp"

namespace codebias {

nlohmann::json token_to_json(const Token& token);
Token token_from_json(const nlohmann::json& j);

nlohmann::json sample_to_json(const Sample& sample);
// Validates field types and index ranges; throws std::invalid_argument with a
// description on malformed input.
Sample sample_from_json(const nlohmann::json& j);

nlohmann::json corpus_header(const Corpus& corpus);

}  // namespace codebias
