#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace codebias {

// Root of every error raised by the library. The CLI maps these to exit
// code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class LexError : public Error {
 public:
  LexError(std::size_t offset, const std::string& what)
      : Error("lex error at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t token_index, std::vector<std::string> expected);
  std::size_t token_index() const { return token_index_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  std::size_t token_index_;
  std::vector<std::string> expected_;
};

class FormatError : public Error {
 public:
  FormatError(std::size_t line, const std::string& what)
      : Error("format error at line " + std::to_string(line) + ": " + what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

#define CODEBIAS_SIMPLE_ERROR(Name)   \
  class Name : public Error {         \
   public:                            \
    using Error::Error;               \
  };

CODEBIAS_SIMPLE_ERROR(NotADeclaration)
CODEBIAS_SIMPLE_ERROR(ConfigError)
CODEBIAS_SIMPLE_ERROR(IndexError)
CODEBIAS_SIMPLE_ERROR(NonFinite)
CODEBIAS_SIMPLE_ERROR(InvalidArgument)
CODEBIAS_SIMPLE_ERROR(UnknownLabel)
CODEBIAS_SIMPLE_ERROR(Misalignment)
CODEBIAS_SIMPLE_ERROR(Underdetermined)
CODEBIAS_SIMPLE_ERROR(DegenerateVariance)
CODEBIAS_SIMPLE_ERROR(ModeMismatch)
CODEBIAS_SIMPLE_ERROR(NoRenameable)
CODEBIAS_SIMPLE_ERROR(IoError)

#undef CODEBIAS_SIMPLE_ERROR

}  // namespace codebias
