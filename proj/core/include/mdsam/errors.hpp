#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mdsam {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shapes or lengths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (empty input, d_k = 0, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// Index or span outside the addressed container.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or model configuration. key() names the offending field.
class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}

  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

// Malformed text input. line() is 1-based; 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(std::string source, std::size_t line, std::string field, const std::string& what)
      : Error(format(source, line, field, what)),
        source_(std::move(source)),
        line_(line),
        field_(std::move(field)) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string format(const std::string& source, std::size_t line,
                            const std::string& field, const std::string& what) {
    std::string out = source.empty() ? std::string("<input>") : source;
    if (line != 0) out += ":" + std::to_string(line);
    if (!field.empty()) out += ": field '" + field + "'";
    return out + ": " + what;
  }

  std::string source_;
  std::size_t line_;
  std::string field_;
};

// Well-formed input that is missing or misnames required columns/keys.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Two traces that cannot be compared step by step.
class ComparisonError : public Error {
 public:
  using Error::Error;
};

// File system failures; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdsam
