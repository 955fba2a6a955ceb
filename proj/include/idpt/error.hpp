#pragma once

#include <stdexcept>
#include <string>

namespace idpt {

// Base of every error the library throws. Subclasses let callers (the CLI in
// particular) categorize failures without string matching.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedLanguage : public Error {
 public:
  explicit UnsupportedLanguage(const std::string& tag)
      : Error("unsupported language: " + tag), tag_(tag) {}
  const std::string& tag() const { return tag_; }

 private:
  std::string tag_;
};

// Raised when an instance would need more sentinels than [MASK0]..[MASK99].
class SentinelExhausted : public Error {
 public:
  using Error::Error;
};

}  // namespace idpt
