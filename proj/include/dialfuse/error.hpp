#pragma once

#include <stdexcept>
#include <string>

namespace dialfuse {

// Base for every error raised by the library. Subclasses map onto the
// failure classes callers are expected to branch on.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Model output that is not a well-formed "mode: query" state.
class StateParseError : public ParseError {
 public:
  using ParseError::ParseError;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Network or timeout failure. Safe to retry.
class TransportError : public Error {
 public:
  using Error::Error;
};

// Provider refused the request (quota, auth). Not retriable.
class ProviderError : public Error {
 public:
  using Error::Error;
};

class ScriptExhausted : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

class NoGoal : public Error {
 public:
  using Error::Error;
};

class InitRejected : public Error {
 public:
  using Error::Error;
};

class SettingInapplicable : public Error {
 public:
  using Error::Error;
};

class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

class Conflict : public Error {
 public:
  using Error::Error;
};

}  // namespace dialfuse
