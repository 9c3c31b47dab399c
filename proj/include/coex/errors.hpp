#pragma once

#include <stdexcept>
#include <string>

namespace coex {

// Process exit codes used by the command line tool.
enum class ExitCode : int {
  kSuccess = 0,
  kSchema = 2,
  kNumerical = 3,
  kIo = 4,
};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual ExitCode exit_code() const noexcept { return ExitCode::kNumerical; }
};

// Dimension mismatches, out-of-range indices, non-finite inputs.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// A joint second-order specification that is not positive semi-definite.
class InvalidBeliefs : public Error {
 public:
  using Error::Error;
};

class NotPsd : public Error {
 public:
  using Error::Error;
};

// The ensemble carries no spread (all members identical).
class DegenerateEnsemble : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kSchema; }
};

class ParseError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kSchema; }
};

class IoError : public Error {
 public:
  using Error::Error;
  ExitCode exit_code() const noexcept override { return ExitCode::kIo; }
};

// Wraps an error raised inside a pipeline stage with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error("[" + stage + "] " + cause.what()),
        stage_(std::move(stage)),
        code_(cause.exit_code()) {}
  const std::string& stage() const noexcept { return stage_; }
  ExitCode exit_code() const noexcept override { return code_; }

 private:
  std::string stage_;
  ExitCode code_;
};

}  // namespace coex
