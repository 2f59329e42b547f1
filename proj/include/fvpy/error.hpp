#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fvpy {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ValueError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Model file problems. The kind lets callers tell a truncated file from a
// file that was never a model file at all.
class ModelFormatError : public Error {
 public:
  enum class Kind : std::uint8_t { BadMagic, VersionMismatch, CorruptHeader, Truncated };

  ModelFormatError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// Annotation / dataset parse failure, carrying the offending file and line.
class ParseError : public Error {
 public:
  ParseError(std::string file, int line, const std::string& what)
      : Error(file + (line > 0 ? ":" + std::to_string(line) : std::string()) + ": " + what),
        file_(std::move(file)),
        line_(line) {}

  const std::string& file() const noexcept { return file_; }
  int line() const noexcept { return line_; }

 private:
  std::string file_;
  int line_;
};

class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace fvpy
