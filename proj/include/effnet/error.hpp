#pragma once

#include <stdexcept>
#include <string>

namespace effnet {

// Base class for every error the library raises.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor or layer shapes. `where()` names the op or layer.
class ShapeError : public Error {
public:
  ShapeError(std::string where, const std::string& what)
      : Error(where + ": " + what), where_(std::move(where)) {}
  const std::string& where() const noexcept { return where_; }

private:
  std::string where_;
};

// Invalid argument outside of shape checks (rates, sigmas, fractions...).
class ArgumentError : public Error {
public:
  using Error::Error;
};

// Malformed input files: images, manifests, JSON documents.
class FormatError : public Error {
public:
  FormatError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

private:
  std::string path_;
};

// Training diverged (non-finite loss or gradient).
class NumericError : public Error {
public:
  using Error::Error;
};

} // namespace effnet
