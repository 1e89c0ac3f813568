#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace v2x {

/// Base class for every error raised by the toolkit on bad input data.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidQuaternion : public Error {
 public:
  using Error::Error;
};

class FrameError : public Error {
 public:
  using Error::Error;
};

class InvalidBox : public Error {
 public:
  using Error::Error;
};

class EstimationError : public Error {
 public:
  using Error::Error;
};

class RegistrationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Raised on malformed label documents. `path()` is a JSON pointer to the
/// offending node, empty when the document is not even valid JSON.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::string path, std::size_t byte_offset = 0)
      : Error(what), path_(std::move(path)), byte_offset_(byte_offset) {}

  const std::string& path() const { return path_; }
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::string path_;
  std::size_t byte_offset_;
};

/// Malformed KITTI-style text. Line numbers are 1-based.
class KittiError : public Error {
 public:
  KittiError(const std::string& what, std::size_t frame, std::size_t line)
      : Error(what), frame_(frame), line_(line) {}

  std::size_t frame() const { return frame_; }
  std::size_t line() const { return line_; }

 private:
  std::size_t frame_;
  std::size_t line_;
};

class PcdError : public Error {
 public:
  using Error::Error;
};

/// Collects non-fatal findings (lossy conversions, missing calibration, ...).
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message) { warnings.push_back(std::move(message)); }
};

inline void warn(Diagnostics* diag, std::string message) {
  if (diag) diag->warn(std::move(message));
}

}  // namespace v2x
