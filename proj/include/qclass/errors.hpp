#pragma once

#include <stdexcept>
#include <string>

namespace qclass {

// Malformed TREC line. Carries the 1-based line number when known (0 otherwise).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Malformed embedding / checkpoint / cache file.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int epoch, std::size_t batch, const std::string& what)
      : std::runtime_error("diverged at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) +
                           ": " + what),
        epoch_(epoch),
        batch_(batch) {}
  int epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  int epoch_;
  std::size_t batch_;
};

}  // namespace qclass
