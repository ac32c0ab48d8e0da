#pragma once

#include <stdexcept>
#include <string>

namespace polyarg {

// Base class for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file. Carries the 1-based data row (header excluded) and
// the offending field when known.
class ParseError : public Error {
 public:
  ParseError(std::string file, std::size_t row, std::string field, const std::string& what);

  const std::string& file() const { return file_; }
  std::size_t row() const { return row_; }
  const std::string& field() const { return field_; }

 private:
  std::string file_;
  std::size_t row_;
  std::string field_;
};

}  // namespace polyarg
