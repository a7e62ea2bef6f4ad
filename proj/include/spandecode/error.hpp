#pragma once

#include <stdexcept>
#include <string>

namespace spandecode {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller passed an argument that violates an operation's precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A token sequence was used with a vocabulary other than the one it was
// encoded under, or contains an id outside the vocabulary.
class VocabularyMismatch : public Error {
 public:
  using Error::Error;
};

// Malformed input data (dataset lines, vocab/table files, score tables).
class DataError : public Error {
 public:
  using Error::Error;
};

// The remote scorer could not be reached or replied with garbage.
class TransportError : public Error {
 public:
  using Error::Error;
};

}  // namespace spandecode
