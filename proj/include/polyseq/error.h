//
// PolySeq - Copyright 2026 The PolySeq Authors.
// SPDX-License-Identifier: Apache-2.0
//

#ifndef POLYSEQ_ERROR_H_
#define POLYSEQ_ERROR_H_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace polyseq {

class Error: public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed SMILES. `position` is the byte offset of the offending character.
class SyntaxError: public Error {
public:
  SyntaxError(std::size_t position, const std::string &message)
      : Error("SMILES syntax error at position " + std::to_string(position)
              + ": " + message),
        position_(position) { }

  std::size_t position() const { return position_; }

private:
  std::size_t position_;
};

class TokenizeError: public Error {
public:
  TokenizeError(std::size_t position, const std::string &message)
      : Error("cannot tokenize at byte offset " + std::to_string(position)
              + ": " + message),
        position_(position) { }

  std::size_t position() const { return position_; }

private:
  std::size_t position_;
};

class SchemaError: public Error {
public:
  using Error::Error;
};

class ShapeError: public Error {
public:
  using Error::Error;
};

class GraphError: public Error {
public:
  using Error::Error;
};

class StateError: public Error {
public:
  using Error::Error;
};

class NameError: public Error {
public:
  using Error::Error;
};

class DegenerateBatch: public Error {
public:
  using Error::Error;
};

class EmptySplit: public Error {
public:
  using Error::Error;
};

class ConfigError: public Error {
public:
  using Error::Error;
};

class NumericalError: public Error {
public:
  using Error::Error;
};

class IoError: public Error {
public:
  using Error::Error;
};

}  // namespace polyseq

#endif  // POLYSEQ_ERROR_H_
