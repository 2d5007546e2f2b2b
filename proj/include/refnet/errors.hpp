#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace refnet {

class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not fit the operation.
class DimensionError : public Error {
   public:
    using Error::Error;
};

/// Input outside the mathematical domain of an operation (e.g. log of a non-positive entry).
class DomainError : public Error {
   public:
    DomainError(const std::string& what, std::size_t index) : Error(what), index_(index) {}
    std::size_t index() const { return index_; }

   private:
    std::size_t index_;
};

/// A vector whose norm is too small to normalize.
class DegenerateVectorError : public Error {
   public:
    using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class ParseError : public Error {
   public:
    ParseError(const std::string& what, std::size_t line) : Error(what), line_(line) {}
    std::size_t line() const { return line_; }

   private:
    std::size_t line_;
};

class RankDeficiencyError : public Error {
   public:
    RankDeficiencyError(const std::string& what, std::size_t rank) : Error(what), rank_(rank) {}
    std::size_t rank() const { return rank_; }

   private:
    std::size_t rank_;
};

class TrainingError : public Error {
   public:
    using Error::Error;
};

}  // namespace refnet
