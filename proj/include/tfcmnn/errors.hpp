#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tfcmnn {

// Root of every error thrown by the library. The CLI maps the subclasses onto
// exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class EvaluationError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class ConfigurationError : public Error { public: using Error::Error; };
class CacheMismatchError : public Error { public: using Error::Error; };

class TooShortError : public Error { public: using Error::Error; };

class DegenerateFeatureError : public Error
{
public:
    explicit DegenerateFeatureError(std::size_t index)
        : Error("coefficient " + std::to_string(index) + " has zero variance")
        , index_(index)
    {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

class ParseError : public Error
{
public:
    // `position` is the 1-based index of the offending token.
    ParseError(std::size_t position, const std::string& what)
        : Error("token " + std::to_string(position) + ": " + what)
        , position_(position)
    {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

// On-disk format problems. Each failure mode is its own type so callers can
// tell a truncated file from a corrupted one.
class FormatError : public Error { public: using Error::Error; };
class BadMagicError : public FormatError { public: using FormatError::FormatError; };
class BadVersionError : public FormatError { public: using FormatError::FormatError; };
class TruncatedError : public FormatError { public: using FormatError::FormatError; };
class CrcMismatchError : public FormatError { public: using FormatError::FormatError; };

class DataError : public Error { public: using Error::Error; };

class DivergenceError : public Error
{
public:
    DivergenceError(std::size_t batch_index, const std::string& what)
        : Error("batch " + std::to_string(batch_index) + ": " + what)
        , batch_index_(batch_index)
    {}

    std::size_t batch_index() const noexcept { return batch_index_; }

private:
    std::size_t batch_index_;
};

} // namespace tfcmnn
