#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace gilbo {

// Base for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public Error { public: using Error::Error; };
class SupportError : public Error { public: using Error::Error; };
class ShapeError : public Error { public: using Error::Error; };
class CacheError : public Error { public: using Error::Error; };
class ParseError : public Error { public: using Error::Error; };
class UnsupportedKindError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class BinningError : public Error { public: using Error::Error; };
class PartitionError : public Error { public: using Error::Error; };
class ValidationError : public Error { public: using Error::Error; };

// Raised when an optimizer sees a non-finite gradient or objective.
class DivergedError : public Error {
public:
    DivergedError(const std::string& what, std::int64_t step)
        : Error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::int64_t step() const noexcept { return step_; }

private:
    std::int64_t step_;
};

} // namespace gilbo
