#pragma once

#include <stdexcept>
#include <string>

namespace fedpower {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class StateError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class DegenerateError : public Error { public: using Error::Error; };
class DimensionError : public Error { public: using Error::Error; };
class FormatError : public Error { public: using Error::Error; };
class LengthError : public Error { public: using Error::Error; };
class ConsistencyError : public Error { public: using Error::Error; };
class DataError : public Error { public: using Error::Error; };
class DivergenceError : public Error { public: using Error::Error; };
class UnsupportedPolicyError : public Error { public: using Error::Error; };

} // namespace fedpower
