#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dyntypo {

/// Base class for every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, std::size_t offset)
        : Error(what + " at byte " + std::to_string(offset)), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

/// Raised by tape primitives whose value or adjoint is undefined.
class NumericError : public Error {
public:
    NumericError(const std::string& what, std::size_t node)
        : Error(what + " (node " + std::to_string(node) + ")"), node_(node) {}

    std::size_t node() const noexcept { return node_; }

private:
    std::size_t node_;
};

class ProtocolError : public Error {
public:
    ProtocolError(const std::string& what, std::string raw = {})
        : Error(what), raw_(std::move(raw)) {}

    const std::string& raw_reply() const noexcept { return raw_; }

private:
    std::string raw_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace dyntypo
