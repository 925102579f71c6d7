#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace etma {

using Shape = std::vector<std::size_t>;

// Error taxonomy; the CLI maps these onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : Error {
    using Error::Error;
};
struct IndexError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct ContractError : Error {
    using Error::Error;
};
struct ParseError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

}  // namespace etma
