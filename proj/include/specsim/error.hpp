#pragma once

#include <stdexcept>
#include <string>

namespace specsim {

/// Invalid profile, layout, noise spec or experiment configuration.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace specsim
