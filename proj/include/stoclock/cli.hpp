#pragma once

// Single command-line entry point for every module.
//
//   stoclock specfun eval --fn {hermite|psi|j|g|nu} --params k=v,... [--grid k=a:b:n]
//   stoclock ou {simulate|calibrate|validate-laplace} [--alpha --dt --paths --seed ...]
//   stoclock tree {solve|dual|verify} --file tree.json ...
//   stoclock logou {simulate|dominance|discriminate|bound} [--config cfg.json] ...
//
// Global flags: --seed, --threads, --format {json|csv}, --out DIR.
// STOCLOCK_OUT_DIR supplies the output directory when --out is absent.

#include "stoclock/logou_strategy.hpp"

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace stoclock::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitUsage = 2;

inline constexpr const char* kOutDirEnv = "STOCLOCK_OUT_DIR";

/// Invalid configuration file; line is 0 when it cannot be located.
class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& what, std::size_t line = 0)
        : std::runtime_error(what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Parses a strategy config document on top of `base`. Unknown keys and
/// wrong types raise ConfigError carrying the offending line.
StrategyConfig parse_strategy_config(const std::string& text, StrategyConfig base = {});

/// args excludes the program name. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace stoclock::cli
