#pragma once

// TOML configuration. A file may hold a [scenario] table (simulate), a
// [filter] table (fuse/calibrate) and an [evaluate] table. Every field is
// optional and defaults to the struct default; unknown keys are rejected so
// typos do not pass silently. Angles are radians.

#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "rtkvio/fusion.hpp"
#include "rtkvio/harness/evaluate.hpp"
#include "rtkvio/sim.hpp"

namespace rtkvio::harness {

struct Config {
  Scenario scenario;
  FilterConfig filter;
  EvaluateOptions evaluate;
};

// Throws kParse on syntax errors, wrong value types and unknown keys.
// Relative paths inside the file (filter.alignment_file) resolve against
// `base_dir`.
Config parse_config(std::string_view text, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path);

// Writes every field, so the output documents the defaults and parses back
// to an identical Config. filter.prealigned is not written.
void write_config(std::ostream& out, const Config& config);

}  // namespace rtkvio::harness
