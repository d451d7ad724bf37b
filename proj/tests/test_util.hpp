#pragma once

#include <filesystem>
#include <string>

#include "cnnbp/rng.hpp"
#include "cnnbp/trace.hpp"

namespace cnnbp::testing_util {

inline std::filesystem::path temp_dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(CNNBP_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Random records and randomly present metadata fields.
inline trace::Trace random_trace(Rng& rng, std::size_t max_records = 200) {
  trace::Trace t;
  const std::size_t n = rng.below(max_records + 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t ip = rng.next();
    if (rng.coin()) ip &= 0xffffff;
    t.records.push_back({ip, rng.coin()});
  }
  if (rng.coin()) {
    const char* names[] = {"", "w", "gcc input 2", "quote\"and\\slash", "x,y"};
    t.meta.workload_id = names[rng.below(5)];
  }
  if (rng.coin()) t.meta.generator_seed = rng.next();
  if (rng.coin()) t.meta.instruction_count = n + rng.below(1u << 30);
  return t;
}

}  // namespace cnnbp::testing_util
